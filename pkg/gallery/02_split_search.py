"""
Augmented Gini and the best split
=================================

A one dimensional node: known labeled rows sit on the left, and the
unlabeled pool has an extra bump on the right. The augmented Gini impurity
estimates how much of that bump is new, and the best split lands in the gap.
The exhaustive oracle confirms the choice.
"""

import numpy as np

from lacforest import NodeStats, augmented_gini, best_split, vartheta_vector
from lacforest.oracle import exhaustive_best_split

# estimated class distribution of a single node
stats = NodeStats(n_l=100, n_u=100, n_node_l=10, n_node_u=40, class_counts=(6, 4), theta=0.5)
print("vartheta:", vartheta_vector(stats), "impurity:", augmented_gini(stats))

# labeled rows mostly near the origin, a few far right so both children are feasible
X_l = np.concatenate([np.linspace(0.1, 0.2, 20), np.full(10, 0.95)])[:, None]
y_l = np.ones(30, dtype=int)
X_u = np.array([[0.1], [0.2], [0.8], [0.9]])

dec = best_split(X_l, y_l, X_u, features=[0], gamma=0.3, n_l=30, n_u=4, theta=0.5, kappa=1)
print("split: feature", dec.feature, "threshold", dec.threshold, "reduction", round(dec.reduction, 4))
print("oracle agrees:", dec == exhaustive_best_split(X_l, y_l, X_u, [0], 0.3, 30, 4, 0.5, 1))

# a larger gamma asks for more rows on each side and can rule every split out
print("gamma 0.45:", best_split(X_l, y_l, X_u, [0], 0.45, 30, 4, 0.5, 1))
