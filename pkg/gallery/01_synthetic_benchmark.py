"""
LACForest on a shifted Gaussian benchmark
=========================================

Four well separated clusters in two dimensions. Three of them are known
classes; the fourth shows up only in the unlabeled pool and at test time.
A plain Gini forest trained on the labeled data alone can never predict the
new class, while LACForest carves it out of the unlabeled pool.
"""

import numpy as np

from lacforest import benchmark_split, evaluate, train_gini_forest, train_lacforest

# labeled data holds classes 1..3, the unlabeled pool mixes in the new cluster
sp = benchmark_split(seed=0, theta=0.5)
print("labeled:", sp.S_l.X.shape, "unlabeled:", sp.S_u.X.shape, "test:", sp.S_test.X.shape)
print("share of the unlabeled pool from the new cluster:", sp.realized_theta_u)

# train both models
model = train_lacforest(sp.S_l, sp.S_u, theta=0.5, m=100, gamma=0.01, seed=0)
base = train_gini_forest(sp.S_l, m=100, seed=0)
print("pseudo-labeled rows:", len(model.pseudo_indices))

# compare on the test set; class kappa+1 is the augmented class
X, y = sp.S_test.X, sp.S_test.y
for name, clf in (("LACForest", model), ("Gini forest", base)):
    rep = evaluate(clf.predict(X), y, clf.augmented_score(X), clf.kappa)
    print(f"{name:12s} accuracy {rep.accuracy:.3f}  macro-F1 {rep.macro_f1:.3f}  AUC {rep.detection_auc}")

# the confusion matrix shows where the new class ends up
rep = evaluate(model.predict(X), y, model.augmented_score(X), model.kappa)
print(np.array(rep.confusion))
