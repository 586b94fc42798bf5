"""
How fast does the estimated augmented share converge?
=====================================================

Draw samples of growing size from a population where the true share of the
augmented class in a region is known, and watch the median absolute error
of the estimate shrink. Quadrupling n should roughly halve it.
"""

from lacforest.oracle import (
    SoftTreePopulation,
    lemma_population,
    soft_vartheta_convergence_experiment,
    vartheta_convergence_experiment,
)

grid = (100, 400, 1600, 6400)
pop = lemma_population()
print("true share in region:", pop.true_theta_region(), "region mass:", pop.region_mass())

hard = vartheta_convergence_experiment(pop, grid, trials=200, seed=0)
soft = soft_vartheta_convergence_experiment(SoftTreePopulation(), grid, trials=200, seed=0)

for name, curve in (("hard", hard), ("soft", soft)):
    print(name)
    for n, med, q95 in curve.rows:
        print(f"  n={n:5d}  median {med:.4f}  q95 {q95:.4f}")
    print("  ratios:", [round(r, 2) for r in curve.ratios()])
