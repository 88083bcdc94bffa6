"""
Exact intervals for reference confusion matrices
================================================

Recompute sensitivity, specificity and accuracy with Clopper-Pearson 95%
intervals from the four confusion matrices of the clinical comparison.
"""
from skelnas.stats import REFERENCE_TABLE, clopper_pearson, comparison_table

print(comparison_table(REFERENCE_TABLE).render())

# the GMA specificity interval sits right on a rounding boundary
lo, hi = clopper_pearson(102, 115)
print(f"\nGMA specificity 102/115: interval {100 * lo:.4f} - {100 * hi:.4f}")
