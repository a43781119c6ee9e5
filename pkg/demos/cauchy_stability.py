"""
Stability of a forest trained on heavy-tailed data
===================================================

Train on 3000 Cauchy-response points, then compare the full forest with
each out-of-bag predictor on 1000 held-out points.
"""

import numpy as np
from scipy.stats import ks_2samp

from rfstab import ForestConfig, fit, predict, synthetic_cauchy
from rfstab.intervals import oob_residuals
from rfstab.stability import difference_matrix, estimate_stability, exceedance_fraction

data = synthetic_cauchy(4000, seed=1)
train = data.subset(np.arange(3000))
test = data.subset(np.arange(3000, 4000))
print(f"response quartiles: {np.quantile(data.response, [0.25, 0.5, 0.75]).round(3)}")
print(f"largest |Y|: {np.abs(data.response).max():.1f}")

forest = fit(train, ForestConfig(n_trees=1000, seed=1))

# one row per training point, one column per test point
diffs = difference_matrix(forest, train, test.features)
est = estimate_stability(diffs, nu_hat=0.05)
print(f"eps_hat (max over rows of the 95% quantile): {est.eps_hat:.3f}")
print(f"median row quantile: {np.median(est.per_index_quantiles):.3f}")
print(f"fraction of pairs above eps_hat: {exceedance_fraction(diffs, est.eps_hat):.4f}")

# out-of-bag errors should look like genuine test errors
oob_err = oob_residuals(forest, train).values
test_err = np.abs(test.response - predict(forest, test.features))
print(f"median OOB error {np.median(oob_err):.3f}, median test error {np.median(test_err):.3f}")
print(f"two-sample KS statistic: {ks_2samp(oob_err, test_err).statistic:.3f}")
