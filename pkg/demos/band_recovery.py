"""Fit a band-1 Gaussian graphical model with missing cells.

Run with ``python3 demos/band_recovery.py``. Takes about a minute.
"""
# %%
import numpy as np

from sbgraph import ModelSpec, NutsConfig, SBartlettParams, run_chain, summarize
from sbgraph.linalg import pattern_of
from sbgraph.mcmc import format_interval, predictive_draws
from sbgraph.metrics import kl_discrepancy, mean_crps, sensitivity, specificity
from sbgraph.sim import SimScenario, banded_truth, simulate_data

# %% Truth and data: n = 100 rows, 10% of cells hidden.
scen = SimScenario(p=8, n=100, pmiss=0.1)
truth = banded_truth(scen.p, 1)
data = simulate_data(truth, scen, np.random.default_rng(1))
print("hidden cells:", int(data.mask.sum()))

# %% Posterior sampling: NUTS on B, Gibbs on Z, conditional imputation.
model = ModelSpec("gaussian", data.y_observed, 0.5, SBartlettParams.identity(scen.p), mask=data.mask)
recs = run_chain(model, NutsConfig(), 1500, 750, seed=2)
summ = summarize(recs)

# %% Edge inclusion probabilities and scores against the truth.
np.set_printoptions(precision=2, suppress=True)
print("P(edge | y):\n", summ.z_prob)
z_true = pattern_of(truth)
# sensitivity scores recovered zeros; specificity scores recovered edges
sens, spec = sensitivity(z_true, summ.z_hat), specificity(z_true, summ.z_hat)
print("zeros recovered %.2f, edges recovered %.2f" % (sens, spec))
print("KL discrepancy %.3f" % kl_discrepancy(summ.lambda_hat, truth))
print("edges:", format_interval(summ.edge_mean, summ.edge_interval), "true", z_true.edge_count)
print("mean CRPS of hidden cells %.3f" % mean_crps(predictive_draws(recs), data.held_out))
