"""Draws from the S-Bartlett prior.

Run with ``python3 demos/prior_tour.py``. Takes a few seconds.
"""
# %%
import numpy as np

from sbgraph import SBartlettParams, SparsityPattern, chol_product, sample_prior

rng = np.random.default_rng(0)

# %% A banded pattern: every draw of Lambda is exactly zero off the band.
p = 6
z = SparsityPattern.band(p, 1)
prior = SBartlettParams.identity(p, nu=3.0)
lam = chol_product(sample_prior(prior, z, rng))
np.set_printoptions(precision=3, suppress=True)
print("one banded draw:\n", lam)
print("entries outside the band:", np.unique(lam[~z.z]))

# %% The full pattern recovers a Wishart law.
# With the per-column shape (nu + z_k) / 2 the degrees of freedom are nu + p - 1.
full = SparsityPattern.full(p)
draws = chol_product(sample_prior(prior, full, rng, size=100_000))
print("mean of Lambda (full pattern):\n", draws.mean(axis=0))
print("expected:", prior.nu + p - 1, "on the diagonal")

# %% Under Z = I the diagonal of Q is chi-square with nu degrees of freedom.
q = sample_prior(prior, SparsityPattern.identity(p), rng, size=100_000)
print("mean q_kk^2 under Z = I:", (q[:, np.arange(p), np.arange(p)] ** 2).mean(axis=0))

# %% Sparse random patterns are heavy-tailed: forced entries compound.
conds = []
for _ in range(200):
    zr = SparsityPattern.from_lower_flags(15, rng.random(105) < 0.3)
    lr = chol_product(sample_prior(SBartlettParams.identity(15), zr, rng))
    conds.append(np.linalg.cond(lr))
print("condition numbers at p = 15, 30%% edges: median %.2g, max %.2g" % (np.median(conds), np.max(conds)))
