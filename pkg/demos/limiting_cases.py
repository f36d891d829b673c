"""Two limits of the temporal chain, checked numerically.

alpha = 0, beta = 1 makes every column independent, so solving the full
problem equals solving each column on its own. alpha = 1, beta = 0 makes
all columns share one latent field (joint sparsity).
"""

import numpy as np

from stss_mmv import KernelSpec, MmvProblem, PriorConfig, SolverOptions, sample_problem, solve

kern = KernelSpec("squared_exponential", 2.0, 2.0)
opts = SolverOptions(max_iters=40, tol=0.0)

cfg = PriorConfig(8, 4, -0.4, kern, alpha=0.0, beta=1.0)
prob, _ = sample_problem(cfg, 5, rng_seed=3, max_resample=50)
full = solve(prob, cfg, opts).x_mean
one = PriorConfig(8, 1, -0.4, kern, alpha=0.0, beta=1.0)
cols = [solve(MmvProblem(prob.A, prob.Y[:, t:t + 1], prob.noise_var), one, opts).x_mean
        for t in range(cfg.T)]
print("independent columns, max difference:", np.abs(full - np.hstack(cols)).max())

# joint sparsity: one latent field, so activation probabilities agree across columns
cfg = PriorConfig(8, 4, -0.4, kern, alpha=1.0, beta=0.0)
prob, truth = sample_problem(cfg, 5, rng_seed=3, max_resample=50)
post = solve(prob, cfg, opts)
print("latent field shared in truth:", bool((truth.Gamma == truth.Gamma[:, :1]).all()))
print("posterior gamma spread across columns:",
      float(np.ptp(post.gamma_mean, axis=1).max()))
