# %% [markdown]
# # Reaching: forward model, likelihood, fit, belief tracking
#
# A 1-D point-to-point reach with a two-stage muscle filter and
# control-dependent motor noise.  We simulate a synthetic subject, recover
# its three cost weights (r, v, f) by maximum likelihood and then track what
# the subject believed about its own velocity from position data alone.
#
# Run with `python demos/reaching_walkthrough.py` (about a minute).

# %%
import numpy as np

from sdnioc import (ReachingParams, apply_params, fit_mle, log_likelihood_dataset, position_only,
                    reaching_model, rollout_batch, solve_gains, track_beliefs)
from sdnioc.metrics import log_errors

true = ReachingParams(r=1e-5, v=0.2, f=0.02)
model, cost, spec = reaching_model(true)
res = solve_gains(model, cost)
print(f"state dim {model.m}, horizon {model.T}, solver iterations {res.iters_used}, "
      f"expected cost {res.expected_cost:.4g}")

# %% [markdown]
# ## Simulated behaviour
# Mean position and speed profile across 100 trials; the speed profile is
# bell shaped and the reach ends on the 10 cm target.

# %%
ds = rollout_batch(model, res.gains, 100, seed=0)
pos, vel = ds.states[:, :, 0], ds.states[:, :, 1]
t_ms = np.arange(model.T) * true.dt * 1e3
for t in range(0, model.T, 5):
    print(f"t = {t_ms[t]:5.0f} ms   position {pos[:, t].mean():.4f} m   "
          f"speed {vel[:, t].mean():.3f} m/s")
print(f"endpoint sd {pos[:, -1].std() * 1e3:.2f} mm")

# %% [markdown]
# ## Likelihood surface
# The approximate log-likelihood prefers the generating parameters over a
# tenfold change in any one of them.

# %%
def loglik(theta):
    m2, c2 = apply_params(spec, theta, model, cost)
    return log_likelihood_dataset(m2, solve_gains(m2, c2).gains, ds)


theta0 = np.array([true.r, true.v, true.f])
print(f"log-likelihood at truth {loglik(theta0):.2f}")
for i, name in enumerate(spec.names):
    th = theta0.copy()
    th[i] *= 10
    print(f"  {name} x10 -> {loglik(th):.2f}")

# %% [markdown]
# ## Maximum likelihood
# Two random starts keep the demo short; the benchmarks use ten.

# %%
fit = fit_mle(spec, ds, model, cost, n_starts=2, seed=0)
for name, t, e, err in zip(spec.names, theta0, fit.theta_mle,
                           log_errors(theta0, fit.theta_mle)):
    print(f"{name}: true {t:.3g}  estimate {e:.3g}  log error {err:+.3f}")

# %% [markdown]
# ## Belief tracking from positions only
# The experimenter sees only hand position; the tracker returns a Gaussian
# over the subject's internal estimate at every step.

# %%
exp = position_only(model)
ds_po = rollout_batch(model, res.gains, 5, seed=1, exp_model=exp)
means, covs = track_beliefs(model, res.gains, ds_po.observed_only(), exp)
m = model.m
trial = 0
for t in range(0, model.T, 5):
    mu, sd = means[trial, t, m + 1], np.sqrt(covs[trial, t, m + 1, m + 1])
    print(f"t = {t_ms[t]:5.0f} ms   believed speed {mu:.3f} +- {2 * sd:.3f}   "
          f"actual belief {ds_po.estimates[trial, t, 1]:.3f}")
