# %% [markdown]
# # Saccades and random problems
#
# Two smaller inverse problems: the effort weight of a 20 degree saccade,
# and the per-direction effort weights of a randomly generated linear
# system.  Run with `python demos/saccade_and_random.py` (a few minutes).

# %%
import numpy as np

from sdnioc import (RandomProblemParams, fit_mle, random_problem, rollout_batch,
                    saccade_model, solve_gains)
from sdnioc.metrics import log_errors

# %% [markdown]
# ## Saccade
# Eye angle in degrees, 1.25 ms steps, from -10 to +10 degrees.

# %%
for r in (1e-4, 1e-3, 1e-2):
    model, cost, spec = saccade_model(r=r)
    gains = solve_gains(model, cost).gains
    ds = rollout_batch(model, gains, 20, seed=0)
    peak = np.abs(ds.states[:, :, 1]).max(axis=1).mean()
    fit = fit_mle(spec, ds, model, cost, n_starts=2, seed=0)
    print(f"r = {r:.0e}: peak speed {peak:6.0f} deg/s, final angle "
          f"{ds.states[:, -1, 0].mean():5.2f} deg, estimate {fit.theta_mle[0]:.3g}")

# %% [markdown]
# ## Random problem
# Four physical dimensions plus a target coordinate, two controls, unit
# correlation-matrix noise and signal-dependent noise in both dynamics and
# observations.  Errors of a few tenths in log space are typical at 100
# trials: the data carry limited information about the effort weights.

# %%
r_true = (0.02, 0.05)
model, cost, spec = random_problem(RandomProblemParams(r_vec=r_true, seed=3))
ds = rollout_batch(model, solve_gains(model, cost).gains, 100, seed=0)
fit = fit_mle(spec, ds, model, cost, n_starts=3, seed=0)
for name, t, e, err in zip(spec.names, r_true, fit.theta_mle,
                           log_errors(r_true, fit.theta_mle)):
    print(f"{name}: true {t:.3g}  estimate {e:.3g}  log error {err:+.3f}")
