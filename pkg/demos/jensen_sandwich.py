# %% [markdown]
# # Upper and lower Jensen minimizers around the plain one
#
# The Jensen energies add a source term -+ sigma^(p-4) u scaled against the
# gradient term. Their minimizers bracket the plain minimizer at threshold
# sigma^2 and pinch together as sigma goes to zero.

# %%
import numpy as np

from trunclap import analysis as an
from trunclap.harness import stability_rate_fit
from trunclap.mesh import build_mesh
from trunclap.solver import SolveOptions, continuation_solve

m = build_mesh(48, 48, (-1, -1, 1, 1))
f = m.interpolate(lambda x, y: 0.3 * (np.abs(x) ** (4 / 3) - np.abs(y) ** (4 / 3)))
opts = SolveOptions(grad_tol=1e-10)
sched = [4, 8, 16, 32]

# %%
sigmas, gaps = [0.4, 0.2, 0.1, 0.05], []
for s in sigmas:
    up = continuation_solve(m, f, sched, s, "jensen_upper", opts)[-1].solution
    lo = continuation_solve(m, f, sched, s, "jensen_lower", opts)[-1].solution
    mid = continuation_solve(m, f, sched, s * s, "plain", opts)[-1].solution
    sw = an.sandwich_check(lo, mid, up, s * s, slack=10 * m.h)
    gaps.append(an.stability_gap(up, lo))
    print(f"sigma={s:5.2f}  sandwich={sw.passed}  worst excess={sw.max_violation:.2e}  gap={gaps[-1]:.3e}")

# %% [markdown]
# A log-log fit of the gap against sigma. A slope of at least one matches a
# linear bound gap <= C' sigma diam.

# %%
fit = stability_rate_fit(sigmas, gaps, diameter=2 * np.sqrt(2))
print(f"slope={fit.slope:.2f}  r2={fit.r2:.3f}  C'={fit.c_prime:.3g}")
