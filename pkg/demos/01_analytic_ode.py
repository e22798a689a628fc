"""How close does a plain Euler probability-flow sampler get to the exact answer?

For a single isotropic Gaussian prior N(0, a^2 I) the posterior-mean denoiser is
linear, and the probability-flow ODE carries a starting point of norm |x| at
sigma_max to |x| * a / sqrt(a^2 + sigma_max^2). With a = 1 and sigma_max = 16
that is 1/sqrt(257). The Euler sampler approaches this first-order: once the steps are fine enough, doubling
the step count halves the gap.
"""

import math

import numpy as np

from fewstep import GMMDenoiser, NoiseLevelParams, RngStream, ode_config, ode_sample

noise = NoiseLevelParams(sigma_data=16.0, sigma_max=16.0, sigma_min=0.0)
D = GMMDenoiser([1.0], [[0.0, 0.0, 0.0]], 1.0, noise)
exact = 1 / math.sqrt(257)

print(f"exact contraction ratio: {exact:.6f}")
print(f"{'steps':>6} {'ratio':>10} {'gap':>10} {'gap ratio':>10}")
prev = None
for n in (2 ** k for k in range(11)):
    tr = ode_sample(D, None, ode_config(n, noise=noise, augmentation=False), 64, RngStream(0))
    r = np.linalg.norm(tr.final.coords) / np.linalg.norm(tr.records[0].x_t)
    gap = abs(r - exact)
    print(f"{n:>6} {r:>10.6f} {gap:>10.2e} {'' if prev is None else f'{prev / gap:>10.2f}'}")
    prev = gap

# Two steps already land in the right basin: the posterior mean does most of the work.
