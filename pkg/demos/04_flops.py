"""Where does inference compute go, and what do fewer steps and blocks buy?

Counts floating-point operations of the three presets with integer rules
(2 FLOPs per multiply-add). The diffusion module runs once per sampling step,
so cutting 200 steps to 2 removes almost all of its cost; the rest of the
saving comes from a shallower trunk.
"""

from fewstep.flops import PRESETS, WorkloadShape, flops_curve, flops_estimate

w = WorkloadShape(n_tokens=384, n_msa_rows=2048, n_atoms=8832)
full = flops_estimate(PRESETS["protenix"], w)["total"]
print(f"{'preset':>9} {'steps':>5} {'MSA':>10} {'pairformer':>11} {'diffusion':>10} {'total':>10} {'vs full':>8}")
for name, arch in PRESETS.items():
    e = flops_estimate(arch, w)
    tf = lambda v: f"{v / 1e12:.1f}T"
    print(f"{name:>9} {arch.n_diffusion_steps:>5} {tf(e['msa']):>10} {tf(e['pairformer']):>11} "
          f"{tf(e['diffusion']):>10} {tf(e['total']):>10} {e['total'] / full:>8.3f}")

print("\ntotal TFLOPs against token count")
grid = [256, 512, 1024, 2048]
print(f"{'tokens':>7}" + "".join(f"{n:>10}" for n in PRESETS))
curves = {n: flops_curve(a, "tokens", grid, w) for n, a in PRESETS.items()}
for i, t in enumerate(grid):
    print(f"{t:>7}" + "".join(f"{curves[n][i]['total'] / 1e12:>10.1f}" for n in PRESETS))
