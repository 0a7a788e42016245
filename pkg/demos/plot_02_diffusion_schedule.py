"""
Forward diffusion and residual enhancement
==========================================

Features are noised with a linear beta schedule and passed through a small
denoiser; the output is added back to the clean features with weight 0.15.
"""

import numpy as np

from anticipate import diffusion

sched = diffusion.build_schedule(10, 0.001, 0.02)
print("betas     ", np.round(sched.betas, 4))
print("alpha_bars", np.round(sched.alpha_bars, 4))

# the forward process keeps unit variance for standardized inputs
rng = np.random.default_rng(0)
F = rng.standard_normal(20_000)
for t in (0, 4, 9):
    noisy = diffusion.forward_diffuse(F, t, sched, rng.standard_normal(F.size))
    print(f"t={t}: var {noisy.var():.3f}, corr with clean {np.corrcoef(F, noisy)[0, 1]:.3f}")

# with untrained weights the enhancement is a small perturbation of F
params = diffusion.init_denoiser(rng, 8)
x = rng.standard_normal(8)
out = diffusion.enhance(x, sched.eval_step, sched, params, rng=np.random.default_rng(1))
print("enhanced - clean:", np.round(out - x, 3))
