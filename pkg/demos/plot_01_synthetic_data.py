"""
Synthetic feature sequences
===========================

Each sequence is a stream of per-frame image and object features. Positive
sequences carry a cue that ramps up before the accident frame on a few
feature directions; negatives are background noise only.
"""

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from anticipate import GenConfig, gen_synthetic
from anticipate.dataset import cue_direction

# a small version of the default preset
cfg = GenConfig(n_pos=4, n_neg=4, n_frames=100, fps=20.0, d_img=16, d_obj=16, n_objects=3, cue_dims=4)
data = gen_synthetic(cfg, seed=0)
print(len(data), "sequences,", "dims (img, obj, K) =", data.dims)

# project every frame onto the cue direction of the image stream
idx, img_sign, _ = cue_direction(cfg, 0)
fig, ax = plt.subplots(figsize=(7, 3))
for seq, label in data:
    proj = (seq.image_feats[:, idx] * img_sign).mean(axis=1)
    t = np.arange(seq.n_frames) / seq.fps
    ax.plot(t, proj, color="tab:red" if label.positive else "tab:grey", lw=1)
    if label.positive:
        ax.axvline(label.accident_frame / seq.fps, color="tab:red", ls=":", lw=0.6)
ax.set_xlabel("time (s)")
ax.set_ylabel("cue projection")
fig.tight_layout()
fig.savefig("synthetic_data.png", dpi=80)
print("wrote synthetic_data.png")
