"""
Robustness to corrupted features
================================

Re-evaluate one trained checkpoint under Gaussian noise of growing sigma
and under impulse noise on a growing fraction of entries.
"""

from anticipate import GenConfig, ModelConfig, TrainConfig, gen_synthetic, train
from anticipate.sweeps import sweep_noise

data = gen_synthetic(GenConfig(n_pos=15, n_neg=15, n_frames=30, fps=10.0, d_img=6, d_obj=6, n_objects=2,
                               cue_dims=3, ramp_start=20, accident_min=22, accident_max=28), seed=2)
cfg = TrainConfig(epochs=6, batch_size=6, lr=5e-3,
                  model=ModelConfig(d_img=6, d_obj=6, d_att=6, d_hidden=8, d_mlp=6))
ck = train(data, cfg).final

tables = sweep_noise(ck, data)
for name, table in tables.items():
    print(name)
    print(table.to_csv())
