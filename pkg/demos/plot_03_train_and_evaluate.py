"""
Training and evaluating a small model
=====================================

Train for a few epochs on a small synthetic set, then report AP and mTTA
on the validation split and draw the probability timelines.
"""

from dataclasses import replace

from anticipate import GenConfig, ModelConfig, TrainConfig, gen_synthetic, train, evaluate
from anticipate import metrics, plotting

data = gen_synthetic(GenConfig(n_pos=20, n_neg=20, n_frames=40, fps=10.0, d_img=8, d_obj=8, n_objects=3,
                               cue_dims=3, ramp_start=25, accident_min=30, accident_max=38), seed=1)
model = ModelConfig(d_img=8, d_obj=8, d_att=8, d_hidden=12, d_mlp=8, window=10)
cfg = TrainConfig(epochs=8, batch_size=8, lr=5e-3, model=model)

result = train(data, cfg, on_epoch=lambda r: print(
    f"epoch {r['epoch']}: L_total {r['L_total']:.3f}  val AP {r['val_AP']:.3f}  val mTTA {r['val_mTTA']:.2f}s"))

# the frame-level baseline differs only in the history window
baseline = train(data, replace(cfg, model=replace(model, window=0)))

val = result.final.split["val"]
ev = evaluate(result.final.params, cfg, data, val)
ev0 = evaluate(baseline.final.params, baseline.final.config, data, val)
print("W=10 alarms:", metrics.alarm_stats(ev.records))
print("W=0  alarms:", metrics.alarm_stats(ev0.records))

panels = []
for i, a, b in list(zip(val, ev.records, ev0.records))[:3]:
    panels.append((f"video {i}", plotting.panel_spec(a.probs, a.fps, a.accident_frame),
                   plotting.panel_spec(b.probs, b.fps, b.accident_frame)))
plotting.plot_comparison(panels, "timelines.svg")
print("wrote timelines.svg")
