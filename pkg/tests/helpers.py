"""Shared test utilities: tiny datasets and a central-difference gradient checker."""
import numpy as np

from anticipate import decision, objective, pipeline, trainer
from anticipate.dataset import Dataset, FeatureSequence, GenConfig, ScenarioLabel, gen_synthetic

FD_STEP = 1e-5


def tiny_dataset(seed, n_frames=4, d_img=3, d_obj=2, K=2, n_pos=2, n_neg=1, ragged=False):
    g = GenConfig(n_pos=n_pos, n_neg=n_neg, n_frames=n_frames, fps=2.0, d_img=d_img, d_obj=d_obj,
                  n_objects=K, ramp_start=0, accident_min=1, accident_max=n_frames, cue_dims=1,
                  p_missing=0.3)
    ds = gen_synthetic(g, seed)
    if not ragged:
        return ds
    # cut sequences to different lengths so padding is exercised
    rng = np.random.default_rng([seed, 99])
    out = []
    for seq, lab in ds:
        m = int(rng.integers(max(lab.accident_frame, 1), n_frames + 1))
        out.append((FeatureSequence(seq.image_feats[:m], seq.object_feats[:m], seq.object_mask[:m], seq.fps), lab))
    return Dataset(out, ds.generation_seed)


def random_small_config(seed):
    """A random configuration within N <= 4, dims <= 4, K <= 2, including ablation switches."""
    rng = np.random.default_rng([seed, 12345])
    n = int(rng.integers(1, 5))
    di, do, K = (int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 3)))
    ds = tiny_dataset(seed, n, di, do, K, ragged=bool(rng.integers(2)))
    mc = pipeline.ModelConfig(
        d_img=di, d_obj=do, d_att=int(rng.integers(1, 5)), d_hidden=int(rng.integers(1, 5)),
        d_mlp=int(rng.integers(1, 5)), diffusion_steps=3, window=int(rng.integers(0, 4)),
        step_embedding=bool(rng.integers(2)),
        object_aware=bool(rng.random() < 0.8), time_weight=bool(rng.random() < 0.8),
        image_diffusion=bool(rng.random() < 0.8), object_diffusion=bool(rng.random() < 0.8),
    )
    lc = objective.LossConfig(aux_weight=0.3 * int(rng.integers(2)), neg_scale=float(rng.uniform(0.5, 2.0)))
    return ds, mc, lc, rng


def scaled_params(mc, rng, scale=2.0):
    params = pipeline.init_params(mc, rng)
    # larger than the default init so the nonlinearities are exercised
    return {m: {k: np.asarray(v * scale) for k, v in p.items()} for m, p in params.items()}


def finite_difference(params, batch, noise, actions, mc, lc, rc, fixed_adv, h=FD_STEP):
    fd = pipeline.zeros_like(params)
    for m in params:
        for k, v in params[m].items():
            for idx in np.ndindex(v.shape):
                old = v[idx]
                v[idx] = old + h
                lp = pipeline.total_loss_at(params, batch, noise, actions, mc, lc, rc, fixed_adv)
                v[idx] = old - h
                lm = pipeline.total_loss_at(params, batch, noise, actions, mc, lc, rc, fixed_adv)
                v[idx] = old
                fd[m][k][idx] = (lp - lm) / (2 * h)
    return fd


def rel_error(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    diff = np.linalg.norm(a - b)
    return diff / scale if scale > 1e-8 else diff


def gradient_check(seed, rc=decision.RewardConfig()):
    """Worst per-tensor relative error between analytic and central-difference gradients.

    Actions and the actor's advantage are frozen in the difference quotient,
    matching the stop-gradient of the analytic pass.
    """
    ds, mc, lc, rng = random_small_config(seed)
    params = scaled_params(mc, rng)
    batch = pipeline.collate(ds.sequences)
    rngs = [np.random.default_rng([seed, i]) for i in range(batch.size)]
    noise = pipeline.draw_noise(rngs, batch, mc.schedule, train=True)
    roll = pipeline.forward(params, batch, noise, mc, rc)
    grads, _ = pipeline.compute_gradients(roll, params, mc, lc)
    adv = roll.norm_rewards - roll.values
    fd = finite_difference(params, batch, noise, roll.actions, mc, lc, rc, adv)
    errs = {f"{m}.{k}": rel_error(grads[m][k], fd[m][k]) for m in params for k in params[m]}
    return max(errs.values()), errs


def label(positive, tau=0):
    return ScenarioLabel(positive, tau)


# a dataset and model small enough to train in well under a second
SMALL_GEN = GenConfig(n_pos=6, n_neg=6, n_frames=12, fps=4.0, d_img=4, d_obj=3, n_objects=2,
                     ramp_start=8, accident_min=9, accident_max=12, cue_dims=2)
SMALL_MODEL = pipeline.ModelConfig(d_img=4, d_obj=3, d_att=3, d_hidden=5, d_mlp=3, diffusion_steps=4, window=3)


def small_cfg(**kw):
    base = dict(epochs=3, batch_size=4, lr=1e-2, seed=3, model=SMALL_MODEL)
    return trainer.TrainConfig(**{**base, **kw})
