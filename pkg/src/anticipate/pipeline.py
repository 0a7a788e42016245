"""End-to-end model: batched rollout over episodes and exact gradients.

Per frame the pipeline runs attention over objects, residual diffusion
enhancement of the image and object features, input fusion and a GRU step.
The probability and time-weight heads read every hidden state; the policy and
value heads read the running mean of the last ``window`` hidden states.

All episodes in a batch are processed together, padded to the longest one.
Gradients are computed by reverse accumulation through the unrolled
recurrence with the sampled actions and the diffusion noise held fixed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import attention, decision, diffusion, objective, temporal
from .errors import ConfigError, NumericError, ShapeError


@dataclass(frozen=True)
class ModelConfig:
    d_img: int = 64
    d_obj: int = 64
    d_att: int = 32
    d_hidden: int = 64
    d_mlp: int = 32
    n_actions: int = 2
    diffusion_steps: int = 10
    beta_start: float = diffusion.DEFAULT_BETA_START
    beta_end: float = diffusion.DEFAULT_BETA_END
    fusion_lambda: float = diffusion.DEFAULT_LAMBDA
    step_embedding: bool = False
    window: int = 10
    object_aware: bool = True
    time_weight: bool = True
    image_diffusion: bool = True
    object_diffusion: bool = True

    def validate(self) -> None:
        for f in ("d_img", "d_obj", "d_att", "d_hidden", "d_mlp"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be >= 1")
        if self.n_actions < 2:
            raise ConfigError("n_actions must be >= 2")
        if self.window < 0:
            raise ConfigError("history window must be >= 0")
        if self.fusion_lambda < 0:
            raise ConfigError("fusion_lambda must be >= 0")
        diffusion.build_schedule(self.diffusion_steps, self.beta_start, self.beta_end)

    @property
    def schedule(self) -> diffusion.DiffusionSchedule:
        return diffusion.build_schedule(self.diffusion_steps, self.beta_start, self.beta_end)


MODULES = ("attention", "den_img", "den_obj", "gru", "prob", "time", "ac")


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict:
    cfg.validate()
    steps = cfg.diffusion_steps if cfg.step_embedding else 0
    return {
        "attention": attention.init_attention(rng, cfg.d_hidden, cfg.d_obj, cfg.d_att),
        "den_img": diffusion.init_denoiser(rng, cfg.d_img, steps),
        "den_obj": diffusion.init_denoiser(rng, cfg.d_obj, steps),
        "gru": temporal.init_gru(rng, cfg.d_img + cfg.d_obj, cfg.d_hidden),
        "prob": temporal.init_prob_head(rng, cfg.d_hidden, cfg.d_mlp),
        "time": temporal.init_time_weight(rng, cfg.d_hidden),
        "ac": decision.init_actor_critic(rng, cfg.d_hidden, cfg.n_actions),
    }


def flatten(params: dict) -> dict:
    return {f"{m}.{k}": v for m in params for k, v in params[m].items()}


def unflatten(flat: dict) -> dict:
    out: dict = {}
    for name, v in flat.items():
        m, k = name.split(".", 1)
        out.setdefault(m, {})[k] = v
    return out


def zeros_like(params: dict) -> dict:
    return {m: {k: np.zeros_like(v) for k, v in p.items()} for m, p in params.items()}


def copy_params(params: dict) -> dict:
    return {m: {k: v.copy() for k, v in p.items()} for m, p in params.items()}


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    img: np.ndarray        # (B, N, d_img)
    obj: np.ndarray        # (B, N, K, d_obj)
    mask: np.ndarray       # (B, N, K)
    valid: np.ndarray      # (B, N)
    positive: np.ndarray   # (B,)
    tau: np.ndarray        # (B,)
    fps: np.ndarray        # (B,)

    @property
    def size(self) -> int:
        return self.img.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return self.valid.sum(axis=1)


def collate(pairs) -> Batch:
    pairs = list(pairs)
    n = max(seq.n_frames for seq, _ in pairs)
    s0 = pairs[0][0]
    B, K, di, do = len(pairs), s0.n_objects, s0.d_img, s0.d_obj
    img = np.zeros((B, n, di))
    obj = np.zeros((B, n, K, do))
    mask = np.ones((B, n, K), bool)
    valid = np.zeros((B, n), bool)
    for b, (seq, _) in enumerate(pairs):
        if (seq.d_img, seq.d_obj, seq.n_objects) != (di, do, K):
            raise ShapeError(f"episode {b} has dims {(seq.d_img, seq.d_obj, seq.n_objects)}, expected {(di, do, K)}")
        m = seq.n_frames
        img[b, :m] = seq.image_feats
        obj[b, :m] = seq.object_feats
        mask[b, :m] = seq.object_mask
        valid[b, :m] = True
    return Batch(
        img, obj, mask, valid,
        np.array([lab.positive for _, lab in pairs]),
        np.array([lab.accident_frame for _, lab in pairs]),
        np.array([seq.fps for seq, _ in pairs], dtype=np.float64),
    )


@dataclass
class Noise:
    t_diff: np.ndarray     # (B, N) diffusion step per frame
    eps_img: np.ndarray    # (B, N, d_img)
    eps_obj: np.ndarray    # (B, N, K, d_obj)
    u: np.ndarray          # (B, N) uniforms for action sampling


def draw_noise(rngs, batch: Batch, schedule: diffusion.DiffusionSchedule, train: bool = True) -> Noise:
    """One independent stream per episode, consumed only for its own frames,
    so an episode's noise does not depend on what it is batched with."""
    B, n, K, do = batch.obj.shape
    di = batch.img.shape[2]
    t_diff = np.empty((B, n), dtype=np.int64)
    eps_img = np.empty((B, n, di))
    eps_obj = np.empty((B, n, K, do))
    u = np.empty((B, n))
    for b, rng in enumerate(rngs):
        m = int(batch.lengths[b])
        if train:
            t_diff[b, :m] = rng.integers(schedule.steps, size=m)
        else:
            t_diff[b, :m] = schedule.eval_step
        eps_img[b, :m] = rng.standard_normal((m, di))
        eps_obj[b, :m] = rng.standard_normal((m, K, do))
        u[b, :m] = rng.random(m)
        t_diff[b, m:] = 0
        eps_img[b, m:] = 0.0
        eps_obj[b, m:] = 0.0
        u[b, m:] = 0.0
    return Noise(t_diff, eps_img, eps_obj, u)


# ---------------------------------------------------------------- forward

@dataclass
class Rollout:
    batch: Batch
    noise: Noise
    probs: np.ndarray
    omega: np.ndarray
    hidden: np.ndarray
    h_bar: np.ndarray
    log_pi: np.ndarray     # (B, N, A)
    actions: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    norm_rewards: np.ndarray
    entropy: np.ndarray
    alphas: np.ndarray     # attention weights (B, N, K)
    caches: dict = field(repr=False, default_factory=dict)

    @property
    def log_probs(self) -> np.ndarray:
        return np.take_along_axis(self.log_pi, self.actions[..., None], axis=-1)[..., 0]

    def traces(self) -> list:
        out = []
        for b in range(self.batch.size):
            m = int(self.batch.lengths[b])
            out.append(objective.EpisodeTrace(
                probs=self.probs[b, :m].copy(),
                omega=self.omega[b, :m].copy(),
                log_probs=self.log_probs[b, :m].copy(),
                values=self.values[b, :m].copy(),
                rewards=self.rewards[b, :m].copy(),
                norm_rewards=self.norm_rewards[b, :m].copy(),
                entropy=self.entropy[b, :m].copy(),
                positive=bool(self.batch.positive[b]),
                accident_frame=int(self.batch.tau[b]),
                fps=float(self.batch.fps[b]),
                actions=self.actions[b, :m].copy(),
                hidden=self.hidden[b, :m].copy(),
                h_bar=self.h_bar[b, :m].copy(),
                extras={"attention": self.alphas[b, :m].copy()},
            ))
        return out


def forward(params: dict, batch: Batch, noise: Noise, cfg: ModelConfig,
            reward_cfg: decision.RewardConfig = decision.RewardConfig(),
            actions: Optional[np.ndarray] = None) -> Rollout:
    """Run the pipeline over a batch; ``actions`` replays fixed actions instead of sampling."""
    schedule = cfg.schedule
    B, n, K, do = batch.obj.shape
    di = batch.img.shape[2]
    if (di, do) != (cfg.d_img, cfg.d_obj):
        raise ShapeError(f"data dims (d_img, d_obj)={(di, do)} but model expects {(cfg.d_img, cfg.d_obj)}")
    H = np.zeros((B, n, cfg.d_hidden))
    alphas = np.zeros((B, n, K))
    steps = []
    h_prev = np.zeros((B, cfg.d_hidden))
    for t in range(n):
        c = {}
        obj_t, mask_t, td = batch.obj[:, t], batch.mask[:, t], noise.t_diff[:, t]
        if cfg.object_aware:
            alpha, F_bar, c["att"] = attention.attend_forward(obj_t, mask_t, h_prev, params["attention"])
        else:
            alpha = attention.uniform_weights(mask_t)
            F_bar = alpha[..., None] * obj_t
        alphas[:, t] = alpha
        c["F_bar"] = F_bar
        if cfg.image_diffusion:
            img_enh, c["img"] = diffusion.enhance_forward(
                batch.img[:, t], td, noise.eps_img[:, t], schedule, params["den_img"], cfg.fusion_lambda)
        else:
            img_enh = batch.img[:, t]
        if cfg.object_diffusion:
            obj_enh, c["obj"] = diffusion.enhance_forward(
                F_bar, td, noise.eps_obj[:, t], schedule, params["den_obj"], cfg.fusion_lambda)
        else:
            obj_enh = F_bar
        x, c["fuse"] = temporal.fuse_forward(img_enh, obj_enh, mask_t)
        h_prev, c["gru"] = temporal.gru_forward(x, h_prev, params["gru"])
        H[:, t] = h_prev
        steps.append(c)

    probs, prob_cache = temporal.prob_forward(H, params["prob"])
    if cfg.time_weight:
        omega, time_cache = temporal.time_weight_forward(H, params["time"])
    else:
        omega, time_cache = np.ones((B, n)), None
    h_bar = temporal.window_means(H, cfg.window)
    log_pi = decision.log_softmax(decision.policy_logits(h_bar, params["ac"]))
    values = decision.value(h_bar, params["ac"])
    if actions is None:
        actions = decision.pick_action(np.exp(log_pi), noise.u)
    actions = np.asarray(actions, dtype=np.int64)
    frames = np.arange(n)
    y = np.stack([
        decision.frame_labels(n, bool(batch.positive[b]), int(batch.tau[b]), reward_cfg) for b in range(B)
    ])
    rewards = np.where(batch.valid, decision.reward(actions, y, frames[None, :], reward_cfg), 0.0)
    norm = decision.normalize_rewards(rewards, reward_cfg.eps, where=batch.valid)
    ent = decision.entropy(log_pi)
    return Rollout(
        batch=batch, noise=noise, probs=probs, omega=omega, hidden=H, h_bar=h_bar,
        log_pi=log_pi, actions=actions, values=values, rewards=rewards, norm_rewards=norm,
        entropy=ent, alphas=alphas,
        caches={"steps": steps, "prob": prob_cache, "time": time_cache},
    )


def rollout(seq, label, params, cfg: ModelConfig, rng: np.random.Generator,
            reward_cfg: decision.RewardConfig = decision.RewardConfig(), train: bool = False):
    """Single-episode rollout; rewards are normalized over this episode alone."""
    batch = collate([(seq, label)])
    noise = draw_noise([rng], batch, cfg.schedule, train)
    return forward(params, batch, noise, cfg, reward_cfg).traces()[0]


# ---------------------------------------------------------------- losses

@dataclass
class Losses:
    anticipation: float
    actor: float
    critic: float
    aux: float
    total: float

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _loss_terms(roll: Rollout, cfg: ModelConfig, loss_cfg: objective.LossConfig, fixed_advantage=None):
    b = roll.batch
    B, n = b.valid.shape
    w_an = b.valid / (B * b.lengths[:, None])
    w_rl = b.valid / b.valid.sum()
    an = np.zeros((B, n))
    dp = np.zeros((B, n))
    dom = np.zeros((B, n))
    for i in range(B):
        m = int(b.lengths[i])
        fps = loss_cfg.fps or float(b.fps[i])
        an[i, :m], dp[i, :m], dom[i, :m] = objective.frame_anticipation(
            roll.probs[i, :m], roll.omega[i, :m], bool(b.positive[i]), int(b.tau[i]), fps, loss_cfg.neg_scale)
    adv = roll.norm_rewards - roll.values
    actor_adv = adv if fixed_advantage is None else fixed_advantage
    lp = roll.log_probs
    l_an = float(np.sum(w_an * an))
    l_actor = float(-np.sum(w_rl * lp * actor_adv) - loss_cfg.entropy_weight * np.sum(w_rl * roll.entropy))
    l_critic = float(np.sum(w_rl * 0.5 * adv ** 2))
    l_aux, aux_grads = 0.0, {}
    if loss_cfg.aux_weight > 0:
        l_aux, aux_grads = _aux_terms(roll, cfg, w_an)
        aux_grads = {k: loss_cfg.aux_weight * v for k, v in aux_grads.items()}
    return (l_an, l_actor, l_critic, l_aux), (w_an, w_rl, dp, dom, adv), aux_grads


def _aux_terms(roll: Rollout, cfg: ModelConfig, w_an):
    """Mean squared error between each denoiser output and its clean input."""
    total = 0.0
    grads = {}
    mask = roll.batch.mask
    steps = roll.caches["steps"]
    if cfg.image_diffusion:
        d_out = np.stack([c["img"][3] for c in steps], axis=1)
        diff = d_out - roll.batch.img
        total += float(np.sum(w_an * np.mean(diff ** 2, axis=-1)))
        grads["img"] = (w_an * 2.0 / cfg.d_img)[..., None] * diff
    if cfg.object_diffusion:
        d_out = np.stack([c["obj"][3] for c in steps], axis=1)
        F_bar = np.stack([c["F_bar"] for c in steps], axis=1)
        diff = d_out - F_bar
        wk = mask / (mask.sum(axis=-1, keepdims=True) * cfg.d_obj)
        total += float(np.sum(w_an[..., None] * wk * np.sum(diff ** 2, axis=-1)))
        grads["obj"] = (w_an[..., None] * wk * 2.0)[..., None] * diff
    return total, grads


def losses(roll: Rollout, cfg: ModelConfig, loss_cfg: objective.LossConfig, fixed_advantage=None) -> Losses:
    """Loss components; ``fixed_advantage`` overrides the advantage inside the actor term."""
    (l_an, l_actor, l_critic, l_aux), _, _ = _loss_terms(roll, cfg, loss_cfg, fixed_advantage)
    total = objective.total_loss(l_an, l_actor, l_critic, loss_cfg) + loss_cfg.aux_weight * l_aux
    return Losses(l_an, l_actor, l_critic, l_aux, total)


# ---------------------------------------------------------------- backward

def _add(acc: dict, g: dict):
    for k, v in g.items():
        acc[k] += v


def compute_gradients(roll: Rollout, params: dict, cfg: ModelConfig,
                      loss_cfg: objective.LossConfig) -> tuple[dict, Losses]:
    """Exact gradient of the total loss w.r.t. every parameter of ``params``."""
    (l_an, l_actor, l_critic, l_aux), (w_an, w_rl, dp, dom, adv), aux = _loss_terms(roll, cfg, loss_cfg)
    c_an, c_actor, c_critic = loss_cfg.coefficients
    total = c_an * l_an + c_actor * l_actor + c_critic * l_critic + loss_cfg.aux_weight * l_aux
    grads = zeros_like(params)
    schedule = cfg.schedule
    B, n = roll.batch.valid.shape

    # heads on every hidden state
    dH, g = temporal.prob_backward(c_an * w_an * dp, roll.caches["prob"], params["prob"])
    _add(grads["prob"], g)
    if cfg.time_weight:
        dh, g = temporal.time_weight_backward(c_an * w_an * dom, roll.caches["time"], params["time"])
        dH = dH + dh
        _add(grads["time"], g)

    # actor (advantage held constant) and critic on the window means
    pi = np.exp(roll.log_pi)
    onehot = np.zeros_like(pi)
    np.put_along_axis(onehot, roll.actions[..., None], 1.0, axis=-1)
    lam_e = loss_cfg.entropy_weight
    dz = c_actor * w_rl[..., None] * (
        -adv[..., None] * (onehot - pi) + lam_e * pi * (roll.log_pi + roll.entropy[..., None])
    )
    dV = -c_critic * w_rl * adv
    ac = params["ac"]
    grads["ac"]["W_p"] += np.einsum("bta,btd->ad", dz, roll.h_bar)
    grads["ac"]["b_p"] += dz.sum(axis=(0, 1))
    grads["ac"]["w_v"] += np.einsum("bt,btd->d", dV, roll.h_bar)
    grads["ac"]["b_v"] += dV.sum()
    dhbar = dz @ ac["W_p"] + dV[..., None] * ac["w_v"]
    dH = dH + temporal.window_means_backward(dhbar, cfg.window)

    # reverse through time
    carry = np.zeros((B, cfg.d_hidden))
    for t in range(n - 1, -1, -1):
        c = roll.caches["steps"][t]
        dh = dH[:, t] + carry
        dx, carry, g = temporal.gru_backward(dh, c["gru"], params["gru"])
        _add(grads["gru"], g)
        d_img_enh, d_obj_enh = temporal.fuse_backward(dx, c["fuse"], cfg.d_img)
        if cfg.image_diffusion:
            if "img" in aux:
                _aux_backward(aux["img"][:, t], c["img"], schedule, params["den_img"], grads["den_img"])
            _, g = diffusion.enhance_backward(d_img_enh, c["img"], schedule, params["den_img"])
            _add(grads["den_img"], g)
        if cfg.object_diffusion:
            dF_bar, g = diffusion.enhance_backward(d_obj_enh, c["obj"], schedule, params["den_obj"])
            _add(grads["den_obj"], g)
            if "obj" in aux:
                g_out = aux["obj"][:, t]
                # through the denoiser input, and the reconstruction target itself
                dF_bar = dF_bar + _aux_backward(g_out, c["obj"], schedule, params["den_obj"], grads["den_obj"]) - g_out
        else:
            dF_bar = d_obj_enh
        if cfg.object_aware:
            _, dh_att, g = attention.attend_backward(dF_bar, c["att"], params["attention"])
            _add(grads["attention"], g)
            carry = carry + dh_att

    for m, gm in grads.items():
        for k, v in gm.items():
            if not np.all(np.isfinite(v)):
                raise NumericError(f"non-finite gradient for parameter {m}.{k}")
    return grads, Losses(l_an, l_actor, l_critic, l_aux, total)


def _aux_backward(d_out_grad, enh_cache, schedule, p, acc):
    """Backprop a gradient on the raw denoiser output; returns the gradient on its clean input."""
    dcache, t, _, _ = enh_cache
    dnoisy, g = diffusion.denoise_backward(d_out_grad, dcache, p)
    _add(acc, g)
    ab = diffusion._expand(schedule.alpha_bars, t, d_out_grad.ndim)
    return np.sqrt(ab) * dnoisy


def total_loss_at(params, batch, noise, actions, cfg, loss_cfg, reward_cfg, fixed_advantage=None) -> float:
    """Total loss with actions (and optionally the actor's advantage) frozen; the
    objective that :func:`compute_gradients` differentiates."""
    roll = forward(params, batch, noise, cfg, reward_cfg, actions=actions)
    return losses(roll, cfg, loss_cfg, fixed_advantage).total
