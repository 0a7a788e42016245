"""Actor-critic heads on the history summary, the time-decayed reward and
batch reward normalization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, NumericError


@dataclass(frozen=True)
class RewardConfig:
    decay: float = 5.0          # tau_r, frames
    penalty: float = -0.5       # gamma
    eps: float = 1e-10          # small enough that std is 1 within 1e-6 once sigma > 1e-3
    # if set, y_t is 1 only for t >= tau - 1 - label_horizon on positive videos
    label_horizon: Optional[int] = None

    def validate(self) -> None:
        if not self.decay > 0:
            raise ConfigError("reward decay must be > 0")
        if not self.eps > 0:
            raise ConfigError("reward normalization eps must be > 0")
        if self.label_horizon is not None and self.label_horizon < 0:
            raise ConfigError("label_horizon must be >= 0")

    def scaled(self, reward_mult: float = 1.0, penalty_mult: float = 1.0) -> "RewardConfig":
        return RewardConfig(self.decay * reward_mult, self.penalty * penalty_mult, self.eps, self.label_horizon)


def init_actor_critic(rng, d_h: int, n_actions: int = 2) -> dict:
    if n_actions < 2:
        raise ConfigError("need at least two actions")
    b = 1.0 / np.sqrt(d_h)
    return {
        "W_p": rng.uniform(-b, b, (n_actions, d_h)),
        "b_p": rng.uniform(-b, b, n_actions),
        "w_v": rng.uniform(-b, b, d_h),
        "b_v": np.array(rng.uniform(-b, b)),
    }


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def policy_logits(h_bar, params):
    return np.asarray(h_bar) @ params["W_p"].T + params["b_p"]


def policy(h_bar, params) -> np.ndarray:
    return np.exp(log_softmax(policy_logits(h_bar, params)))


def entropy(log_pi) -> np.ndarray:
    return -np.sum(np.exp(log_pi) * log_pi, axis=-1)


def value(h_bar, params):
    return np.asarray(h_bar) @ params["w_v"] + params["b_v"]


def pick_action(pi, u) -> np.ndarray:
    """Inverse-CDF categorical draw for uniforms ``u`` in [0, 1)."""
    pi = np.asarray(pi, dtype=np.float64)
    if not np.all(np.isfinite(pi)):
        raise NumericError("policy contains non-finite probabilities")
    cdf = np.cumsum(pi, axis=-1)
    a = np.sum(cdf <= np.asarray(u)[..., None], axis=-1)
    return np.minimum(a, pi.shape[-1] - 1)


def sample_action(pi, rng: np.random.Generator) -> tuple[int, float]:
    """Draw ``a ~ pi``; returns the action and ``log pi[a]``."""
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 1 or not np.all(np.isfinite(pi)) or np.any(pi < 0):
        raise NumericError(f"degenerate action distribution {pi}")
    a = int(pick_action(pi, rng.random()))
    with np.errstate(divide="ignore"):
        return a, float(np.log(pi[a]))


def reward(action, label, t, cfg: RewardConfig):
    """``exp(-t / decay)`` for a correct action at frame ``t``, else the fixed penalty."""
    t = np.asarray(t)
    if np.any(t < 0):
        raise DomainError("frame index must be >= 0")
    return np.where(np.asarray(action) == np.asarray(label), np.exp(-t / cfg.decay), cfg.penalty)


def frame_labels(n_frames: int, positive: bool, accident_frame: int, cfg: RewardConfig) -> np.ndarray:
    y = np.full(n_frames, int(positive))
    if positive and cfg.label_horizon is not None:
        y[: max(0, accident_frame - 1 - cfg.label_horizon)] = 0
    return y


def normalize_rewards(rewards, eps: float = 1e-10, where=None) -> np.ndarray:
    """``(r - mean) / (std + eps)`` with population std over the batch (``where`` selects entries)."""
    r = np.asarray(rewards, dtype=np.float64)
    sel = np.ones(r.shape, bool) if where is None else np.asarray(where, bool)
    if not sel.any():
        raise DomainError("cannot normalize an empty batch")
    vals = r[sel]
    mu = vals.mean()
    sd = np.sqrt(np.mean((vals - mu) ** 2))
    return np.where(sel, (r - mu) / (sd + eps), 0.0)
