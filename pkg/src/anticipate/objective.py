"""Training objective: weighted anticipation cross-entropy plus actor and
critic terms.

Batch conventions: the anticipation loss is averaged over the valid frames of
each video and then over videos; the actor and critic losses are averaged
over every valid frame in the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError

P_FLOOR = 1e-7


@dataclass(frozen=True)
class LossConfig:
    neg_scale: float = 1.0        # c
    entropy_weight: float = 0.1   # lambda_e
    alpha: float = 0.5
    beta: float = 0.5
    use_anticipation: bool = True
    use_actor: bool = True
    use_critic: bool = True
    aux_weight: float = 0.0       # optional denoiser reconstruction loss
    fps: Optional[float] = None   # overrides the per-video fps when set

    def validate(self) -> None:
        if self.entropy_weight < 0 or self.alpha < 0 or self.beta < 0 or self.aux_weight < 0:
            raise ConfigError("entropy_weight, alpha, beta and aux_weight must be >= 0")
        if self.fps is not None and not self.fps > 0:
            raise ConfigError("fps must be > 0")

    @property
    def coefficients(self) -> tuple[float, float, float]:
        """Multipliers of (L_an, L_actor, L_critic) in the total loss."""
        return (
            1.0 if self.use_anticipation else 0.0,
            self.alpha if self.use_actor else 0.0,
            self.alpha * self.beta if self.use_critic else 0.0,
        )


@dataclass
class EpisodeTrace:
    probs: np.ndarray
    omega: np.ndarray
    log_probs: np.ndarray        # log pi_t(a_t)
    values: np.ndarray
    rewards: np.ndarray
    norm_rewards: np.ndarray
    entropy: np.ndarray
    positive: bool
    accident_frame: int
    fps: float
    actions: Optional[np.ndarray] = None
    hidden: Optional[np.ndarray] = None
    h_bar: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.probs)


def temporal_penalty(t, accident_frame: int, fps: float):
    """``-max(0, (tau - t - 1) / fps)`` for 0-based frame ``t``; zero from the accident frame on."""
    if accident_frame < 1:
        raise DomainError("temporal penalty is defined for positive videos only")
    return -np.maximum(0.0, (accident_frame - np.asarray(t) - 1) / fps)


def frame_anticipation(probs, omega, positive: bool, accident_frame: int, fps: float, neg_scale: float):
    """Per-frame anticipation loss and its partials w.r.t. ``probs`` and ``omega``."""
    p = np.asarray(probs, dtype=np.float64)
    pc = np.clip(p, P_FLOOR, 1.0 - P_FLOOR)
    inside = (p > P_FLOOR) & (p < 1.0 - P_FLOOR)
    if positive:
        w = np.exp(temporal_penalty(np.arange(p.size), accident_frame, fps))
        ce = -np.log(pc)
        loss = omega * w * ce
        dp = np.where(inside, -omega * w / pc, 0.0)
        domega = w * ce
    else:
        loss = neg_scale * -np.log1p(-pc)
        dp = np.where(inside, neg_scale / (1.0 - pc), 0.0)
        domega = np.zeros_like(p)
    return loss, dp, domega


def anticipation_loss(trace: EpisodeTrace, cfg: LossConfig = LossConfig()) -> float:
    fps = cfg.fps or trace.fps
    loss, _, _ = frame_anticipation(trace.probs, trace.omega, trace.positive, trace.accident_frame, fps, cfg.neg_scale)
    return float(loss.mean())


def advantages(trace: EpisodeTrace) -> np.ndarray:
    return trace.norm_rewards - trace.values


def actor_loss(trace, entropy_weight: float = 0.1) -> float:
    """``-mean(log pi(a) * A) - entropy_weight * mean(H(pi))`` with the advantage held constant.

    ``trace`` is one :class:`EpisodeTrace` or a list of them (pooled frames).
    """
    traces = trace if isinstance(trace, (list, tuple)) else [trace]
    lp = np.concatenate([t.log_probs for t in traces])
    adv = np.concatenate([advantages(t) for t in traces])
    ent = np.concatenate([t.entropy for t in traces])
    return float(-np.mean(lp * adv) - entropy_weight * np.mean(ent))


def critic_loss(trace) -> float:
    traces = trace if isinstance(trace, (list, tuple)) else [trace]
    adv = np.concatenate([advantages(t) for t in traces])
    return float(np.mean(0.5 * adv ** 2))


def batch_anticipation_loss(traces, cfg: LossConfig = LossConfig()) -> float:
    return float(np.mean([anticipation_loss(t, cfg) for t in traces]))


def total_loss(l_an: float, l_actor: float, l_critic: float, cfg: LossConfig = LossConfig()) -> float:
    """``L_an + alpha * (L_actor + beta * L_critic)`` with disabled terms dropped."""
    c_an, c_actor, c_critic = cfg.coefficients
    return c_an * l_an + c_actor * l_actor + c_critic * l_critic
