"""Object-aware attention over the K object features of a frame.

Energies ``tanh(W_wa h_prev + W_ua f_k + b_a)`` are projected to one score per
object by ``w_w``, softmaxed over the objects present in the frame, and the
resulting weights rescale each object vector.

Arrays carry any number of leading batch axes: ``F_obj`` is ``(..., K, d_obj)``,
``mask`` is ``(..., K)`` and ``h_prev`` is ``(..., d_hidden)``.
"""
from __future__ import annotations

import numpy as np

from .errors import EmptyFrameError, ShapeError


def init_attention(rng: np.random.Generator, d_hidden: int, d_obj: int, d_att: int) -> dict:
    def u(shape, fan_in):
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, shape)

    return {
        "W_wa": u((d_att, d_hidden), d_hidden),
        "W_ua": u((d_att, d_obj), d_obj),
        "b_a": u((d_att,), d_obj),
        "w_w": u((d_att,), d_att),
    }


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not np.all(mask.any(axis=-1)):
        raise EmptyFrameError("frame has no present object")
    s = np.where(mask, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    ex = np.where(mask, np.exp(s), 0.0)
    return ex / ex.sum(axis=-1, keepdims=True)


def uniform_weights(mask: np.ndarray) -> np.ndarray:
    """Attention replaced by equal weights over present objects (ablation)."""
    mask = np.asarray(mask, dtype=bool)
    if not np.all(mask.any(axis=-1)):
        raise EmptyFrameError("frame has no present object")
    return mask / mask.sum(axis=-1, keepdims=True)


def _check(F_obj, mask, h_prev, params):
    d_att, d_hidden = params["W_wa"].shape
    if F_obj.shape[-1] != params["W_ua"].shape[1] or h_prev.shape[-1] != d_hidden:
        raise ShapeError(
            f"attention expects d_obj={params['W_ua'].shape[1]}, d_hidden={d_hidden}; "
            f"got {F_obj.shape[-1]}, {h_prev.shape[-1]}"
        )
    if mask.shape != F_obj.shape[:-1]:
        raise ShapeError(f"mask shape {mask.shape} does not match objects {F_obj.shape[:-1]}")


def attend_forward(F_obj, mask, h_prev, params):
    F_obj = np.asarray(F_obj, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    _check(F_obj, mask, h_prev, params)
    u = h_prev @ params["W_wa"].T
    e = np.tanh(u[..., None, :] + F_obj @ params["W_ua"].T + params["b_a"])
    scores = e @ params["w_w"]
    alpha = masked_softmax(scores, mask)
    F_bar = alpha[..., None] * F_obj
    cache = (F_obj, h_prev, e, alpha)
    return alpha, F_bar, cache


def attend(F_obj, mask, h_prev, params):
    """Return ``(alpha, F_bar)``: per-object weights and rescaled object vectors."""
    alpha, F_bar, _ = attend_forward(F_obj, mask, h_prev, params)
    return alpha, F_bar


def attend_backward(dF_bar, cache, params, dalpha=None):
    """Gradients of a scalar loss given its gradient w.r.t. ``F_bar`` (and optionally ``alpha``).

    Returns ``(dF_obj, dh_prev, grads)``.
    """
    F_obj, h_prev, e, alpha = cache
    da = np.sum(dF_bar * F_obj, axis=-1)
    if dalpha is not None:
        da = da + dalpha
    ds = alpha * (da - np.sum(alpha * da, axis=-1, keepdims=True))
    dpre = ds[..., None] * params["w_w"] * (1.0 - e * e)
    du = dpre.sum(axis=-2)
    lead = tuple(range(du.ndim - 1))
    lead_k = tuple(range(dpre.ndim - 1))
    grads = {
        "w_w": np.tensordot(ds, e, axes=(lead_k, lead_k)),
        "b_a": dpre.sum(axis=lead_k),
        "W_ua": np.tensordot(dpre, F_obj, axes=(lead_k, lead_k)),
        "W_wa": np.tensordot(du, h_prev, axes=(lead, lead)) if lead else np.outer(du, h_prev),
    }
    dF_obj = alpha[..., None] * dF_bar + (dpre @ params["W_ua"])
    dh_prev = du @ params["W_wa"]
    return dF_obj, dh_prev, grads
