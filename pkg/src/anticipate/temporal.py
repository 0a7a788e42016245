"""Recurrent core: input fusion, GRU cell, probability and time-weight heads,
and the rolling hidden-state history."""
from __future__ import annotations

from collections import deque

import numpy as np

from .errors import DomainError, EmptyFrameError, ShapeError


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _uniform(rng, shape, fan_in):
    b = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-b, b, shape)


def init_gru(rng, d_in: int, d_h: int) -> dict:
    p = {}
    for g in ("z", "r", "h"):
        p[f"W_{g}"] = _uniform(rng, (d_h, d_in), d_h)
        p[f"U_{g}"] = _uniform(rng, (d_h, d_h), d_h)
        p[f"b_{g}"] = _uniform(rng, (d_h,), d_h)
    return p


def init_prob_head(rng, d_h: int, d_mlp: int) -> dict:
    return {
        "W1": _uniform(rng, (d_mlp, d_h), d_h),
        "b1": _uniform(rng, (d_mlp,), d_h),
        "W2": _uniform(rng, (2, d_mlp), d_mlp),
        "b2": _uniform(rng, (2,), d_mlp),
    }


def init_time_weight(rng, d_h: int) -> dict:
    return {"w": _uniform(rng, (d_h,), d_h), "b": np.array(_uniform(rng, (), d_h))}


# ---------------------------------------------------------------- fusion

def fuse_inputs(F_img_enh, F_obj_enh, mask) -> np.ndarray:
    """Concatenate the image vector with the mean of the present object vectors."""
    return fuse_forward(F_img_enh, F_obj_enh, mask)[0]


def fuse_forward(F_img_enh, F_obj_enh, mask):
    F_img_enh = np.asarray(F_img_enh, dtype=np.float64)
    F_obj_enh = np.asarray(F_obj_enh, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != F_obj_enh.shape[:-1] or F_img_enh.shape[:-1] != F_obj_enh.shape[:-2]:
        raise ShapeError("image, object and mask shapes are inconsistent")
    count = mask.sum(axis=-1, keepdims=True)
    if np.any(count == 0):
        raise EmptyFrameError("frame has no present object")
    weights = mask / count
    obj_mean = np.sum(weights[..., None] * F_obj_enh, axis=-2)
    return np.concatenate([F_img_enh, obj_mean], axis=-1), weights


def fuse_backward(dx, weights, d_img):
    return dx[..., :d_img], weights[..., None] * dx[..., None, d_img:]


# ---------------------------------------------------------------- GRU

def gru_forward(x, h_prev, p):
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape[-1] != p["W_z"].shape[1] or h_prev.shape[-1] != p["U_z"].shape[0]:
        raise ShapeError(
            f"GRU expects input {p['W_z'].shape[1]} and hidden {p['U_z'].shape[0]}, "
            f"got {x.shape[-1]} and {h_prev.shape[-1]}"
        )
    z = sigmoid(x @ p["W_z"].T + h_prev @ p["U_z"].T + p["b_z"])
    r = sigmoid(x @ p["W_r"].T + h_prev @ p["U_r"].T + p["b_r"])
    rh = r * h_prev
    hh = np.tanh(x @ p["W_h"].T + rh @ p["U_h"].T + p["b_h"])
    h = (1.0 - z) * h_prev + z * hh
    return h, (x, h_prev, z, r, rh, hh)


def gru_step(x, h_prev, params) -> np.ndarray:
    """One GRU update; update gate ``z`` interpolates from ``h_prev`` toward the candidate."""
    return gru_forward(x, h_prev, params)[0]


def _outer_sum(a, b):
    lead = tuple(range(a.ndim - 1))
    return np.tensordot(a, b, axes=(lead, lead)) if lead else np.outer(a, b)


def gru_backward(dh, cache, p):
    """Return ``(dx, dh_prev, grads)``."""
    x, h_prev, z, r, rh, hh = cache
    lead = tuple(range(dh.ndim - 1))
    dz = dh * (hh - h_prev)
    dah = dh * z * (1.0 - hh * hh)
    drh = dah @ p["U_h"]
    dar = drh * h_prev * r * (1.0 - r)
    daz = dz * z * (1.0 - z)
    dh_prev = dh * (1.0 - z) + drh * r + daz @ p["U_z"] + dar @ p["U_r"]
    dx = dah @ p["W_h"] + daz @ p["W_z"] + dar @ p["W_r"]
    grads = {
        "W_h": _outer_sum(dah, x), "U_h": _outer_sum(dah, rh), "b_h": dah.sum(axis=lead),
        "W_z": _outer_sum(daz, x), "U_z": _outer_sum(daz, h_prev), "b_z": daz.sum(axis=lead),
        "W_r": _outer_sum(dar, x), "U_r": _outer_sum(dar, h_prev), "b_r": dar.sum(axis=lead),
    }
    return dx, dh_prev, grads


# ---------------------------------------------------------------- heads

def prob_forward(h, p):
    m = np.tanh(h @ p["W1"].T + p["b1"])
    logits = m @ p["W2"].T + p["b2"]
    prob = sigmoid(logits[..., 1] - logits[..., 0])
    return prob, (h, m, prob)


def predict_prob(h, params) -> np.ndarray:
    """Accident-class softmax probability of the two-logit MLP head."""
    return prob_forward(h, params)[0]


def prob_backward(dprob, cache, p):
    h, m, prob = cache
    dd = dprob * prob * (1.0 - prob)
    dlogits = np.stack([-dd, dd], axis=-1)
    dm = dlogits @ p["W2"]
    da = dm * (1.0 - m * m)
    lead = tuple(range(da.ndim - 1))
    grads = {
        "W2": _outer_sum(dlogits, m), "b2": dlogits.sum(axis=lead),
        "W1": _outer_sum(da, h), "b1": da.sum(axis=lead),
    }
    return da @ p["W1"], grads


def time_weight_forward(h, p):
    s = sigmoid(h @ p["w"] + p["b"])
    return 1.0 + s, (h, s)


def time_weight(h, params) -> np.ndarray:
    """``1 + sigmoid(w . h + b)``, a per-frame loss weight in (1, 2)."""
    return time_weight_forward(h, params)[0]


def time_weight_backward(domega, cache, p):
    h, s = cache
    dq = domega * s * (1.0 - s)
    grads = {"w": np.tensordot(dq, h, axes=(tuple(range(dq.ndim)),) * 2), "b": np.array(dq.sum())}
    return dq[..., None] * p["w"], grads


# ---------------------------------------------------------------- history

class HistoryBuffer:
    """FIFO of the last ``capacity`` hidden states."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise DomainError("history capacity must be >= 1 (use window 0 to bypass the buffer)")
        self.capacity = capacity
        self.states = deque(maxlen=capacity)

    def __len__(self):
        return len(self.states)

    def push(self, h) -> "HistoryBuffer":
        self.states.append(np.array(h, dtype=np.float64))
        return self

    def summary(self) -> np.ndarray:
        if not self.states:
            raise DomainError("summary of an empty history buffer")
        return np.mean(np.stack(self.states), axis=0)


def history_push(buffer: HistoryBuffer, h) -> HistoryBuffer:
    return buffer.push(h)


def history_summary(buffer: HistoryBuffer) -> np.ndarray:
    return buffer.summary()


def window_means(H: np.ndarray, window: int) -> np.ndarray:
    """Running mean of the last ``window`` states along axis -2 (``H`` is ``(..., N, d)``).

    ``window == 0`` returns ``H`` itself (no buffering).
    """
    if window == 0:
        return H
    n = H.shape[-2]
    out = np.zeros_like(H)
    for j in range(min(window, n)):
        out[..., j:, :] += H[..., : n - j, :]
    counts = np.minimum(np.arange(1, n + 1), window)
    return out / counts[:, None]


def window_means_backward(dmean: np.ndarray, window: int) -> np.ndarray:
    if window == 0:
        return dmean
    n = dmean.shape[-2]
    g = dmean / np.minimum(np.arange(1, n + 1), window)[:, None]
    out = np.zeros_like(g)
    for j in range(min(window, n)):
        out[..., : n - j, :] += g[..., j:, :]
    return out
