"""Training loop, optimizer, learning-rate schedule, evaluation and checkpoints."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import metrics
from .dataset import Dataset
from .decision import RewardConfig
from .errors import ConfigError, ParseError
from .objective import LossConfig
from .pipeline import (
    Losses, ModelConfig, collate, compute_gradients, copy_params, draw_noise, flatten,
    forward, init_params, losses, unflatten,
)

CHECKPOINT_FORMAT = "anticipate.checkpoint"
CHECKPOINT_VERSION = "1"
LOG_COLUMNS = ("epoch", "L_an", "L_actor", "L_critic", "L_total", "lr", "val_AP", "val_mTTA")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 10
    lr: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    plateau_min_lr: float = 1e-6
    plateau_threshold: float = 1e-4
    val_fraction: float = 0.2
    eval_batch: int = 50
    seed: int = 0
    eval_seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1 or self.eval_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not self.lr > 0:
            raise ConfigError("learning rate must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("invalid Adam hyperparameters")
        if self.plateau_patience < 1 or not 0 < self.plateau_factor < 1 or self.plateau_min_lr < 0:
            raise ConfigError("plateau needs patience >= 1, factor in (0, 1), min_lr >= 0")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        self.model.validate()
        self.loss.validate()
        self.reward.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        sub = {"model": ModelConfig, "loss": LossConfig, "reward": RewardConfig}
        for key, typ in sub.items():
            if key in d:
                d[key] = typ(**d[key])
        return cls(**d)


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam; ``params``/``grads`` are flat name -> array maps.

    Returns new parameter and state objects; inputs are not modified.
    """
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        m = beta1 * state.m.get(k, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(k, 0.0) + (1.0 - beta2) * g * g
        new_m[k], new_v[k] = np.asarray(m, dtype=np.float64), np.asarray(v, dtype=np.float64)
        new_p[k] = np.asarray(p - lr * (m / c1) / (np.sqrt(v / c2) + eps), dtype=np.float64)
    return new_p, AdamState(t, new_m, new_v)


@dataclass
class PlateauState:
    lr: float
    best: float = math.inf
    bad_epochs: int = 0


def plateau_schedule(metric: float, state: PlateauState, factor: float = 0.5, patience: int = 3,
                     min_lr: float = 1e-6, threshold: float = 1e-4) -> PlateauState:
    """Reduce-on-plateau for a minimized metric.

    An epoch improves when ``metric < best - threshold * |best|``; after
    ``patience`` consecutive non-improving epochs the rate is multiplied by
    ``factor`` (floored at ``min_lr``) and the counter restarts.
    """
    bar = state.best if math.isinf(state.best) else state.best - threshold * abs(state.best)
    if metric < bar:
        return PlateauState(state.lr, metric, 0)
    bad = state.bad_epochs + 1
    if bad >= patience:
        return PlateauState(max(state.lr * factor, min_lr), state.best, 0)
    return PlateauState(state.lr, state.best, bad)


# ---------------------------------------------------------------- evaluation

def split_indices(dataset: Dataset, val_fraction: float, seed: int) -> tuple[list, list]:
    """Stratified seeded split into (train, val) index lists."""
    rng = np.random.default_rng([seed, 7])
    train, val = [], []
    for flag in (True, False):
        idx = [i for i, lab in enumerate(dataset.labels) if lab.positive == flag]
        idx = [idx[j] for j in rng.permutation(len(idx))]
        n_val = int(round(val_fraction * len(idx)))
        if len(idx) >= 2:
            n_val = min(max(n_val, 1), len(idx) - 1)
        val += idx[:n_val]
        train += idx[n_val:]
    return sorted(train), sorted(val)


@dataclass
class Evaluation:
    records: list
    losses: Losses
    report: Optional[metrics.MetricsReport]
    traces: list


def evaluate(params: dict, cfg: TrainConfig, dataset: Dataset, indices=None,
             with_report: bool = True) -> Evaluation:
    """Deterministic pass: fixed diffusion step, per-video noise keyed on the dataset index."""
    if indices is None:
        indices = list(range(len(dataset)))
    sched = cfg.model.schedule
    records, traces = [], []
    weighted = np.zeros(5)
    n_frames = 0
    for start in range(0, len(indices), cfg.eval_batch):
        chunk = indices[start:start + cfg.eval_batch]
        batch = collate([dataset[i] for i in chunk])
        rngs = [np.random.default_rng([cfg.eval_seed, 1, i]) for i in chunk]
        noise = draw_noise(rngs, batch, sched, train=False)
        roll = forward(params, batch, noise, cfg.model, cfg.reward)
        L = losses(roll, cfg.model, cfg.loss)
        frames = int(batch.valid.sum())
        weighted += frames * np.array([L.anticipation, L.actor, L.critic, L.aux, L.total])
        n_frames += frames
        for tr in roll.traces():
            traces.append(tr)
            records.append(metrics.PredictionRecord(tr.probs, tr.positive, tr.accident_frame, tr.fps))
    mean = weighted / max(n_frames, 1)
    report = None
    if with_report:
        report = metrics.report(records)
    return Evaluation(records, Losses(*mean.tolist()), report, traces)


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict
    epoch: int = 0
    adam: AdamState = field(default_factory=AdamState)
    plateau: Optional[PlateauState] = None
    rng_state: Optional[dict] = None
    split: dict = field(default_factory=dict)
    best_val_ap: Optional[float] = None
    tag: str = ""


def _arr_to_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": np.asarray(a, dtype=np.float64).ravel().tolist()}


def _arr_from_json(d: dict, name: str) -> np.ndarray:
    try:
        a = np.array(d["data"], dtype=np.float64)
        return a.reshape(tuple(d["shape"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"checkpoint array {name!r}: {exc}") from None


def checkpoint_to_dict(ck: Checkpoint) -> dict:
    flat = flatten(ck.params)
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "tag": ck.tag,
        "epoch": ck.epoch,
        "config": ck.config.to_dict(),
        "params": {k: _arr_to_json(v) for k, v in sorted(flat.items())},
        "optimizer": {
            "step": ck.adam.step,
            "m": {k: _arr_to_json(v) for k, v in sorted(ck.adam.m.items())},
            "v": {k: _arr_to_json(v) for k, v in sorted(ck.adam.v.items())},
        },
        "plateau": None if ck.plateau is None else {
            "lr": ck.plateau.lr,
            "best": None if math.isinf(ck.plateau.best) else ck.plateau.best,
            "bad_epochs": ck.plateau.bad_epochs,
        },
        "rng_state": ck.rng_state,
        "split": ck.split,
        "best_val_ap": ck.best_val_ap,
    }


def save_checkpoint(ck: Checkpoint, path) -> None:
    text = json.dumps(checkpoint_to_dict(ck), sort_keys=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed checkpoint ({exc.msg})") from None
    if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
    cfg = TrainConfig.from_dict(d["config"])
    params = unflatten({k: _arr_from_json(v, k) for k, v in d["params"].items()})
    opt = d["optimizer"]
    adam = AdamState(
        opt["step"],
        {k: _arr_from_json(v, k) for k, v in opt["m"].items()},
        {k: _arr_from_json(v, k) for k, v in opt["v"].items()},
    )
    pl = d.get("plateau")
    plateau = None if pl is None else PlateauState(
        pl["lr"], math.inf if pl["best"] is None else pl["best"], pl["bad_epochs"])
    return Checkpoint(cfg, params, d["epoch"], adam, plateau, d.get("rng_state"),
                      d.get("split", {}), d.get("best_val_ap"), d.get("tag", ""))


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    log: list                 # one dict per epoch, keys LOG_COLUMNS
    final: Checkpoint
    best: Checkpoint
    initial: Checkpoint

    def log_csv(self) -> str:
        return format_log(self.log)


def format_log(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in rows:
        w.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])
    return buf.getvalue()


def fit_model_dims(cfg: TrainConfig, dataset: Dataset) -> TrainConfig:
    d_img, d_obj, _ = dataset.dims
    if (cfg.model.d_img, cfg.model.d_obj) == (d_img, d_obj):
        return cfg
    return replace(cfg, model=replace(cfg.model, d_img=d_img, d_obj=d_obj))


def train(dataset: Dataset, cfg: TrainConfig, on_epoch=None, resume: Optional[Checkpoint] = None) -> TrainResult:
    """Train on a seeded stratified split; everything is a function of ``cfg.seed``.

    With ``resume`` the run continues from that checkpoint's epoch up to
    ``cfg.epochs`` and reproduces an uninterrupted run exactly. The log then
    covers only the new epochs and the best-AP tracking restarts.
    """
    cfg = fit_model_dims(cfg, dataset)
    cfg.validate()
    dataset.validate()
    if resume is None:
        train_idx, val_idx = split_indices(dataset, cfg.val_fraction, cfg.seed)
        split = {"train": train_idx, "val": val_idx}
        params = init_params(cfg.model, np.random.default_rng([cfg.seed, 3]))
        shuffle = np.random.default_rng([cfg.seed, 11])
        adam = AdamState()
        plateau = PlateauState(cfg.lr)
        first = 1
    else:
        if replace(resume.config, epochs=cfg.epochs) != cfg:
            raise ConfigError("resume needs the checkpoint's configuration (only epochs may change)")
        if resume.epoch > cfg.epochs or resume.plateau is None or resume.rng_state is None:
            raise ConfigError(f"cannot resume from epoch {resume.epoch} to {cfg.epochs}")
        split = resume.split
        train_idx, val_idx = split["train"], split["val"]
        params = copy_params(resume.params)
        shuffle = np.random.default_rng()
        shuffle.bit_generator.state = resume.rng_state
        adam = AdamState(resume.adam.step, dict(resume.adam.m), dict(resume.adam.v))
        plateau = replace(resume.plateau)
        first = resume.epoch + 1

    def snapshot(epoch, tag, best_ap):
        return Checkpoint(cfg, copy_params(params), epoch,
                          AdamState(adam.step, dict(adam.m), dict(adam.v)),
                          PlateauState(plateau.lr, plateau.best, plateau.bad_epochs),
                          shuffle.bit_generator.state, split, best_ap, tag)

    initial = snapshot(first - 1, "initial", None)
    best = replace(initial, tag="best")
    best_ap = -math.inf
    log = []
    for epoch in range(first, cfg.epochs + 1):
        order = shuffle.permutation(train_idx)
        lr = plateau.lr
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [int(i) for i in order[start:start + cfg.batch_size]]
            batch = collate([dataset[i] for i in chunk])
            rngs = [np.random.default_rng([cfg.seed, 5, epoch, i]) for i in chunk]
            noise = draw_noise(rngs, batch, cfg.model.schedule, train=True)
            roll = forward(params, batch, noise, cfg.model, cfg.reward)
            grads, L = compute_gradients(roll, params, cfg.model, cfg.loss)
            flat, adam = adam_step(flatten(params), flatten(grads), adam, lr,
                                   cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            params = unflatten(flat)
            sums += [L.anticipation, L.actor, L.critic, L.total]
            n_batches += 1
        ev = evaluate(params, cfg, dataset, val_idx)
        plateau = plateau_schedule(ev.losses.total, plateau, cfg.plateau_factor, cfg.plateau_patience,
                                   cfg.plateau_min_lr, cfg.plateau_threshold)
        means = sums / max(n_batches, 1)
        row = {
            "epoch": epoch, "L_an": means[0], "L_actor": means[1], "L_critic": means[2],
            "L_total": means[3], "lr": lr, "val_AP": ev.report.ap, "val_mTTA": ev.report.mtta,
        }
        log.append(row)
        if ev.report.ap > best_ap:
            best_ap = ev.report.ap
            best = snapshot(epoch, "best", best_ap)
        if on_epoch is not None:
            on_epoch(row)
    final = snapshot(cfg.epochs, "final", None if best_ap == -math.inf else best_ap)
    return TrainResult(log, final, best, initial)
