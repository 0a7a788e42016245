"""Noise-robustness, ablation and reward-scaling sweeps.

Each sweep returns :class:`Table` objects whose rows follow fixed
layouts: a Gaussian grid and an impulse grid for noise, one row per removed
module for ablations (plus a cross-tab against the Gaussian grid) and seven
reward/penalty multiplier pairs.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

from .dataset import Dataset, corrupt_dataset
from .trainer import Checkpoint, TrainConfig, evaluate, fit_model_dims, train

GAUSSIAN_LEVELS = (0.0, 0.5, 1.0, 5.0, 10.0, 20.0)
IMPULSE_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.5)
# (reward multiplier, penalty multiplier); the first row is the baseline
REWARD_GRID = ((1.0, 1.0), (10.0, 1.0), (50.0, 1.0), (0.1, 1.0), (0.02, 1.0), (1.0, 10.0), (1.0, 0.1))


def _without(section, **changes):
    def apply(cfg: TrainConfig) -> TrainConfig:
        return replace(cfg, **{section: replace(getattr(cfg, section), **changes)})
    return apply


ABLATIONS = {
    "Full Model": lambda cfg: cfg,
    "w/o Object Aware Module": _without("model", object_aware=False),
    "w/o Time Weight Layer": _without("model", time_weight=False),
    "w/o Anticipation Loss": _without("loss", use_anticipation=False),
    "w/o Policy Gradient Loss": _without("loss", use_actor=False),
    "w/o Value Loss": _without("loss", use_critic=False),
    "w/o Image Diffusion": _without("model", image_diffusion=False),
    "w/o Object Diffusion": _without("model", object_diffusion=False),
    "w/o All Diffusion": _without("model", image_diffusion=False, object_diffusion=False),
}


def supervised_only(cfg: TrainConfig) -> TrainConfig:
    """Anticipation loss alone (alpha = 0)."""
    return replace(cfg, loss=replace(cfg.loss, alpha=0.0))


@dataclass
class Table:
    name: str
    columns: tuple
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}

    def column(self, name):
        k = self.columns.index(name)
        return [r[k] for r in self.rows]


def _level_label(level: float) -> str:
    return "Original" if level == 0 else repr(float(level))


def _noisy_metrics(params, cfg, dataset, indices, kind, level, seed, magnitude):
    data = corrupt_dataset(dataset, kind, level, seed, magnitude) if level > 0 else dataset
    rep = evaluate(params, cfg, data, indices).report
    return rep.ap, rep.mtta


def sweep_noise(checkpoint: Checkpoint, dataset: Dataset, indices=None,
                gaussian=GAUSSIAN_LEVELS, impulse=IMPULSE_LEVELS, seed: int = 0,
                magnitude: float = 3.0) -> dict:
    """Re-evaluate a checkpoint on corrupted copies; returns ``{"gaussian": Table, "impulse": Table}``.

    Level 0 evaluates the untouched data, so that row equals a clean evaluation.
    """
    if indices is None:
        indices = checkpoint.split.get("val") or list(range(len(dataset)))
    cfg, params = checkpoint.config, checkpoint.params
    g_rows = [[_level_label(s), *_noisy_metrics(params, cfg, dataset, indices, "gaussian", s, seed, magnitude)]
              for s in gaussian]
    i_rows = [[_level_label(f), *_noisy_metrics(params, cfg, dataset, indices, "impulse", f, seed, magnitude)]
              for f in impulse]
    return {
        "gaussian": Table("gaussian", ("sigma", "AP", "mTTA"), g_rows),
        "impulse": Table("impulse", ("fraction", "AP", "mTTA"), i_rows),
    }


def sweep_ablation(dataset: Dataset, cfg: TrainConfig, variants=None, gaussian=GAUSSIAN_LEVELS,
                   seed: int = 0, on_variant=None) -> dict:
    """Train every ablation variant with the same seed and cross-tabulate against Gaussian noise.

    Returns ``{"ablation": Table, "ablation_noise": Table}``.
    """
    names = list(ABLATIONS) if variants is None else list(variants)
    base = fit_model_dims(cfg, dataset)
    clean_rows, per_level = [], {s: [_level_label(s)] for s in gaussian}
    for name in names:
        vcfg = ABLATIONS[name](base)
        result = train(dataset, vcfg)
        ck = result.final
        idx = ck.split["val"]
        rep = evaluate(ck.params, ck.config, dataset, idx).report
        clean_rows.append([name, rep.ap, rep.mtta])
        for s in gaussian:
            per_level[s] += _noisy_metrics(ck.params, ck.config, dataset, idx, "gaussian", s, seed, 3.0)
        if on_variant is not None:
            on_variant(name, result)
    cols = ["sigma"]
    for name in names:
        cols += [f"{name} AP", f"{name} mTTA"]
    return {
        "ablation": Table("ablation", ("variant", "AP", "mTTA"), clean_rows),
        "ablation_noise": Table("ablation_noise", tuple(cols), [per_level[s] for s in gaussian]),
    }


def sweep_reward(dataset: Dataset, cfg: TrainConfig, grid=REWARD_GRID, on_cell=None) -> Table:
    """Train with scaled reward decay and penalty; one row per multiplier pair."""
    rows = []
    for r_mult, p_mult in grid:
        ccfg = replace(cfg, reward=cfg.reward.scaled(r_mult, p_mult))
        result = train(dataset, ccfg)
        ck = result.final
        rep = evaluate(ck.params, ck.config, dataset, ck.split["val"]).report
        rows.append([f"x{r_mult:g}", f"x{p_mult:g}", ccfg.reward.decay, ccfg.reward.penalty, rep.ap, rep.mtta])
        if on_cell is not None:
            on_cell((r_mult, p_mult), result)
    return Table("reward", ("reward_mult", "penalty_mult", "decay", "penalty", "AP", "mTTA"), rows)
