"""Command line: ``anticipate {gen,train,eval,sweep,plot}``.

Exit status is 0 on success, 2 for usage or configuration errors and 1 for
anything that fails while running.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import io
import json
import os
import sys
from dataclasses import replace

from . import __version__, dataset as ds_mod, metrics, plotting, sweeps, trainer
from .config import RunConfig, load_run_config, merge
from .errors import AnticipateError, ConfigError

NOISE_KINDS = ("gaussian", "impulse")


# ---------------------------------------------------------------- arguments

def _noise_spec(text: str):
    kind, sep, level = text.partition(":")
    if not sep or kind not in NOISE_KINDS:
        raise argparse.ArgumentTypeError(f"expected gaussian:<sigma> or impulse:<fraction>, got {text!r}")
    try:
        value = float(level)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad noise level {level!r}") from None
    if value < 0 or (kind == "impulse" and value > 1):
        raise argparse.ArgumentTypeError(f"noise level out of range: {text!r}")
    return kind, value


def _index_list(text: str):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_common(p):
    p.add_argument("--config", help="JSON run configuration (see README)")
    p.add_argument("--no-timestamp", action="store_true", help="omit the creation time from the manifest")
    p.add_argument("--quiet", action="store_true")


def _add_out_dir(p):
    p.add_argument("--out-dir", default="out", help="directory for all outputs (default: out)")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--window", type=int, help="history window W; 0 is the frame-level baseline")
    g.add_argument("--alpha", type=float, help="weight of the actor-critic terms")
    g.add_argument("--beta", type=float, help="weight of the value loss inside the actor-critic term")
    g.add_argument("--neg-scale", type=float, help="weight of negative videos in the anticipation loss")
    g.add_argument("--entropy-weight", type=float, help="entropy bonus in the actor loss")
    g.add_argument("--reward-mult", type=float, default=1.0, help="multiplies the reward decay")
    g.add_argument("--penalty-mult", type=float, default=1.0, help="multiplies the penalty")
    for flag in ("object-aware", "time-weight", "image-diffusion", "object-diffusion",
                 "anticipation-loss", "policy-loss", "value-loss"):
        g.add_argument(f"--no-{flag}", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anticipate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic feature dataset")
    p.add_argument("--preset", choices=sorted(ds_mod.PRESETS), default="dad-like")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-pos", type=int)
    p.add_argument("--n-neg", type=int)
    p.add_argument("--out", required=True, help="dataset file to write")
    _add_common(p)

    p = sub.add_parser("train", help="train a model and write checkpoints and a log")
    p.add_argument("--data", required=True)
    p.add_argument("--resume", help="continue from a checkpoint; only --epochs may change")
    _add_train_flags(p)
    _add_out_dir(p)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("all", "val", "train"), default="all")
    p.add_argument("--noise", type=_noise_spec, help="corrupt the data first, e.g. gaussian:5.0")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--impulse-magnitude", type=float, default=3.0)
    _add_out_dir(p)
    _add_common(p)

    p = sub.add_parser("sweep", help="noise, ablation or reward sweep tables")
    p.add_argument("kind", choices=("noise", "ablation", "reward"))
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="checkpoint to corrupt-evaluate (noise sweep)")
    p.add_argument("--noise-seed", type=int, default=0)
    _add_train_flags(p)
    _add_out_dir(p)
    _add_common(p)

    p = sub.add_parser("plot", help="probability timelines for two checkpoints as SVG")
    p.add_argument("--checkpoint", required=True, help="left column (long-horizon model)")
    p.add_argument("--checkpoint-b", required=True, help="right column (frame-level model)")
    p.add_argument("--data", required=True)
    p.add_argument("--videos", type=_index_list, help="dataset indices (default: first three of the split)")
    p.add_argument("--split", choices=("all", "val", "train"), default="val")
    p.add_argument("--threshold", type=float, default=0.5)
    _add_out_dir(p)
    _add_common(p)
    return parser


# ---------------------------------------------------------------- helpers

def _log(args, msg):
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr)


def _write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_manifest(args, files) -> None:
    man = {
        "tool": "anticipate",
        "version": __version__,
        "command": args.command,
        "argv": {k: v for k, v in sorted(vars(args).items()) if k not in ("command",)},
        "artifacts": [{"file": f, "sha256": _sha256(os.path.join(args.out_dir, f))} for f in files],
    }
    if not args.no_timestamp:
        man["created"] = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    _write(os.path.join(args.out_dir, "manifest.json"), json.dumps(man, indent=1, sort_keys=True, default=list) + "\n")


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if hasattr(args, "epochs"):
        cfg = replace(cfg, train=_train_overrides(cfg.train, args))
    return cfg


def _train_overrides(tc: trainer.TrainConfig, args) -> trainer.TrainConfig:
    top = {k: getattr(args, a) for k, a in
           (("epochs", "epochs"), ("seed", "seed"), ("lr", "lr"), ("batch_size", "batch_size"))
           if getattr(args, a) is not None}
    model, loss = {}, {}
    if args.window is not None:
        model["window"] = args.window
    for flag, key in (("object_aware", "object_aware"), ("time_weight", "time_weight"),
                      ("image_diffusion", "image_diffusion"), ("object_diffusion", "object_diffusion")):
        if getattr(args, f"no_{flag}"):
            model[key] = False
    for flag, key in (("anticipation_loss", "use_anticipation"), ("policy_loss", "use_actor"),
                      ("value_loss", "use_critic")):
        if getattr(args, f"no_{flag}"):
            loss[key] = False
    for key in ("alpha", "beta", "neg_scale", "entropy_weight"):
        if getattr(args, key) is not None:
            loss[key] = getattr(args, key)
    tc = merge(tc, {**top, "model": model, "loss": loss})
    if args.reward_mult != 1.0 or args.penalty_mult != 1.0:
        if not args.reward_mult > 0:
            raise ConfigError("--reward-mult must be > 0")
        tc = replace(tc, reward=tc.reward.scaled(args.reward_mult, args.penalty_mult))
    return tc


def _select(split: str, ck: trainer.Checkpoint, data: ds_mod.Dataset):
    if split == "all":
        return list(range(len(data)))
    idx = ck.split.get(split)
    if not idx:
        raise ConfigError(f"checkpoint carries no {split!r} split")
    if max(idx) >= len(data):
        raise ConfigError(f"checkpoint {split} split does not fit a dataset of {len(data)} sequences")
    return idx


def _predictions_csv(indices, ev) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("index", "positive", "accident_frame", "score", "tta_0.5"))
    for i, rec in zip(indices, ev.records):
        t = metrics.tta(rec, 0.5) if rec.positive else None
        w.writerow((i, int(rec.positive), rec.accident_frame, repr(rec.score), "" if t is None else repr(t)))
    return buf.getvalue()


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    cfg = load_run_config(args.config, RunConfig(gen=ds_mod.PRESETS[args.preset]))
    gen = cfg.gen
    if args.n_pos is not None or args.n_neg is not None:
        gen = replace(gen, n_pos=gen.n_pos if args.n_pos is None else args.n_pos,
                      n_neg=gen.n_neg if args.n_neg is None else args.n_neg)
    gen.validate()
    data = ds_mod.gen_synthetic(gen, args.seed)
    ds_mod.save(data, args.out)
    _log(args, f"wrote {len(data)} sequences to {args.out}")
    return 0


def cmd_train(args) -> int:
    data = ds_mod.load(args.data)
    resume = None
    if args.resume:
        resume = trainer.load_checkpoint(args.resume)
        tc = resume.config if args.epochs is None else replace(resume.config, epochs=args.epochs)
    else:
        tc = trainer.fit_model_dims(_run_config(args).train, data)
    tc.validate()
    os.makedirs(args.out_dir, exist_ok=True)
    result = trainer.train(data, tc, resume=resume, on_epoch=lambda r: _log(
        args, f"epoch {r['epoch']:3d}  L_total {r['L_total']:.4f}  val_AP {r['val_AP']:.4f}  "
              f"val_mTTA {r['val_mTTA']:.3f}  lr {r['lr']:.2e}"))
    files = ["train_log.csv", "checkpoint_initial.json"]
    checkpoints = [result.initial]
    if result.log:
        files += ["checkpoint_final.json", "checkpoint_best.json"]
        checkpoints += [result.final, result.best]
    _write(os.path.join(args.out_dir, files[0]), result.log_csv())
    for name, ck in zip(files[1:], checkpoints):
        trainer.save_checkpoint(ck, os.path.join(args.out_dir, name))
    _write_manifest(args, files)
    return 0


def cmd_eval(args) -> int:
    ck = trainer.load_checkpoint(args.checkpoint)
    data = ds_mod.load(args.data)
    indices = _select(args.split, ck, data)
    if args.noise is not None:
        kind, level = args.noise
        if level > 0:
            data = ds_mod.corrupt_dataset(data, kind, level, args.noise_seed, args.impulse_magnitude)
    ev = trainer.evaluate(ck.params, ck.config, data, indices)
    out = ev.report.to_dict()
    out["alarms"] = metrics.alarm_stats(ev.records)
    out["losses"] = {"L_an": ev.losses.anticipation, "L_actor": ev.losses.actor,
                     "L_critic": ev.losses.critic, "L_total": ev.losses.total}
    out["noise"] = None if args.noise is None else {"kind": args.noise[0], "level": args.noise[1]}
    os.makedirs(args.out_dir, exist_ok=True)
    _write(os.path.join(args.out_dir, "report.json"), json.dumps(out, indent=1, sort_keys=True) + "\n")
    _write(os.path.join(args.out_dir, "predictions.csv"), _predictions_csv(indices, ev))
    _write_manifest(args, ["report.json", "predictions.csv"])
    _log(args, f"AP {ev.report.ap:.4f}  mTTA {ev.report.mtta:.3f}s  ({len(indices)} videos)")
    return 0


def cmd_sweep(args) -> int:
    data = ds_mod.load(args.data)
    if args.kind == "noise":
        if not args.checkpoint:
            raise ConfigError("the noise sweep needs --checkpoint")
        ck = trainer.load_checkpoint(args.checkpoint)
        tables = sweeps.sweep_noise(ck, data, _select("val", ck, data) if ck.split.get("val") else None,
                                    seed=args.noise_seed)
    else:
        tc = trainer.fit_model_dims(_run_config(args).train, data)
        tc.validate()
        if args.kind == "ablation":
            tables = sweeps.sweep_ablation(data, tc, seed=args.noise_seed,
                                           on_variant=lambda name, _: _log(args, f"trained {name}"))
        else:
            tables = {"reward": sweeps.sweep_reward(data, tc, on_cell=lambda c, _: _log(args, f"trained {c}"))}
    os.makedirs(args.out_dir, exist_ok=True)
    files = []
    for name, table in tables.items():
        files.append(f"{name}.csv")
        _write(os.path.join(args.out_dir, files[-1]), table.to_csv())
    combined = {name: table.to_dict() for name, table in tables.items()}
    _write(os.path.join(args.out_dir, "sweep.json"), json.dumps(combined, indent=1, sort_keys=True) + "\n")
    _write_manifest(args, files + ["sweep.json"])
    return 0


def cmd_plot(args) -> int:
    ck_a = trainer.load_checkpoint(args.checkpoint)
    ck_b = trainer.load_checkpoint(args.checkpoint_b)
    data = ds_mod.load(args.data)
    indices = args.videos if args.videos else _select(args.split, ck_a, data)[:3]
    if any(not 0 <= i < len(data) for i in indices):
        raise ConfigError(f"video index out of range for {len(data)} sequences")
    ev_a = trainer.evaluate(ck_a.params, ck_a.config, data, indices, with_report=False)
    ev_b = trainer.evaluate(ck_b.params, ck_b.config, data, indices, with_report=False)
    panels = []
    for i, ra, rb in zip(indices, ev_a.records, ev_b.records):
        tag = f"video {i} ({'positive' if ra.positive else 'negative'})"
        panels.append((tag, plotting.panel_spec(ra.probs, ra.fps, ra.accident_frame, args.threshold),
                       plotting.panel_spec(rb.probs, rb.fps, rb.accident_frame, args.threshold)))
    titles = (f"window={ck_a.config.model.window}", f"window={ck_b.config.model.window}")
    os.makedirs(args.out_dir, exist_ok=True)
    plotting.plot_comparison(panels, os.path.join(args.out_dir, "timelines.svg"), titles)
    _write_manifest(args, ["timelines.svg"])
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "plot": cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"anticipate: configuration error: {exc}", file=sys.stderr)
        return 2
    except (AnticipateError, ValueError, ArithmeticError, OSError) as exc:
        print(f"anticipate: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
