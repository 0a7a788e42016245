"""The eleven acceptance checks, one test each.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line (visible in
``pytest -v`` output) and then asserts at the stated tolerance.
"""
import json
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from anticipate import decision as Dc, diffusion as Df, metrics as M, objective as O, pipeline as P
from anticipate import sweeps as S, trainer as Tr
from anticipate.cli import main
from helpers import SMALL_GEN, gradient_check, small_cfg, tiny_dataset
from test_metrics import brute_force_ap


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def test_01_gradient_correctness(verdict):
    start = time.perf_counter()
    worst = max(gradient_check(seed)[0] for seed in range(20))
    elapsed = time.perf_counter() - start
    verdict(1, worst < 1e-4 and elapsed < 60,
            f"20 configs, worst relative error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")


def test_02_diffusion_variance(verdict):
    start = time.perf_counter()
    s = Df.build_schedule(10, 0.001, 0.02)
    rng = np.random.default_rng(2)
    n = 10_000
    F = rng.standard_normal(n)
    F = (F - F.mean()) / F.std()
    worst = 0.0
    for t in range(s.steps):
        var = Df.forward_diffuse(F, t, s, rng.standard_normal(n)).var(ddof=1)
        expected = s.alpha_bars[t] * F.var() + (1 - s.alpha_bars[t])
        worst = max(worst, abs(var - expected) / (expected * np.sqrt(2 / (n - 1))))
    elapsed = time.perf_counter() - start
    verdict(2, worst < 3 and elapsed < 30, f"worst deviation {worst:.2f} standard errors (< 3), {elapsed:.2f}s")


def test_03_schedule_exactness(verdict):
    s = Df.build_schedule(10)
    hand = Df.schedule_from_betas([0.1, 0.2])
    err = float(np.max(np.abs(hand.alpha_bars - [0.9, 0.72])))
    ok = s.betas[0] == 0.001 and bool(np.all(np.diff(s.alpha_bars) < 0)) and err <= 1e-12
    verdict(3, ok, f"beta_0 = {s.betas[0]!r}, alpha_bar decreasing, hand case error {err:.1e}")


def test_04_ap_oracle(verdict):
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 13))
        labels = rng.permutation(np.r_[1, 0, rng.integers(0, 2, n - 2)]).tolist()
        scores = (rng.integers(0, 6, n) / 5).tolist()
        if M.average_precision(scores, labels) != brute_force_ap(scores, labels):
            mismatches += 1
    hand = M.average_precision([0.9, 0.8, 0.7], [1, 0, 1])
    verdict(4, mismatches == 0 and hand == 5 / 6, f"{mismatches}/200 mismatches, hand case {hand!r} (5/6)")


def test_05_tta_protocol(verdict):
    p = np.zeros(100)
    p[40:] = 0.9
    case = M.tta(M.PredictionRecord(p, True, 80, 20.0), 0.5)
    rng = np.random.default_rng(5)
    grid = np.linspace(0, 1, 41)
    monotone = True
    records = []
    for _ in range(100):
        n = int(rng.integers(5, 60))
        r = M.PredictionRecord(rng.uniform(0, 1, n), True, int(rng.integers(1, n + 1)), 10.0)
        records.append(r)
        ttas = [M.tta(r, th) or 0.0 for th in grid]
        monotone &= bool(np.all(np.diff(ttas) <= 0))
    single = M.mtta(records, grid=(0.5,))
    mean_at_half = float(np.mean([M.tta(r, 0.5) or 0.0 for r in records]))
    ok = case == 2.0 and monotone and single == pytest.approx(mean_at_half, abs=1e-15)
    verdict(5, ok, f"hand case {case} s (2.0), monotone over 100 traces: {monotone}, "
                   f"single-point mTTA {single:.6f} = mean TTA {mean_at_half:.6f}")


def test_06_reward_semantics(verdict):
    cfg = Dc.RewardConfig()
    r0, rbad, rtau = Dc.reward(1, 1, 0, cfg), Dc.reward(0, 1, 0, cfg), Dc.reward(1, 1, cfg.decay, cfg)
    rng = np.random.default_rng(6)
    norm_ok = True
    for _ in range(200):
        r = rng.normal(rng.normal(0, 5), rng.uniform(0, 3), int(rng.integers(1, 60)))
        out = Dc.normalize_rewards(r)
        norm_ok &= abs(out.mean()) < 1e-9
        if r.std() > 1e-3:
            norm_ok &= abs(out.std() - 1) < 1e-6
    ok = r0 == 1.0 and rbad == -0.5 and abs(rtau - np.exp(-1)) < 1e-12 and norm_ok
    verdict(6, ok, f"r(t=0) = {r0}, wrong = {rbad}, r(t=tau_r) - e^-1 = {rtau - np.exp(-1):.1e}, "
                   f"normalization within tolerance on 200 batches: {norm_ok}")


def test_07_end_to_end_learning(verdict, default_data, long_horizon_run):
    result, elapsed = long_horizon_run
    val = result.final.split["val"]
    final = Tr.evaluate(result.final.params, result.final.config, default_data, val).report
    untrained = Tr.evaluate(result.initial.params, result.initial.config, default_data, val).report
    ok = len(result.log) == 30 and final.ap >= 0.95 and final.mtta > untrained.mtta and elapsed < 300
    verdict(7, ok, f"val AP {final.ap:.4f} (>= 0.95), mTTA {final.mtta:.3f}s vs untrained "
                   f"{untrained.mtta:.3f}s, 30 epochs in {elapsed:.0f}s (< 300s)")


def test_08_long_horizon_vs_frame_level(verdict, default_data, long_horizon_run, frame_level_run):
    stats = []
    for res in (long_horizon_run[0], frame_level_run):
        ck = res.final
        ev = Tr.evaluate(ck.params, ck.config, default_data, ck.split["val"], with_report=False)
        stats.append(M.alarm_stats(ev.records))
    w10, w0 = stats
    earlier = w10["mean_first_alarm_s"] is not None and (
        w0["mean_first_alarm_s"] is None or w10["mean_first_alarm_s"] <= w0["mean_first_alarm_s"])
    fewer = w10["false_positive_frames"] <= w0["false_positive_frames"]
    verdict(8, earlier and fewer,
            f"first alarm {w10['mean_first_alarm_s']}s (W=10) vs {w0['mean_first_alarm_s']}s (W=0), "
            f"false-positive frames {w10['false_positive_frames']} vs {w0['false_positive_frames']}")


def test_09_robustness_harness(verdict):
    from anticipate import dataset as D
    data = D.gen_synthetic(SMALL_GEN, 9)
    ck = Tr.train(data, small_cfg(epochs=2)).final
    a = S.sweep_noise(ck, data, seed=1)
    b = S.sweep_noise(ck, data, seed=1)
    clean = Tr.evaluate(ck.params, ck.config, data, ck.split["val"]).report
    shape = ([len(a["gaussian"].rows), len(a["impulse"].rows)] == [6, 5]
             and a["gaussian"].columns == ("sigma", "AP", "mTTA")
             and a["impulse"].columns == ("fraction", "AP", "mTTA")
             and a["gaussian"].column("sigma") == ["Original", "0.5", "1.0", "5.0", "10.0", "20.0"]
             and a["impulse"].column("fraction") == ["Original", "0.1", "0.2", "0.3", "0.5"])
    exact = all(t.rows[0][1] == clean.ap for t in a.values())
    same = all(a[k].to_csv() == b[k].to_csv() for k in a)
    verdict(9, shape and exact and same,
            f"6 Gaussian + 5 impulse rows x (AP, mTTA): {shape}, clean row bit-exact: {exact}, deterministic: {same}")


def _frozen_episode(model_cfg, params):
    ds = tiny_dataset(10, n_frames=6, d_img=3, d_obj=2, K=3, n_pos=1, n_neg=0)
    batch = P.collate([ds[0]])
    noise = P.draw_noise([np.random.default_rng([10, 0])], batch, model_cfg.schedule, True)
    return batch, noise


def _same_trace(a, b):
    fields = ("probs", "omega", "hidden", "h_bar", "log_pi", "actions", "values", "norm_rewards", "alphas")
    return all(np.array_equal(getattr(a, f), getattr(b, f)) for f in fields)


def test_10_ablation_identities(verdict):
    from anticipate import dataset as D
    checks = {}
    data = D.gen_synthetic(SMALL_GEN, 10)
    a = Tr.train(data, small_cfg(loss=O.LossConfig(alpha=0.0)))
    s = Tr.train(data, small_cfg(loss=O.LossConfig(use_actor=False, use_critic=False)))
    gap = max(abs(ra["L_total"] - rs["L_total"]) for ra, rs in zip(a.log, s.log))
    checks["alpha=0 == supervised"] = gap <= 1e-12

    mc = P.ModelConfig(d_img=3, d_obj=2, d_att=3, d_hidden=4, d_mlp=3, diffusion_steps=4)
    params = P.init_params(mc, np.random.default_rng(11))
    batch, noise = _frozen_episode(mc, params)
    full = P.forward(params, batch, noise, mc)

    def zeroed(p, *modules, key=None):
        q = P.copy_params(p)
        for m in modules:
            for k in q[m]:
                if key is None or k == key:
                    q[m][k] = np.zeros_like(q[m][k])
        return q

    pairs = {
        "w/o Object Aware Module": ({"object_aware": False}, zeroed(params, "attention", key="w_w")),
        "w/o Image Diffusion": ({"image_diffusion": False}, zeroed(params, "den_img")),
        "w/o Object Diffusion": ({"object_diffusion": False}, zeroed(params, "den_obj")),
        "w/o All Diffusion": ({"image_diffusion": False, "object_diffusion": False},
                              zeroed(params, "den_img", "den_obj")),
    }
    for name, (switch, identity_params) in pairs.items():
        off = P.forward(params, batch, noise, replace(mc, **switch))
        ref = P.forward(identity_params, batch, noise, mc)
        checks[name] = _same_trace(off, ref)
    off = P.forward(params, batch, noise, replace(mc, time_weight=False))
    checks["w/o Time Weight Layer"] = bool(np.all(off.omega == 1.0)) and np.array_equal(off.probs, full.probs)

    base = P.losses(full, mc, O.LossConfig())
    parts = (base.anticipation, base.actor, base.critic)
    for name, flag, k in (("w/o Anticipation Loss", "use_anticipation", 0),
                          ("w/o Policy Gradient Loss", "use_actor", 1), ("w/o Value Loss", "use_critic", 2)):
        coeffs = list(O.LossConfig().coefficients)
        coeffs[k] = 0.0
        got = P.losses(full, mc, O.LossConfig(**{flag: False})).total
        checks[name] = abs(got - sum(c * v for c, v in zip(coeffs, parts))) <= 1e-12
    failed = [k for k, v in checks.items() if not v]
    verdict(10, not failed, f"alpha=0 loss gap {gap:.1e}; {len(checks) - len(failed)}/{len(checks)} identities hold"
                            + (f", failed: {failed}" if failed else ""))


def _snapshot(d):
    return {name: open(os.path.join(d, name), "rb").read() for name in sorted(os.listdir(d))}


def test_11_determinism(verdict, tmp_path):
    cfg = tmp_path / "run.json"
    run = {"gen": {"n_pos": 5, "n_neg": 5, "n_frames": 12, "fps": 4.0, "d_img": 4, "d_obj": 3, "n_objects": 2,
                   "ramp_start": 8, "accident_min": 9, "accident_max": 12, "cue_dims": 2},
           "train": {"epochs": 2, "batch_size": 4, "lr": 0.01,
                     "model": {"d_att": 3, "d_hidden": 5, "d_mlp": 3, "diffusion_steps": 4, "window": 3}}}
    cfg.write_text(json.dumps(run))
    data = str(tmp_path / "d.txt")
    common = ["--no-timestamp", "--quiet"]
    commands = {
        "gen": ["gen", "--config", str(cfg), "--seed", "4", "--out", data],
        "train": ["train", "--data", data, "--config", str(cfg), "--out-dir", str(tmp_path / "train")],
        "train-w0": ["train", "--data", data, "--config", str(cfg), "--window", "0",
                     "--out-dir", str(tmp_path / "frame")],
        "eval": ["eval", "--checkpoint", str(tmp_path / "train" / "checkpoint_final.json"), "--data", data,
                 "--noise", "impulse:0.2", "--out-dir", str(tmp_path / "eval")],
        "sweep": ["sweep", "noise", "--checkpoint", str(tmp_path / "train" / "checkpoint_final.json"),
                  "--data", data, "--out-dir", str(tmp_path / "sweep")],
        "plot": ["plot", "--checkpoint", str(tmp_path / "train" / "checkpoint_final.json"),
                 "--checkpoint-b", str(tmp_path / "frame" / "checkpoint_final.json"), "--data", data,
                 "--out-dir", str(tmp_path / "plot")],
    }
    identical = {}
    for name, argv in commands.items():
        out = os.path.dirname(data) if name == "gen" else argv[argv.index("--out-dir") + 1]
        codes = [main(argv + common)]
        first = _snapshot(out) if name != "gen" else {"d.txt": open(data, "rb").read()}
        codes.append(main(argv + common))
        second = _snapshot(out) if name != "gen" else {"d.txt": open(data, "rb").read()}
        identical[name] = codes == [0, 0] and first == second
    verdict(11, all(identical.values()), f"byte-identical reruns: {identical}")
