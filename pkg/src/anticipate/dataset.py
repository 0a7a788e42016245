"""Feature-sequence datasets: synthetic generation, file I/O and corruption.

A video is represented by its per-frame features only: one global image
vector and ``K`` object vectors per frame, plus a presence mask.  Positive
scenarios carry a slowly growing "cue ramp" in a fixed subspace of the
features that starts some frames before the accident.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, ParseError

FORMAT_NAME = "anticipate.dataset"
FORMAT_VERSION = "1"


@dataclass
class FeatureSequence:
    image_feats: np.ndarray   # (N, d_img)
    object_feats: np.ndarray  # (N, K, d_obj)
    object_mask: np.ndarray   # (N, K) bool
    fps: float

    def __post_init__(self):
        self.image_feats = np.asarray(self.image_feats, dtype=np.float64)
        self.object_feats = np.asarray(self.object_feats, dtype=np.float64)
        self.object_mask = np.asarray(self.object_mask, dtype=bool)

    @property
    def n_frames(self) -> int:
        return self.image_feats.shape[0]

    @property
    def n_objects(self) -> int:
        return self.object_feats.shape[1]

    @property
    def d_img(self) -> int:
        return self.image_feats.shape[1]

    @property
    def d_obj(self) -> int:
        return self.object_feats.shape[2]

    def validate(self, allow_empty_frames: bool = False) -> None:
        if self.image_feats.ndim != 2 or self.object_feats.ndim != 3 or self.object_mask.ndim != 2:
            raise ValueError("feature arrays have the wrong rank")
        n = self.image_feats.shape[0]
        if n < 1 or self.object_feats.shape[1] < 1:
            raise ValueError("need at least one frame and one object slot")
        if self.object_feats.shape[0] != n or self.object_mask.shape != self.object_feats.shape[:2]:
            raise ValueError("frame/object counts disagree between arrays")
        if not (np.all(np.isfinite(self.image_feats)) and np.all(np.isfinite(self.object_feats))):
            raise ValueError("features must be finite")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if not allow_empty_frames and not np.all(self.object_mask.any(axis=1)):
            raise ValueError("frame with no present object")

    def equals(self, other: "FeatureSequence") -> bool:
        return (
            self.fps == other.fps
            and np.array_equal(self.image_feats, other.image_feats)
            and np.array_equal(self.object_feats, other.object_feats)
            and np.array_equal(self.object_mask, other.object_mask)
        )


@dataclass(frozen=True)
class ScenarioLabel:
    positive: bool
    accident_frame: int = 0  # 1-based; 0 iff negative

    def validate(self, n_frames: int) -> None:
        if self.positive != (self.accident_frame >= 1):
            raise ValueError("positive label requires accident_frame >= 1 and negatives 0")
        if self.accident_frame > n_frames:
            raise ValueError(f"accident_frame {self.accident_frame} beyond {n_frames} frames")


@dataclass
class Dataset:
    sequences: list  # list[tuple[FeatureSequence, ScenarioLabel]]
    generation_seed: Optional[int] = None
    version: str = FORMAT_VERSION

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    @property
    def dims(self) -> tuple[int, int, int]:
        seq = self.sequences[0][0]
        return seq.d_img, seq.d_obj, seq.n_objects

    @property
    def labels(self) -> list[ScenarioLabel]:
        return [lab for _, lab in self.sequences]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.sequences[i] for i in indices], self.generation_seed, self.version)

    def validate(self, allow_empty_frames: bool = False) -> None:
        if not self.sequences:
            raise ValueError("dataset is empty")
        ref = self.dims
        for i, (seq, lab) in enumerate(self.sequences):
            try:
                seq.validate(allow_empty_frames)
                lab.validate(seq.n_frames)
            except ValueError as exc:
                raise ValueError(f"sequence {i}: {exc}") from None
            got = (seq.d_img, seq.d_obj, seq.n_objects)
            if got != ref:
                raise ValueError(f"sequence {i}: dims (d_img, d_obj, K)={got} differ from {ref}")

    def equals(self, other: "Dataset") -> bool:
        if len(self) != len(other) or self.generation_seed != other.generation_seed:
            return False
        return all(
            a.equals(b) and la == lb
            for (a, la), (b, lb) in zip(self.sequences, other.sequences)
        )


# ---------------------------------------------------------------- generation

@dataclass(frozen=True)
class GenConfig:
    n_pos: int = 100
    n_neg: int = 100
    n_frames: int = 100
    fps: float = 20.0
    d_img: int = 64
    d_obj: int = 64
    n_objects: int = 5
    ramp_start: int = 70        # frames before the accident frame where the cue starts
    ramp_slope: float = 0.1     # cue growth per frame, in noise-floor units
    noise_floor: float = 1.0    # stationary std of every feature component
    cue_dims: int = 8
    accident_min: int = 80      # accident frame range (1-based, inclusive)
    accident_max: int = 95
    ar_coef: float = 0.5        # lag-1 autocorrelation of the background noise
    p_missing: float = 0.2      # chance that a non-essential object slot is empty
    allow_empty_frames: bool = False

    def validate(self) -> None:
        if self.n_pos < 0 or self.n_neg < 0 or self.n_pos + self.n_neg == 0:
            raise ConfigError("need a non-zero number of sequences (n_pos + n_neg > 0)")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if min(self.d_img, self.d_obj, self.n_objects, self.cue_dims) < 1:
            raise ConfigError("dimensions must be positive")
        if self.cue_dims > min(self.d_img, self.d_obj):
            raise ConfigError("cue_dims cannot exceed the feature dimension")
        if not self.fps > 0:
            raise ConfigError("fps must be positive")
        if not 0 <= self.ramp_start < self.n_frames:
            raise ConfigError(f"ramp_start must lie in [0, n_frames); got {self.ramp_start}")
        if not 1 <= self.accident_min <= self.accident_max <= self.n_frames:
            raise ConfigError("need 1 <= accident_min <= accident_max <= n_frames")
        if self.noise_floor < 0 or not 0 <= self.ar_coef < 1 or not 0 <= self.p_missing <= 1:
            raise ConfigError("noise_floor >= 0, ar_coef in [0,1), p_missing in [0,1] required")


PRESETS = {
    "dad-like": GenConfig(),
    "ccd-like": GenConfig(n_frames=50, fps=10.0, ramp_start=35, accident_min=40, accident_max=48),
    # the 4096-d VGG / 19-object shape; far too big for tests
    "full-scale": GenConfig(d_img=4096, d_obj=4096, n_objects=19),
}


def _ar_noise(rng: np.random.Generator, shape, coef: float, scale: float) -> np.ndarray:
    # stationary AR(1) along axis 0 with marginal std `scale`
    z = rng.standard_normal(shape)
    out = np.empty(shape)
    out[0] = z[0]
    innov = np.sqrt(1.0 - coef * coef)
    for t in range(1, shape[0]):
        out[t] = coef * out[t - 1] + innov * z[t]
    return scale * out


def cue_direction(config: GenConfig, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Planted cue subspace for a (config, seed) pair.

    Returns ``(indices, image_signs, object_signs)``: the feature components
    that carry the ramp and the +-1 direction it drifts in.
    """
    rng = np.random.default_rng([seed, 0])
    idx = np.arange(config.cue_dims)
    img_sign = rng.choice([-1.0, 1.0], size=config.cue_dims)
    obj_sign = rng.choice([-1.0, 1.0], size=config.cue_dims)
    return idx, img_sign, obj_sign


def gen_synthetic(config: GenConfig, seed: int) -> Dataset:
    config.validate()
    idx, img_sign, obj_sign = cue_direction(config, seed)
    N, K = config.n_frames, config.n_objects
    flags = [True] * config.n_pos + [False] * config.n_neg
    order = np.random.default_rng([seed, 1]).permutation(len(flags))
    sequences = []
    for i, j in enumerate(order):
        positive = flags[j]
        rng = np.random.default_rng([seed, 2, i])
        img = _ar_noise(rng, (N, config.d_img), config.ar_coef, config.noise_floor)
        obj = _ar_noise(rng, (N, K, config.d_obj), config.ar_coef, config.noise_floor)
        mask = rng.random((N, K)) >= config.p_missing
        risky = int(rng.integers(K))
        if not config.allow_empty_frames:
            # the risky slot is always occupied
            mask[:, risky] = True
        tau = 0
        if positive:
            tau = int(rng.integers(config.accident_min, config.accident_max + 1))
            onset = tau - 1 - config.ramp_start
            k = np.maximum(0, np.arange(N) - onset) * config.ramp_slope
            img[:, idx] += k[:, None] * img_sign
            obj[:, risky, idx] += k[:, None] * obj_sign
            mask[:, risky] = True
        obj[~mask] = 0.0
        sequences.append((FeatureSequence(img, obj, mask, float(config.fps)), ScenarioLabel(positive, tau)))
    return Dataset(sequences, generation_seed=int(seed))


def planted_cue_scores(dataset: Dataset, config: GenConfig, seed: int) -> np.ndarray:
    """Video scores from a direct linear read-out of the planted subspace.

    Per frame the score is the mean of the signed cue components of the image
    vector; the video score is its maximum over frames.
    """
    idx, img_sign, _ = cue_direction(config, seed)
    return np.array([(seq.image_feats[:, idx] * img_sign).mean(axis=1).max() for seq, _ in dataset])


# ---------------------------------------------------------------- corruption

def inject_gaussian(seq: FeatureSequence, sigma: float, seed) -> FeatureSequence:
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return replace(seq, image_feats=seq.image_feats.copy(), object_feats=seq.object_feats.copy())
    rng = np.random.default_rng(seed)
    img = seq.image_feats + rng.normal(0.0, sigma, seq.image_feats.shape)
    obj = seq.object_feats + rng.normal(0.0, sigma, seq.object_feats.shape)
    return FeatureSequence(img, obj, seq.object_mask.copy(), seq.fps)


def _impulse(x: np.ndarray, fraction: float, magnitude: float, rng) -> np.ndarray:
    # each component is hit independently with probability `fraction`
    hit = rng.random(x.shape) < fraction
    signs = np.where(rng.random(x.shape) < 0.5, -magnitude, magnitude)
    return np.where(hit, signs, x)


def inject_impulse(seq: FeatureSequence, fraction: float, magnitude: float = 3.0, seed=0) -> FeatureSequence:
    """Replace each feature component by +-magnitude with probability ``fraction``."""
    if not 0.0 <= fraction <= 1.0:
        raise DomainError(f"fraction must lie in [0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    img = _impulse(seq.image_feats, fraction, magnitude, rng)
    obj = _impulse(seq.object_feats, fraction, magnitude, rng)
    return FeatureSequence(img, obj, seq.object_mask.copy(), seq.fps)


def corrupt_dataset(dataset: Dataset, kind: str, level: float, seed: int, magnitude: float = 3.0) -> Dataset:
    """Apply one corruption to every sequence; sequence ``i`` uses stream ``[seed, i]``."""
    out = []
    for i, (seq, lab) in enumerate(dataset):
        if kind == "gaussian":
            seq = inject_gaussian(seq, level, [seed, i])
        elif kind == "impulse":
            seq = inject_impulse(seq, level, magnitude, [seed, i])
        else:
            raise DomainError(f"unknown noise kind {kind!r}")
        out.append((seq, lab))
    return Dataset(out, dataset.generation_seed, dataset.version)


# ---------------------------------------------------------------- file format

def _header(dataset: Dataset) -> dict:
    d_img, d_obj, k = dataset.dims
    fps = {seq.fps for seq, _ in dataset}
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "d_img": d_img,
        "d_obj": d_obj,
        "n_objects": k,
        "fps": fps.pop() if len(fps) == 1 else None,
        "n_sequences": len(dataset),
        "generation_seed": dataset.generation_seed,
    }


def dumps(dataset: Dataset) -> str:
    dataset.validate(allow_empty_frames=True)
    lines = [json.dumps(_header(dataset), sort_keys=True)]
    for i, (seq, lab) in enumerate(dataset):
        rec = {
            "index": i,
            "positive": lab.positive,
            "accident_frame": lab.accident_frame,
            "fps": seq.fps,
            "image_feats": seq.image_feats.tolist(),
            "object_feats": seq.object_feats.tolist(),
            "object_mask": seq.object_mask.astype(int).tolist(),
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def save(dataset: Dataset, path) -> None:
    text = dumps(dataset)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _parse_record(line: str, i: int, header: dict) -> tuple[FeatureSequence, ScenarioLabel]:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"sequence {i}: malformed record ({exc.msg})") from None
    try:
        if rec.get("index") != i:
            raise ValueError(f"record index {rec.get('index')!r} out of order")
        seq = FeatureSequence(
            np.array(rec["image_feats"], dtype=np.float64),
            np.array(rec["object_feats"], dtype=np.float64),
            np.array(rec["object_mask"], dtype=bool),
            float(rec["fps"]),
        )
        lab = ScenarioLabel(bool(rec["positive"]), int(rec["accident_frame"]))
        seq.validate(allow_empty_frames=True)
        lab.validate(seq.n_frames)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"sequence {i}: {exc}") from None
    want = (header["d_img"], header["d_obj"], header["n_objects"])
    got = (seq.d_img, seq.d_obj, seq.n_objects)
    if got != want:
        raise ParseError(f"sequence {i}: dims (d_img, d_obj, K)={got} but header declares {want}")
    return seq, lab


def loads(text: str) -> Dataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise ParseError("header: malformed") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise ParseError("header: not an anticipate dataset file")
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"header: unsupported version {header.get('version')!r} (expected {FORMAT_VERSION!r})")
    for key in ("d_img", "d_obj", "n_objects", "n_sequences"):
        if not isinstance(header.get(key), int) or header[key] < 1:
            raise ParseError(f"header: bad or missing {key!r}")
    records = lines[1:]
    if len(records) != header["n_sequences"]:
        raise ParseError(
            f"sequence {len(records)}: file truncated or padded, header declares "
            f"{header['n_sequences']} sequences but {len(records)} records found"
        )
    sequences = [_parse_record(line, i, header) for i, line in enumerate(records)]
    return Dataset(sequences, header.get("generation_seed"), header["version"])


def load(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
