"""Vehicle telemetry: data model, synthetic blinding traces, feature map and fold splitting.

A trace is a uniformly sampled sequence of :class:`TelemetrySample` rows plus the
binary attack-device signal recorded alongside it.  :func:`extract_features` turns
a trace into a :class:`LabeledDataset` (raw fields plus trailing-window statistics
of the two depth-health signals), which is what the detectors consume.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

RAW_FEATURES: tuple[str, ...] = (
    "speed",
    "commanded_steering",
    "commanded_throttle",
    "yaw_rate",
    "lateral_velocity",
    "depth_mean",
    "depth_valid_ratio",
    "min_obstacle_distance",
    "braking_active",
)
WINDOWED_SIGNALS: tuple[str, ...] = ("depth_valid_ratio", "min_obstacle_distance")
DEFAULT_WINDOW = 10
SPACING_TOL = 1e-9


class TelemetryError(ValueError):
    """Raised for malformed traces, configs or datasets."""


class Label(enum.IntEnum):
    NORMAL = 0
    ABNORMAL = 1

    @classmethod
    def parse(cls, value: "str | int | Label") -> "Label":
        if isinstance(value, Label):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower()
        if key in ("normal", "0"):
            return cls.NORMAL
        if key in ("abnormal", "1", "attack"):
            return cls.ABNORMAL
        raise TelemetryError(f"unknown label {value!r}")

    def __str__(self) -> str:
        return "Normal" if self is Label.NORMAL else "Abnormal"


@dataclass(frozen=True)
class TelemetrySample:
    timestamp: float
    speed: float
    commanded_steering: float
    commanded_throttle: float
    yaw_rate: float
    lateral_velocity: float
    depth_mean: float
    depth_valid_ratio: float
    min_obstacle_distance: float
    braking_active: bool
    label: Label = Label.NORMAL

    def __post_init__(self) -> None:
        if not 0.0 <= self.depth_valid_ratio <= 1.0:
            raise TelemetryError(f"depth_valid_ratio out of [0, 1]: {self.depth_valid_ratio}")
        if self.speed < 0:
            raise TelemetryError(f"negative speed: {self.speed}")
        if self.min_obstacle_distance < 0:
            raise TelemetryError(f"negative obstacle distance: {self.min_obstacle_distance}")

    def raw_vector(self) -> list[float]:
        return [float(getattr(self, name)) for name in RAW_FEATURES]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label"] = str(self.label)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TelemetrySample":
        d = dict(d)
        d["label"] = Label.parse(d["label"])
        d["braking_active"] = bool(d["braking_active"])
        return cls(**d)


@dataclass(frozen=True)
class TelemetryTrace:
    samples: tuple[TelemetrySample, ...]
    sample_rate: float
    attack_signal: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.samples) != len(self.attack_signal):
            raise TelemetryError("attack_signal must align 1:1 with samples")
        if self.sample_rate <= 0:
            raise TelemetryError("sample_rate must be positive")
        dt = 1.0 / self.sample_rate
        for prev, cur in zip(self.samples, self.samples[1:]):
            if abs((cur.timestamp - prev.timestamp) - dt) > SPACING_TOL:
                raise TelemetryError(
                    f"sample spacing at t={cur.timestamp} deviates from 1/sample_rate"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([s.timestamp for s in self.samples], dtype=float)

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(s.label) for s in self.samples], dtype=np.int8)

    def column(self, name: str) -> np.ndarray:
        return np.array([float(getattr(s, name)) for s in self.samples], dtype=float)

    def to_json(self) -> str:
        payload = {
            "samples": [s.to_dict() for s in self.samples],
            "sample_rate": self.sample_rate,
            "attack_signal": list(self.attack_signal),
        }
        # json uses repr() for floats: shortest round-trip form, 17 significant digits max
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TelemetryTrace":
        payload = json.loads(text)
        return cls(
            samples=tuple(TelemetrySample.from_dict(s) for s in payload["samples"]),
            sample_rate=float(payload["sample_rate"]),
            attack_signal=tuple(int(a) for a in payload["attack_signal"]),
        )


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    dropped_rows: int = 0

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=float)
        labels = np.array(self.labels, dtype=np.int8)
        if features.ndim != 2:
            raise TelemetryError("features must be a 2-D matrix")
        if features.shape[0] != labels.shape[0]:
            raise TelemetryError("row count of features must equal label count")
        if features.shape[1] != len(self.feature_names):
            raise TelemetryError("feature_names must name every column")
        if not np.all(np.isfinite(features)):
            raise TelemetryError("features contain non-finite values")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise TelemetryError("labels must be 0 (Normal) or 1 (Abnormal)")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> dict[str, int]:
        n_abnormal = int(self.labels.sum())
        return {"Normal": len(self) - n_abnormal, "Abnormal": n_abnormal}

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.features[indices], self.labels[indices], self.feature_names)


# -- synthetic generation -----------------------------------------------------


@dataclass(frozen=True)
class TraceConfig:
    """Parameters of the synthetic vehicle/depth-camera model.

    Attack windows are half-open ``[start, end)`` intervals in seconds.
    """

    duration: float
    sample_rate: float = 10.0
    nominal_speed: float = 0.33
    attack_windows: tuple[tuple[float, float], ...] = ()
    max_range: float = 10.0
    wheelbase: float = 0.256
    brake_distance: float = 0.6
    obstacle_rate: float = 0.08  # obstacle appearances per second
    glare_rate: float = 0.08  # benign depth-dropout episodes per second
    blinding_strength: tuple[float, float] = (0.3, 1.0)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "attack_windows", tuple((float(a), float(b)) for a, b in self.attack_windows)
        )
        object.__setattr__(self, "blinding_strength", tuple(self.blinding_strength))
        if self.duration <= 0:
            raise TelemetryError("duration must be positive")
        if self.sample_rate <= 0:
            raise TelemetryError("sample_rate must be positive")
        if self.nominal_speed < 0:
            raise TelemetryError("nominal_speed must be non-negative")
        prev_end = -math.inf
        for start, end in sorted(self.attack_windows):
            if not (0.0 <= start < end <= self.duration):
                raise TelemetryError(f"attack window [{start}, {end}) outside [0, {self.duration}]")
            if start < prev_end:
                raise TelemetryError(f"attack window [{start}, {end}) overlaps another window")
            prev_end = end

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @classmethod
    def from_dict(cls, d: Mapping) -> "TraceConfig":
        d = dict(d)
        if "attack_windows" in d:
            d["attack_windows"] = tuple(tuple(w) for w in d["attack_windows"])
        if "blinding_strength" in d:
            d["blinding_strength"] = tuple(d["blinding_strength"])
        return cls(**d)


def attack_mask(timestamps: np.ndarray, windows: Iterable[tuple[float, float]]) -> np.ndarray:
    mask = np.zeros(timestamps.shape, dtype=bool)
    for start, end in windows:
        mask |= (timestamps >= start) & (timestamps < end)
    return mask


def _ar1(rng: np.random.Generator, n: int, rho: float, sigma: float) -> np.ndarray:
    eps = rng.normal(0.0, sigma, n)
    out = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = rho * acc + eps[i]
        out[i] = acc
    return out


def _episodes(rng: np.random.Generator, t: np.ndarray, rate: float, lo: float, hi: float) -> np.ndarray:
    """Per-sample multiplicative dip factor from a Poisson process of dropout episodes."""
    factor = np.ones_like(t)
    if t.size == 0 or rate <= 0:
        return factor
    duration = t[-1] + (t[1] - t[0] if t.size > 1 else 1.0)
    n_events = rng.poisson(rate * duration)
    starts = rng.uniform(0.0, duration, n_events)
    lengths = rng.uniform(0.5, 3.0, n_events)
    depths = rng.uniform(lo, hi, n_events)
    for s, ln, dp in zip(starts, lengths, depths):
        sel = (t >= s) & (t < s + ln)
        factor[sel] = np.minimum(factor[sel], dp)
    return factor


def generate_trace(config: TraceConfig, seed: int) -> TelemetryTrace:
    """Generate a labeled synthetic trace; deterministic in ``(config, seed)``.

    Inside attack windows the depth camera is blinded: the valid-pixel ratio is
    scaled toward 0 by a per-sample blinding intensity, hidden obstacles read as
    ``max_range`` and the scene depth mean turns to noise.  Benign glare episodes
    produce milder valid-ratio dips outside attacks so the classes overlap.
    """
    rng = np.random.default_rng(seed)
    n = config.n_samples
    dt = 1.0 / config.sample_rate
    t = np.arange(n, dtype=float) / config.sample_rate
    attacked = attack_mask(t, config.attack_windows)

    phases = rng.uniform(0.0, 2 * np.pi, 2)
    steering = (
        0.15 * np.sin(2 * np.pi * t / 20.0 + phases[0])
        + 0.06 * np.sin(2 * np.pi * t / 7.0 + phases[1])
        + _ar1(rng, n, 0.95, 0.01)
    )
    speed_noise = _ar1(rng, n, 0.9, 0.01)
    background = (
        3.0
        + 0.5 * np.sin(2 * np.pi * t / 30.0 + phases[1])
        + _ar1(rng, n, 0.99, 0.05)
        + rng.normal(0.0, 0.15, n)
    )
    glare = _episodes(rng, t, config.glare_rate, 0.3, 0.8)
    valid_base = np.clip(0.88 + _ar1(rng, n, 0.98, 0.01) + rng.normal(0.0, 0.02, n), 0.0, 1.0) * glare
    range_noise = rng.normal(0.0, 0.03, n)
    lo, hi = config.blinding_strength
    window_strength = {w: rng.uniform(lo, hi) for w in config.attack_windows}
    intensity = np.zeros(n)
    for (start, end), s in window_strength.items():
        sel = (t >= start) & (t < end)
        intensity[sel] = s * rng.uniform(0.6, 1.0, int(sel.sum()))
    hidden_draw = rng.uniform(0.0, 1.0, n)
    scene_noise = rng.normal(0.0, 1.0, n)
    spawn_draw = rng.uniform(0.0, 1.0, n)
    spawn_dist = rng.uniform(1.5, 0.8 * config.max_range, n)

    speed = np.empty(n)
    throttle = np.empty(n)
    braking = np.zeros(n, dtype=bool)
    min_dist = np.empty(n)
    depth_mean = np.empty(n)
    valid = np.empty(n)

    obstacle = math.inf
    brake_left = 0
    hold = max(1, int(round(1.0 * config.sample_rate)))
    for i in range(n):
        if obstacle == math.inf and spawn_draw[i] < config.obstacle_rate * dt:
            obstacle = spawn_dist[i]
        true_dist = min(obstacle, config.max_range)
        seen = float(np.clip(true_dist + range_noise[i], 0.0, config.max_range))
        v_ratio = valid_base[i]
        d_mean = 0.5 * true_dist + 0.5 * background[i]
        if attacked[i]:
            e = intensity[i]
            v_ratio = v_ratio * (1.0 - e)
            if hidden_draw[i] < e:
                seen = config.max_range
            d_mean = (1.0 - 0.4 * e) * d_mean + 0.6 * e * scene_noise[i]
        if brake_left == 0 and seen < config.brake_distance:
            brake_left = hold
        if brake_left > 0:
            braking[i] = True
            brake_left -= 1
            if brake_left == 0:
                obstacle = math.inf
        v = config.nominal_speed * (1.0 + speed_noise[i])
        if braking[i]:
            v *= 0.2
        v = max(v, 0.0)
        speed[i] = v
        throttle[i] = 0.0 if braking[i] else float(np.clip(v / 2.0 + 0.02, 0.0, 1.0))
        min_dist[i] = seen
        depth_mean[i] = float(np.clip(d_mean, 0.0, config.max_range))
        valid[i] = float(np.clip(v_ratio, 0.0, 1.0))
        if obstacle != math.inf:
            obstacle = max(obstacle - v * dt, 0.05)

    yaw_rate = speed * np.tan(steering) / config.wheelbase + rng.normal(0.0, 0.005, n)
    lateral = 0.5 * config.wheelbase * yaw_rate + rng.normal(0.0, 0.002, n)

    samples = tuple(
        TelemetrySample(
            timestamp=float(t[i]),
            speed=float(speed[i]),
            commanded_steering=float(steering[i]),
            commanded_throttle=float(throttle[i]),
            yaw_rate=float(yaw_rate[i]),
            lateral_velocity=float(lateral[i]),
            depth_mean=float(depth_mean[i]),
            depth_valid_ratio=float(valid[i]),
            min_obstacle_distance=float(min_dist[i]),
            braking_active=bool(braking[i]),
            label=Label.ABNORMAL if attacked[i] else Label.NORMAL,
        )
        for i in range(n)
    )
    return TelemetryTrace(samples, float(config.sample_rate), tuple(int(a) for a in attacked))


def balanced_attack_windows(
    n_samples: int, sample_rate: float, n_windows: int, seed: int
) -> tuple[tuple[float, float], ...]:
    """Attack windows that cover exactly half of ``n_samples`` (rounded down)."""
    if n_samples < 4 * n_windows:
        raise TelemetryError("too few samples for the requested number of windows")
    rng = np.random.default_rng(seed)
    n_attack = n_samples // 2
    n_normal = n_samples - n_attack
    attack_cuts = np.sort(rng.choice(np.arange(1, n_attack), n_windows - 1, replace=False))
    attack_len = np.diff(np.concatenate(([0], attack_cuts, [n_attack])))
    normal_cuts = np.sort(rng.choice(np.arange(1, n_normal), n_windows, replace=False))
    normal_len = np.diff(np.concatenate(([0], normal_cuts, [n_normal])))
    windows = []
    pos = 0
    for i in range(n_windows):
        pos += int(normal_len[i])
        start = pos
        pos += int(attack_len[i])
        windows.append((start / sample_rate, pos / sample_rate))
    return tuple(windows)


def synthetic_blinding_dataset(
    n_samples: int = 20_000,
    seed: int = 0,
    sample_rate: float = 10.0,
    n_windows: int = 60,
    window: int = DEFAULT_WINDOW,
    **config_overrides,
) -> LabeledDataset:
    """Balanced labeled dataset from one long synthetic trace with blinding windows."""
    windows = balanced_attack_windows(n_samples, sample_rate, n_windows, seed)
    config = TraceConfig(
        duration=n_samples / sample_rate,
        sample_rate=sample_rate,
        attack_windows=windows,
        **config_overrides,
    )
    return extract_features(generate_trace(config, seed), window=window)


# -- representation map -------------------------------------------------------


def windowed_feature_names(window: int = DEFAULT_WINDOW) -> tuple[str, ...]:
    names = []
    for sig in WINDOWED_SIGNALS:
        names += [f"{sig}_mean_w", f"{sig}_var_w"]
    return tuple(names)


def rolling_stats(x: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Trailing mean and population variance; the first rows use shrinking windows."""
    n = x.shape[0]
    mean = np.empty(n)
    var = np.empty(n)
    head = min(window - 1, n)
    for i in range(head):
        w = x[: i + 1]
        mean[i] = w.mean()
        var[i] = 0.0 if np.ptp(w) == 0 else w.var()
    if n >= window:
        views = sliding_window_view(x, window)
        mean[window - 1 :] = views.mean(axis=1)
        v = views.var(axis=1)
        v[np.ptp(views, axis=1) == 0] = 0.0
        var[window - 1 :] = v
    return mean, var


def extract_features(trace: TelemetryTrace, window: int = DEFAULT_WINDOW) -> LabeledDataset:
    """Map a trace to feature rows: the raw fields plus trailing-window statistics.

    Only past samples enter a window, so the map is causal and can be applied
    incrementally in a closed loop.
    """
    if len(trace) == 0:
        raise TelemetryError("trace is empty")
    if window < 1:
        raise TelemetryError("window must be >= 1")
    if len(trace) < window:
        raise TelemetryError(f"trace of {len(trace)} samples is shorter than window {window}")
    raw = np.array([s.raw_vector() for s in trace.samples], dtype=float)
    extra = []
    for sig in WINDOWED_SIGNALS:
        col = raw[:, RAW_FEATURES.index(sig)]
        m, v = rolling_stats(col, window)
        extra += [m, v]
    features = np.column_stack([raw] + extra)
    return LabeledDataset(features, trace.labels, RAW_FEATURES + windowed_feature_names(window))


# -- external datasets --------------------------------------------------------


@dataclass(frozen=True)
class SchemaMap:
    """Binds feature names to columns of an external delimited table."""

    features: Mapping[str, str] = field(default_factory=lambda: {f: f for f in RAW_FEATURES})
    label_column: str = "label"
    abnormal_values: tuple[str, ...] = ("1", "abnormal", "attack")
    normal_values: tuple[str, ...] = ("0", "normal")
    delimiter: str = ","

    @classmethod
    def from_dict(cls, d: Mapping) -> "SchemaMap":
        d = dict(d)
        for key in ("abnormal_values", "normal_values"):
            if key in d:
                d[key] = tuple(str(v).lower() for v in d[key])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "SchemaMap":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _parse_finite(cell: str) -> float | None:
    try:
        value = float(cell)
    except (TypeError, ValueError):
        return None
    return value if math.isfinite(value) else None


def load_avp_dataset(path: str | Path, schema_map: SchemaMap | None = None) -> LabeledDataset:
    """Load a delimited table with a header row into a :class:`LabeledDataset`.

    Rows with a missing or non-finite feature cell, or an unrecognized label,
    are dropped and counted in ``dropped_rows``.
    """
    schema = schema_map or SchemaMap()
    path = Path(path)
    if not path.is_file():
        raise TelemetryError(f"dataset file not found: {path}")
    names = tuple(schema.features)
    rows: list[list[float]] = []
    labels: list[int] = []
    dropped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=schema.delimiter)
        header = reader.fieldnames or []
        wanted = list(schema.features.values()) + [schema.label_column]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise TelemetryError(f"missing mapped column(s): {', '.join(missing)}")
        for rec in reader:
            values = [_parse_finite(rec[schema.features[name]]) for name in names]
            label_raw = (rec[schema.label_column] or "").strip().lower()
            if label_raw in schema.abnormal_values:
                label = 1
            elif label_raw in schema.normal_values:
                label = 0
            else:
                label = None
            if label is None or any(v is None for v in values):
                dropped += 1
                continue
            rows.append(values)  # type: ignore[arg-type]
            labels.append(label)
    if not rows:
        raise TelemetryError("zero usable rows")
    ds = LabeledDataset(np.array(rows, dtype=float), np.array(labels), names, dropped_rows=dropped)
    counts = ds.class_counts()
    logger.info(
        "loaded %d rows from %s (Normal=%d, Abnormal=%d, dropped=%d)",
        len(ds), path, counts["Normal"], counts["Abnormal"], dropped,
    )
    return ds


# -- stratified folds ---------------------------------------------------------


@dataclass(frozen=True)
class FoldAssignment:
    fold_index_per_sample: np.ndarray
    k: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.fold_index_per_sample, dtype=np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "fold_index_per_sample", arr)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_index_per_sample == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_index_per_sample != fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.fold_index_per_sample, minlength=self.k).tolist()


def split_stratified(dataset: LabeledDataset, k: int, seed: int) -> FoldAssignment:
    """Assign every sample to one of ``k`` folds, preserving class proportions.

    Each class is shuffled and dealt round-robin; the deal continues across
    classes so fold totals also differ by at most one.
    """
    if k < 2:
        raise TelemetryError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(dataset), dtype=np.int64)
    dealt = 0
    for cls in (Label.NORMAL, Label.ABNORMAL):
        idx = np.flatnonzero(dataset.labels == int(cls))
        if idx.size < k:
            raise TelemetryError(f"class {cls} has {idx.size} samples, fewer than k={k}")
        idx = rng.permutation(idx)
        folds[idx] = (dealt + np.arange(idx.size)) % k
        dealt += idx.size
    return FoldAssignment(folds, k)


def as_dataset(rows: Sequence[Sequence[float]], labels: Sequence[int], names: Sequence[str]) -> LabeledDataset:
    return LabeledDataset(np.asarray(rows, dtype=float), np.asarray(labels), tuple(names))
