import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avresilience.telemetry import (
    RAW_FEATURES,
    Label,
    LabeledDataset,
    SchemaMap,
    TelemetryError,
    TelemetrySample,
    TelemetryTrace,
    TraceConfig,
    balanced_attack_windows,
    extract_features,
    generate_trace,
    load_avp_dataset,
    rolling_stats,
    split_stratified,
    synthetic_blinding_dataset,
)


def _sample(t, **kw):
    base = dict(
        timestamp=t, speed=0.33, commanded_steering=0.0, commanded_throttle=0.2, yaw_rate=0.0,
        lateral_velocity=0.0, depth_mean=3.0, depth_valid_ratio=0.9, min_obstacle_distance=4.0,
        braking_active=False,
    )
    base.update(kw)
    return TelemetrySample(**base)


# -- data model -----------------------------------------------------------------


@pytest.mark.parametrize(
    "field,value", [("depth_valid_ratio", 1.2), ("depth_valid_ratio", -0.1), ("speed", -1.0),
                    ("min_obstacle_distance", -0.5)]
)
def test_sample_invariants_rejected(field, value):
    with pytest.raises(TelemetryError):
        _sample(0.0, **{field: value})


def test_trace_rejects_misaligned_attack_signal():
    with pytest.raises(TelemetryError):
        TelemetryTrace((_sample(0.0), _sample(0.1)), 10.0, (0,))


def test_trace_rejects_irregular_spacing():
    with pytest.raises(TelemetryError):
        TelemetryTrace((_sample(0.0), _sample(0.1), _sample(0.25)), 10.0, (0, 0, 0))


def test_label_parse_and_str():
    assert Label.parse("attack") is Label.ABNORMAL
    assert Label.parse(" Normal ") is Label.NORMAL
    assert str(Label.ABNORMAL) == "Abnormal"
    with pytest.raises(TelemetryError):
        Label.parse("maybe")


def test_dataset_rejects_non_finite_and_mismatch():
    with pytest.raises(TelemetryError):
        LabeledDataset(np.array([[np.nan]]), np.array([0]), ("a",))
    with pytest.raises(TelemetryError):
        LabeledDataset(np.zeros((2, 1)), np.array([0]), ("a",))


# -- loading --------------------------------------------------------------------


def test_load_fixture_drops_non_finite_rows(data_dir):
    # fixture rows 3 (depth_mean = nan) and 6 (min_obstacle_distance = inf) are unusable
    ds = load_avp_dataset(data_dir / "avp_sample.csv")
    assert len(ds) == 8
    assert ds.dropped_rows == 2
    assert ds.class_counts() == {"Normal": 5, "Abnormal": 3}
    assert ds.feature_names == RAW_FEATURES


def test_load_header_only_is_error(data_dir):
    with pytest.raises(TelemetryError, match="zero usable rows"):
        load_avp_dataset(data_dir / "header_only.csv")


def test_load_missing_file(tmp_path):
    with pytest.raises(TelemetryError, match="not found"):
        load_avp_dataset(tmp_path / "nope.csv")


def test_load_missing_mapped_column(data_dir):
    schema = SchemaMap(features={"speed": "velocity"})
    with pytest.raises(TelemetryError, match="missing mapped column"):
        load_avp_dataset(data_dir / "avp_sample.csv", schema)


def test_schema_map_renames_columns(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("v\tdv\tclass\n0.3\t0.9\tN\n0.2\t0.1\tA\n0.1\t0.2\tX\n")
    schema = SchemaMap.from_dict(
        {"features": {"speed": "v", "depth_valid_ratio": "dv"}, "label_column": "class",
         "abnormal_values": ["A"], "normal_values": ["N"], "delimiter": "\t"}
    )
    ds = load_avp_dataset(p, schema)
    assert ds.feature_names == ("speed", "depth_valid_ratio")
    assert ds.labels.tolist() == [0, 1]
    assert ds.dropped_rows == 1


# -- generation -------------------------------------------------------------------


def test_no_attack_trace_is_all_normal():
    tr = generate_trace(TraceConfig(duration=20.0), seed=1)
    assert set(tr.attack_signal) == {0}
    assert set(tr.labels.tolist()) == {0}


def test_sampling_arithmetic():
    tr = generate_trace(TraceConfig(duration=30.0, sample_rate=10.0), seed=2)
    assert len(tr) == 300
    assert tr.timestamps[0] == 0.0
    assert tr.timestamps[-1] == pytest.approx(29.9, abs=1e-12)


def test_generation_is_bit_reproducible():
    cfg = TraceConfig(duration=15.0, attack_windows=((3.0, 6.0),))
    a = generate_trace(cfg, seed=5).to_json()
    b = generate_trace(cfg, seed=5).to_json()
    assert a == b
    assert generate_trace(cfg, seed=6).to_json() != a


def test_trace_json_round_trip():
    tr = generate_trace(TraceConfig(duration=3.0, attack_windows=((1.0, 2.0),)), seed=3)
    assert TelemetryTrace.from_json(tr.to_json()) == tr
    payload = json.loads(tr.to_json())
    assert set(payload) == {"samples", "sample_rate", "attack_signal"}


@pytest.mark.parametrize("windows", [((5.0, 12.0), (10.0, 15.0)), ((-1.0, 2.0),), ((8.0, 25.0),), ((4.0, 4.0),)])
def test_bad_windows_rejected(windows):
    with pytest.raises(TelemetryError):
        TraceConfig(duration=20.0, attack_windows=windows)


def test_blinding_corrupts_depth_health():
    windows = tuple((s, s + 20.0) for s in range(20, 300, 40))
    cfg = TraceConfig(duration=300.0, attack_windows=windows)
    tr = generate_trace(cfg, seed=4)
    inside = tr.labels.astype(bool)
    valid = tr.column("depth_valid_ratio")
    saturated = tr.column("min_obstacle_distance") >= cfg.max_range
    assert np.median(valid[inside]) < np.median(valid[~inside])
    assert saturated[inside].mean() > saturated[~inside].mean()


@given(
    start=st.floats(0.0, 15.0),
    length=st.floats(0.2, 4.0),
    seed=st.integers(0, 2**16),
)
def test_label_iff_attack_signal(start, length, seed):
    cfg = TraceConfig(duration=20.0, attack_windows=((start, start + length),))
    tr = generate_trace(cfg, seed)
    assert tr.labels.tolist() == list(tr.attack_signal)
    t = tr.timestamps
    expected = ((t >= start) & (t < start + length)).astype(int)
    assert list(tr.attack_signal) == expected.tolist()


def test_balanced_windows_cover_half():
    n = 2001
    windows = balanced_attack_windows(n, 10.0, 7, seed=0)
    t = np.arange(n) / 10.0
    covered = sum(((t >= a) & (t < b)).sum() for a, b in windows)
    assert covered == n // 2
    ds = synthetic_blinding_dataset(2000, seed=0, n_windows=10)
    assert ds.class_counts() == {"Normal": 1000, "Abnormal": 1000}


# -- representation map -----------------------------------------------------------


def test_constant_trace_has_zero_variance_features():
    samples = tuple(_sample(i / 10.0) for i in range(30))
    ds = extract_features(TelemetryTrace(samples, 10.0, (0,) * 30))
    var_cols = [i for i, n in enumerate(ds.feature_names) if n.endswith("_var_w")]
    assert np.all(ds.features[:, var_cols] == 0.0)


def test_feature_shape_and_labels():
    tr = generate_trace(TraceConfig(duration=30.0, attack_windows=((10.0, 20.0),)), seed=9)
    ds = extract_features(tr, window=10)
    assert ds.features.shape == (300, len(RAW_FEATURES) + 4)
    t = tr.timestamps
    assert np.array_equal(ds.labels == 1, (t >= 10.0) & (t < 20.0))


def test_short_or_empty_trace_rejected():
    samples = tuple(_sample(i / 10.0) for i in range(5))
    with pytest.raises(TelemetryError):
        extract_features(TelemetryTrace(samples, 10.0, (0,) * 5), window=10)
    with pytest.raises(TelemetryError):
        extract_features(TelemetryTrace((), 10.0, ()), window=10)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40), st.integers(1, 12))
def test_rolling_stats_match_naive_oracle(values, window):
    x = np.array(values)
    mean, var = rolling_stats(x, window)
    for i in range(len(x)):
        w = x[max(0, i - window + 1): i + 1]
        m = sum(w) / len(w)
        v = sum((a - m) ** 2 for a in w) / len(w)
        assert mean[i] == pytest.approx(m, rel=1e-9, abs=1e-9)
        assert var[i] == pytest.approx(v, rel=1e-6, abs=1e-6)


# -- folds ----------------------------------------------------------------------------


def test_split_divisible_counts():
    ds = LabeledDataset(np.zeros((100, 1)), np.array([0] * 50 + [1] * 50), ("x",))
    folds = split_stratified(ds, 5, seed=0)
    for f in range(5):
        idx = folds.test_indices(f)
        assert (ds.labels[idx] == 0).sum() == 10
        assert (ds.labels[idx] == 1).sum() == 10


def test_split_rejects_small_class():
    ds = LabeledDataset(np.zeros((10, 1)), np.array([0] * 7 + [1] * 3), ("x",))
    split_stratified(ds, 3, seed=0)
    with pytest.raises(TelemetryError):
        split_stratified(ds, 4, seed=0)
    with pytest.raises(TelemetryError):
        split_stratified(ds, 1, seed=0)


@given(
    n_normal=st.integers(2, 200),
    n_abnormal=st.integers(2, 200),
    k=st.integers(2, 10),
    seed=st.integers(0, 1000),
)
def test_split_properties(n_normal, n_abnormal, k, seed):
    if min(n_normal, n_abnormal) < k:
        return
    labels = np.array([0] * n_normal + [1] * n_abnormal)
    ds = LabeledDataset(np.zeros((labels.size, 1)), labels, ("x",))
    folds = split_stratified(ds, k, seed)
    assign = folds.fold_index_per_sample
    assert assign.shape == (labels.size,)
    assert set(np.unique(assign)) <= set(range(k))
    seen = np.concatenate([folds.test_indices(f) for f in range(k)])
    assert sorted(seen.tolist()) == list(range(labels.size))
    for cls, n_cls in ((0, n_normal), (1, n_abnormal)):
        for f in range(k):
            count = int(((assign == f) & (labels == cls)).sum())
            assert abs(count - n_cls / k) <= 1
    sizes = folds.sizes()
    assert max(sizes) - min(sizes) <= 1
    assert np.array_equal(split_stratified(ds, k, seed).fold_index_per_sample, assign)
