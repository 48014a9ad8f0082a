#!/usr/bin/env python3
"""
Tests for CSV loading, the frozen preprocessing pipeline, slicing and splits.
Run: pytest test_tabular_data.py -v
"""
import json
import os

import numpy as np
import pandas as pd
import pytest

import config
from errors import (
    AllMissingColumn,
    FingerprintMismatch,
    InvalidSplitRatios,
    MissingFile,
    NonContinuousSliceColumn,
    SchemaMismatch,
    TooFewRows,
    UnparseableCell,
)
from tabular_data import (
    CATEGORICAL,
    CONTINUOUS,
    ENCODER_FILE,
    ColumnSpec,
    Preprocessor,
    RawTable,
    ShiftSpec,
    Slice,
    TableSchema,
    apply_preprocessor,
    bayes_predict,
    class_means,
    class_priors,
    fit_preprocessor,
    load_csv,
    load_prepared,
    prepare_stream,
    save_stream,
    slice_by_column,
    split_slice,
    subsample_rows,
    synth_raw_table,
    synth_stream,
)


def toy_schema(**overrides):
    spec = dict(
        dataset="toy",
        columns=(ColumnSpec("age", CONTINUOUS), ColumnSpec("color", CATEGORICAL, may_miss=True),
                 ColumnSpec("y", CONTINUOUS)),
        label="y",
        slice_column="age",
        boundaries=(35, 65),
        label_threshold=0.5,
    )
    spec.update(overrides)
    return TableSchema(**spec)


def write(tmp_path, text, name="toy.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ============================================================================
# Loading
# ============================================================================

def test_load_csv_marks_missing_cells(tmp_path):
    path = write(tmp_path, "age,color,y\n30,red,0\n40,,1\n?,blue,1\n")
    table = load_csv(path, toy_schema())
    assert table.n_rows == 3
    assert np.isnan(table.frame["age"][2])
    assert table.frame["color"][1] is None
    assert table.frame["color"][0] == "red"


def test_load_csv_headerless(tmp_path):
    path = write(tmp_path, "30,red,0\n40,blue,1\n")
    table = load_csv(path, toy_schema(has_header=False))
    assert list(table.frame.columns) == ["age", "color", "y"]
    assert table.frame["age"].tolist() == [30.0, 40.0]


def test_wrong_header_names_the_column(tmp_path):
    path = write(tmp_path, "age,colour,y\n30,red,0\n")
    with pytest.raises(SchemaMismatch) as info:
        load_csv(path, toy_schema())
    assert info.value.context["column"] == "color"


def test_unparseable_cell_reports_line(tmp_path):
    path = write(tmp_path, "age,color,y\n30,red,0\nabc,red,1\n")
    with pytest.raises(UnparseableCell) as info:
        load_csv(path, toy_schema())
    assert info.value.context["line"] == 3
    assert info.value.context["column"] == "age"


def test_missing_file():
    with pytest.raises(MissingFile):
        load_csv("/nonexistent/data.csv", toy_schema())


def test_subsample_is_seeded_and_keeps_order():
    frame = pd.DataFrame({"age": np.arange(20.0), "color": ["a"] * 20, "y": [0.0, 1.0] * 10})
    table = RawTable(toy_schema(), frame)
    first = subsample_rows(table, 12, seed=3)
    second = subsample_rows(table, 12, seed=3)
    assert first.n_rows == 12
    assert first.frame["age"].tolist() == second.frame["age"].tolist()
    assert first.frame["age"].is_monotonic_increasing
    assert subsample_rows(table, None, seed=0) is table


# ============================================================================
# Preprocessing
# ============================================================================

def make_table():
    frame = pd.DataFrame({
        "age": [30.0, 40.0, 50.0, 70.0],
        "color": np.array(["red", None, "blue", "green"], dtype=object),
        "y": [0.0, 1.0, 1.0, 0.0],
    })
    return RawTable(toy_schema(), frame)


def test_preprocessor_statistics():
    prep = fit_preprocessor(make_table(), [0, 1, 2])
    assert prep.means == pytest.approx((40.0,))
    assert prep.scales == pytest.approx((np.sqrt(200.0 / 3.0),))
    assert prep.medians == pytest.approx((40.0,))
    assert prep.categories == (("blue", "red"),)
    assert prep.indicators == ("color",)
    assert prep.width == 4
    assert prep.feature_names == ("age", "color=blue", "color=red", "color__missing")


def test_apply_imputes_and_flags_missing():
    table = make_table()
    prep = fit_preprocessor(table, [0, 1, 2])
    X = apply_preprocessor(prep, table, [1])
    # missing color -> mode, indicator set
    assert X[0].tolist() == pytest.approx([0.0, 1.0, 0.0, 1.0])


def test_unseen_category_encodes_to_zeros():
    table = make_table()
    prep = fit_preprocessor(table, [0, 1, 2])
    X = apply_preprocessor(prep, table, [3])
    assert X[0, 1:3].tolist() == [0.0, 0.0]
    assert X[0, 0] == pytest.approx((70.0 - 40.0) / np.sqrt(200.0 / 3.0))


def test_preprocessor_stays_frozen():
    table = make_table()
    prep = fit_preprocessor(table, [0, 1, 2])
    before = apply_preprocessor(prep, table, [0, 1, 2])
    # encoding later rows never changes the fitted parameters
    apply_preprocessor(prep, table, [3])
    assert np.array_equal(apply_preprocessor(prep, table, [0, 1, 2]), before)


def test_preprocessor_json_leaves_out_the_encoder():
    table = make_table()
    prep = fit_preprocessor(table, [0, 1, 2])
    assert "encoder" not in json.loads(prep.to_json())
    restored = Preprocessor.from_json(prep.to_json())
    assert restored == prep
    with pytest.raises(MissingFile):
        apply_preprocessor(restored, table, [0])


def test_all_missing_column():
    frame = pd.DataFrame({"age": [30.0, 40.0], "color": np.array([None, None], dtype=object), "y": [0.0, 1.0]})
    with pytest.raises(AllMissingColumn):
        fit_preprocessor(RawTable(toy_schema(), frame), [0, 1])


# ============================================================================
# Slicing & splits
# ============================================================================

def test_slice_boundaries_are_half_open():
    frame = pd.DataFrame({
        "age": [30.0, 35.0, 64.0, 65.0, np.nan],
        "color": np.array(["a"] * 5, dtype=object),
        "y": [0.0, 1.0, 0.0, 1.0, 1.0],
    })
    slices = slice_by_column(RawTable(toy_schema(), frame), "age", (35, 65))
    assert [s.rows.tolist() for s in slices] == [[0], [1, 2], [3]]
    assert [s.slice_id for s in slices] == [1, 2, 3]
    assert slices[0].provenance == "toy:age[-inf,35)"


def test_slicing_on_categorical_column():
    with pytest.raises(NonContinuousSliceColumn):
        slice_by_column(make_table(), "color", ())


def labelled_slice(n0=30, n1=20):
    y = np.array([0] * n0 + [1] * n1)
    return Slice(slice_id=1, rows=np.arange(len(y)), y=y, provenance="toy")


def test_split_is_stratified_disjoint_and_seeded():
    s = split_slice(labelled_slice(), (0.6, 0.2, 0.2), seed=7)
    parts = [s.train_idx, s.val_idx, s.test_idx]
    assert [len(p) for p in parts] == [30, 10, 10]
    assert len(np.unique(np.concatenate(parts))) == 50
    for p in parts:
        assert set(s.y[p]) == {0, 1}
    again = split_slice(labelled_slice(), (0.6, 0.2, 0.2), seed=7)
    assert np.array_equal(again.test_idx, s.test_idx)


def test_split_errors():
    with pytest.raises(InvalidSplitRatios):
        split_slice(labelled_slice(), (0.5, 0.2, 0.2), seed=0)
    with pytest.raises(TooFewRows):
        split_slice(labelled_slice(1, 1), (0.6, 0.2, 0.2), seed=0)


# ============================================================================
# Streams
# ============================================================================

def test_saved_stream_reloads_and_is_byte_stable(tmp_path):
    stream = synth_stream(ShiftSpec(n_slices=2, n_per_slice=60, d=3), seed=1)
    save_stream(stream, str(tmp_path / "a"))
    save_stream(stream, str(tmp_path / "b"))
    for name in ("manifest.json", "preprocessor.json", os.path.join("slice_2", "X.npy")):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    loaded = load_prepared(str(tmp_path / "a"))
    assert loaded.fingerprint == stream.fingerprint
    assert loaded.preprocessor == stream.preprocessor
    for original, restored in zip(stream.slices, loaded.slices):
        assert np.array_equal(original.X, restored.X)
        assert np.array_equal(original.val_idx, restored.val_idx)


def test_load_prepared_without_manifest(tmp_path):
    with pytest.raises(MissingFile):
        load_prepared(str(tmp_path))


def test_reloaded_preprocessor_encodes_like_the_fitted_one(tmp_path):
    spec = ShiftSpec(n_slices=2, n_per_slice=60, d=3, missing_drift=0.1)
    table, slices = synth_raw_table(spec, seed=1)
    stream = prepare_stream(table, slices, (0.6, 0.2, 0.2), split_seed=1)
    save_stream(stream, str(tmp_path))
    loaded = load_prepared(str(tmp_path))
    rows = np.arange(len(table.frame))
    assert np.array_equal(apply_preprocessor(loaded.preprocessor, table, rows),
                          apply_preprocessor(stream.preprocessor, table, rows))
    assert loaded.width == 6


def test_load_prepared_rejects_a_mismatched_encoder(tmp_path):
    stream = synth_stream(ShiftSpec(n_slices=2, n_per_slice=60, d=3), seed=1)
    save_stream(stream, str(tmp_path))
    path = tmp_path / "preprocessor.json"
    data = json.loads(path.read_text())
    data["means"][0] += 1.0
    path.write_text(json.dumps(data))
    with pytest.raises(FingerprintMismatch):
        load_prepared(str(tmp_path))

    os.remove(tmp_path / ENCODER_FILE)
    with pytest.raises(MissingFile):
        load_prepared(str(tmp_path))


def test_small_fit_slice_is_flagged(capsys, monkeypatch):
    monkeypatch.setattr(config, "VERBOSE", True)
    stream = synth_stream(ShiftSpec(n_slices=2, n_per_slice=20, d=3), seed=0)
    n_fit = len(stream.slices[0].train_idx)
    assert f"⚠ Preprocessor fitted on only {n_fit} train rows of slice 1" in capsys.readouterr().err
    assert stream.preprocessor.fitted_on == 1

    synth_stream(ShiftSpec(n_slices=2, n_per_slice=100, d=3), seed=0)
    assert "⚠" not in capsys.readouterr().err


def test_zero_drift_keeps_class_means():
    spec = ShiftSpec(mean_drift=(0.0,))
    assert np.array_equal(class_means(spec, 1), class_means(spec, 4))


def test_prior_shift_moves_toward_target():
    spec = ShiftSpec(K=2, prior_shift=0.5, target_prior=(0.2, 0.8))
    assert class_priors(spec, 1).tolist() == pytest.approx([0.5, 0.5])
    assert class_priors(spec, 3).tolist() == pytest.approx([0.2, 0.8])


def test_missing_rate_drifts_upward():
    spec = ShiftSpec(n_slices=3, n_per_slice=500, d=4, missing_drift=0.1)
    table, slices = synth_raw_table(spec, seed=0)
    X = table.frame[[f"x{j}" for j in range(4)]].to_numpy()
    rates = [np.isnan(X[s.rows]).mean() for s in slices]
    assert rates[0] == 0.0
    assert rates[0] < rates[1] < rates[2]


def test_bayes_rule_beats_chance():
    spec = ShiftSpec(n_slices=2, n_per_slice=2000, d=4, class_sep=2.0)
    table, slices = synth_raw_table(spec, seed=0)
    X = table.frame[[f"x{j}" for j in range(4)]].to_numpy()[slices[0].rows]
    assert np.mean(bayes_predict(spec, 1, X) == slices[0].y) > 0.8


if __name__ == "__main__":
    import sys
    print("=" * 70)
    print("TABULAR DATA TESTS")
    print("=" * 70)
    sys.exit(pytest.main([__file__, "-v"]))
