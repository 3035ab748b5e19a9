import logging

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabcl.data import (
    CICIDS_CONSTANT_COLUMNS,
    UNSW_CATEGORICAL,
    UNSW_COLUMNS,
    DriftConfig,
    FeatureMatrix,
    IngestError,
    StreamingLabelEncoder,
    chunk_stream,
    generate_drift_matrix,
    generate_drift_stream,
    load_dataset,
    preprocess_cicids,
    preprocess_unsw,
    split_ip,
)


def unsw_table(rows=5, seed=0):
    rng = np.random.default_rng(seed)
    data = {}
    for c in UNSW_COLUMNS:
        if c in ("srcip", "dstip"):
            data[c] = [".".join(str(v) for v in rng.integers(0, 256, 4)) for _ in range(rows)]
        elif c in UNSW_CATEGORICAL:
            data[c] = [str(v) for v in rng.choice(["tcp", "udp", "-", ""], rows)]
        elif c == "Label":
            data[c] = [str(v) for v in rng.integers(0, 2, rows)]
        else:
            data[c] = [f"{v:.3f}" for v in rng.uniform(0, 100, rows)]
    return pd.DataFrame(data)


def cicids_table(rows=6, seed=0):
    rng = np.random.default_rng(seed)
    data = {f"feat{i}": [f"{v:.2f}" for v in rng.uniform(0, 10, rows)] for i in range(5)}
    for c in CICIDS_CONSTANT_COLUMNS:
        data[c] = ["0"] * rows
    data["Label"] = list(rng.choice(["BENIGN", "DoS Hulk", "PortScan"], rows))
    return pd.DataFrame(data)


def matrix(n, d=2):
    values = np.arange(n * d, dtype=float).reshape(n, d)
    return FeatureMatrix(values, np.arange(n) % 2)


class TestFeatureMatrix:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            FeatureMatrix(np.array([[1.0, np.nan]]), np.array([0]))

    def test_rejects_non_binary_labels(self):
        with pytest.raises(ValueError):
            FeatureMatrix(np.zeros((2, 1)), np.array([0, 2]))

    def test_default_column_names(self):
        assert matrix(3, 3).columns == ("f0", "f1", "f2")


class TestEncoder:
    def test_first_seen_order(self):
        enc = StreamingLabelEncoder()
        assert enc.encode(["tcp", "udp", "tcp", "icmp"]).tolist() == [0, 1, 0, 2]
        assert enc.next_code == 3

    def test_unseen_category_gets_fresh_code(self):
        enc = StreamingLabelEncoder()
        enc.encode(["a", "b"])
        assert enc.encode(["c", "a"]).tolist() == [2, 0]

    def test_same_sequence_twice_gives_same_codes(self):
        seq = ["x", "y", "x", "z", "y"]
        assert StreamingLabelEncoder().encode(seq).tolist() == StreamingLabelEncoder().encode(seq).tolist()


class TestIp:
    def test_octets(self):
        out = split_ip(pd.Series(["149.171.126.9", "10.0.0.1"]), "srcip")
        assert out.tolist() == [[149, 171, 126, 9], [10, 0, 0, 1]]

    @pytest.mark.parametrize("bad", ["1.2.3", "1.2.3.256", "a.b.c.d", "1.2.3.4.5", "1.2.-3.4"])
    def test_malformed_names_row_and_column(self, bad):
        with pytest.raises(IngestError) as exc:
            split_ip(pd.Series(["1.1.1.1", bad]), "dstip")
        assert exc.value.row == 1 and exc.value.column == "dstip"


class TestUnsw:
    def test_shape_and_order(self):
        raw = unsw_table(7)
        fm = preprocess_unsw(raw)
        assert fm.features == 53 and fm.rows == 7
        assert fm.columns[:4] == ("srcip_0", "srcip_1", "srcip_2", "srcip_3")
        np.testing.assert_array_equal(fm.values[:, fm.columns.index("dur")], raw["dur"].astype(float))
        np.testing.assert_array_equal(fm.labels, raw["Label"].astype(int))

    def test_ip_expanded_in_place(self):
        raw = unsw_table(1)
        raw.loc[0, "dstip"] = "149.171.126.9"
        fm = preprocess_unsw(raw)
        i = fm.columns.index("dstip_0")
        assert fm.values[0, i:i + 4].tolist() == [149, 171, 126, 9]

    def test_encoders_carry_across_tables(self):
        encoders = {}
        a = unsw_table(3, seed=1)
        a["proto"] = ["tcp", "udp", "tcp"]
        b = unsw_table(2, seed=2)
        b["proto"] = ["arp", "udp"]
        preprocess_unsw(a, encoders=encoders)
        fm = preprocess_unsw(b, encoders=encoders)
        assert fm.values[:, fm.columns.index("proto")].tolist() == [2, 1]

    def test_missing_numeric_row_dropped(self):
        raw = unsw_table(4)
        raw.loc[2, "sbytes"] = ""
        assert preprocess_unsw(raw).rows == 3

    def test_non_numeric_cell(self):
        raw = unsw_table(4)
        raw.loc[1, "dur"] = "fast"
        with pytest.raises(IngestError, match="dur"):
            preprocess_unsw(raw)

    def test_malformed_ip(self):
        raw = unsw_table(3)
        raw.loc[2, "srcip"] = "300.1.1.1"
        with pytest.raises(IngestError) as exc:
            preprocess_unsw(raw)
        assert (exc.value.row, exc.value.column) == (2, "srcip")

    def test_idempotent_on_numeric_columns(self):
        raw = unsw_table(5)
        assert np.array_equal(preprocess_unsw(raw).values, preprocess_unsw(raw.copy()).values)

    def test_headerless_file(self, tmp_path):
        raw = unsw_table(4)
        path = tmp_path / "part.csv"
        raw.to_csv(path, header=False, index=False)
        assert load_dataset("unsw", path, header=False).rows == 4


class TestCicids:
    def test_constant_columns_removed(self):
        fm = preprocess_cicids(cicids_table())
        assert fm.features == 5
        assert not set(CICIDS_CONSTANT_COLUMNS) & set(fm.columns)

    def test_benign_is_zero(self):
        raw = cicids_table()
        fm = preprocess_cicids(raw)
        np.testing.assert_array_equal(fm.labels, (raw["Label"] != "BENIGN").astype(int))

    @pytest.mark.parametrize("token", ["", "NaN", "Infinity", "inf"])
    def test_bad_row_dropped(self, token):
        raw = cicids_table()
        raw.loc[3, "feat2"] = token
        fm = preprocess_cicids(raw)
        assert fm.rows == 5
        np.testing.assert_array_equal(fm.values[3], raw.loc[4, [f"feat{i}" for i in range(5)]].astype(float))

    def test_injected_constant_column_dropped_on_request(self):
        raw = cicids_table()
        raw["stuck"] = "7"
        assert "stuck" in preprocess_cicids(raw).columns
        assert "stuck" not in preprocess_cicids(raw, drop_constant=True).columns

    def test_non_numeric_cell(self):
        raw = cicids_table()
        raw.loc[0, "feat1"] = "oops"
        with pytest.raises(IngestError, match="feat1"):
            preprocess_cicids(raw)

    def test_label_column_whitespace(self, tmp_path):
        raw = cicids_table().rename(columns={"Label": " Label"})
        path = tmp_path / "day.csv"
        raw.to_csv(path, index=False)
        assert load_dataset("cicids", path).features == 5


class TestChunking:
    def test_ten_rows_by_four(self):
        s = chunk_stream(matrix(10), 4)
        assert [c.rows for c in s] == [4, 4, 2]

    def test_sequential_split(self):
        s = chunk_stream(matrix(100, 1), 100, 0.8)
        assert s[0].train.values[:, 0].tolist() == list(range(80))
        assert s[0].test.values[:, 0].tolist() == list(range(80, 100))

    def test_unsw_sized_stream_has_six_experiences(self):
        fm = FeatureMatrix(np.zeros((2_540_047, 1)), np.zeros(2_540_047, dtype=np.int64))
        s = chunk_stream(fm, 500_000)
        assert s.total_experiences == 6
        assert s[-1].rows == 40_047

    @pytest.mark.parametrize("drop, expected", [(False, 6), (True, 5)])
    def test_cicids_sized_stream(self, drop, expected):
        fm = FeatureMatrix(np.zeros((2_827_876, 1)), np.zeros(2_827_876, dtype=np.int64))
        assert chunk_stream(fm, 500_000, drop_partial=drop).total_experiences == expected

    def test_single_row_remainder_dropped(self):
        assert [c.rows for c in chunk_stream(matrix(9), 4)] == [4, 4]

    def test_oversized_chunk_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            s = chunk_stream(matrix(5), 50)
        assert s.oversized_chunk and s.total_experiences == 1
        assert "exceeds" in caplog.text

    def test_tiny_chunk_keeps_a_test_row(self):
        s = chunk_stream(matrix(2), 2, 0.99)
        assert (s[0].train.rows, s[0].test.rows) == (1, 1)

    def test_empty_input(self):
        with pytest.raises(ValueError):
            chunk_stream(FeatureMatrix(np.empty((0, 2)), np.empty(0)), 4)

    @pytest.mark.parametrize("size, ratio", [(1, 0.8), (4, 0.0), (4, 1.0)])
    def test_bad_arguments(self, size, ratio):
        with pytest.raises(ValueError):
            chunk_stream(matrix(10), size, ratio)

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(2, 200), size=st.integers(2, 60), ratio=st.floats(0.05, 0.95))
    def test_partition(self, n, size, ratio):
        fm = matrix(n)
        s = chunk_stream(fm, size, ratio)
        parts = [p for c in s for p in (c.train, c.test)]
        joined = FeatureMatrix.concat(parts)
        # only a lone trailing row can go missing
        assert fm.rows - joined.rows in (0, 1)
        np.testing.assert_array_equal(joined.values, fm.values[:joined.rows])
        np.testing.assert_array_equal(joined.labels, fm.labels[:joined.rows])


class TestDrift:
    small = DriftConfig(n_experiences=5, rows_per_experience=2000, n_features=6, scale_jump_at=3)

    def test_same_seed_bit_identical(self):
        a, b = generate_drift_matrix(self.small), generate_drift_matrix(self.small)
        assert np.array_equal(a.values, b.values) and np.array_equal(a.labels, b.labels)

    def test_different_seed_differs(self):
        other = DriftConfig(**{**self.small.__dict__, "seed": 1})
        assert not np.array_equal(generate_drift_matrix(self.small).values, generate_drift_matrix(other).values)

    def test_max_ratio_at_jump(self):
        s = generate_drift_stream(self.small)
        before = np.vstack([s[2].train.values, s[2].test.values]).max(axis=0)
        after = np.vstack([s[3].train.values, s[3].test.values]).max(axis=0)
        ratio = after / before
        assert np.all((ratio > 70) & (ratio < 140))
        assert np.median(ratio) == pytest.approx(100, rel=0.15)

    def test_no_drift_means_same_distribution(self):
        cfg = DriftConfig(n_experiences=4, rows_per_experience=5000, n_features=4, scale_factor=1.0, seed=3)
        s = generate_drift_stream(cfg)
        means = np.array([c.train.values.mean(axis=0) for c in s])
        spread = np.array([c.train.values.std(axis=0) for c in s]).mean(axis=0)
        assert np.all(np.abs(means - means.mean(axis=0)) < 0.1 * spread)

    def test_class_balance(self):
        fm = generate_drift_matrix(DriftConfig(n_experiences=2, rows_per_experience=20_000, n_features=3, scale_jump_at=1))
        assert fm.labels.mean() == pytest.approx(0.3, abs=0.01)

    def test_stream_shape(self):
        s = generate_drift_stream(self.small)
        assert s.total_experiences == 5 and s.features == 6
        assert (s[0].train.rows, s[0].test.rows) == (1600, 400)

    @pytest.mark.parametrize("kwargs", [
        {"scale_factor": 0.0}, {"scale_jump_at": 6}, {"class_balance": 1.0}, {"n_features": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            DriftConfig(**kwargs)


def test_attack_cat_optional():
    raw = unsw_table(4)
    assert "attack_cat" not in preprocess_unsw(raw).columns
    fm = preprocess_unsw(raw, keep_attack_cat=True)
    assert fm.features == 54 and "attack_cat" in fm.columns
