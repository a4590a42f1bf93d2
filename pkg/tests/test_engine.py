import json

import numpy as np
import pytest

from sbc.core import ConfigError, DomainError, FeatureSubset, LabeledDataset
from sbc.dbranch import DBranchConfig, ensemble_fit, fit_decision_branches
from sbc.engine import (
    catalog_fingerprint,
    load_catalog_csv,
    load_catalog_packed,
    load_index_set,
    preprocess,
    process_query,
    sample_feature_subsets,
    save_catalog_csv,
    save_catalog_packed,
    scan_oracle,
)


def make_catalog(seed=0, n=2000, d=8):
    rng = np.random.default_rng(seed)
    return LabeledDataset.catalog(rng.random((n, d)), np.arange(n, dtype=np.uint64))


def make_query_set(seed=1, n=150, d=8, n_pos=15):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    X[:n_pos] = 0.4 + 0.15 * rng.random((n_pos, d))
    y = np.zeros(n, dtype=np.uint8)
    y[:n_pos] = 1
    return LabeledDataset(X, y, np.arange(n))


class TestSampleSubsets:
    def test_distinct_when_space_allows(self):
        subsets = sample_feature_subsets(100, 4, 20, np.random.default_rng(0))
        assert len(subsets) == 20
        assert len({s.dims for s in subsets}) == 20
        for s in subsets:
            assert s.D == 4 and len(set(s.dims)) == 4

    def test_with_replacement_fallback(self):
        subsets = sample_feature_subsets(3, 3, 5, np.random.default_rng(0))
        assert len(subsets) == 5
        assert all(s.dims == (0, 1, 2) for s in subsets)

    def test_bounds_validated(self):
        with pytest.raises(ConfigError):
            sample_feature_subsets(4, 5, 1, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            sample_feature_subsets(4, 2, 0, np.random.default_rng(0))


class TestPreprocess:
    def test_full_space_single_index(self, tmp_path):
        catalog = make_catalog(n=200, d=3)
        iset = preprocess(catalog, k=1, D=3, leaf_size=32, layout="Ts",
                          seed=0, out_dir=tmp_path / "i")
        assert len(iset.indexes) == 1
        assert iset.subsets[0].dims == (0, 1, 2)
        iset.close()

    def test_same_seed_identical_manifest(self, tmp_path):
        catalog = make_catalog()
        a = preprocess(catalog, k=4, D=3, leaf_size=64, layout="Ts",
                       seed=9, out_dir=tmp_path / "a")
        b = preprocess(catalog, k=4, D=3, leaf_size=64, layout="Ts",
                       seed=9, out_dir=tmp_path / "b")
        ma = json.dumps(a.manifest, sort_keys=True)
        mb = json.dumps(b.manifest, sort_keys=True)
        assert ma == mb
        a.close()
        b.close()

    def test_structural_subset_count(self, tmp_path):
        # d=100, D=4, k=2: two distinct 4-subsets under the seed
        catalog = make_catalog(n=50, d=100)
        iset = preprocess(catalog, k=2, D=4, leaf_size=16, layout="Ts",
                          seed=3, out_dir=tmp_path / "i")
        assert len(iset.subsets) == 2
        assert iset.subsets[0].dims != iset.subsets[1].dims
        assert all(len(s.dims) == 4 for s in iset.subsets)
        iset.close()

    def test_load_round_trip(self, tmp_path):
        catalog = make_catalog(n=500)
        built = preprocess(catalog, k=3, D=2, leaf_size=64, layout="Ts",
                           seed=5, out_dir=tmp_path / "i")
        built.close()
        loaded = load_index_set(tmp_path / "i")
        assert loaded.manifest == built.manifest
        assert [i.subset.dims for i in loaded.indexes] == \
            [i.subset.dims for i in built.indexes]
        loaded.close()

    def test_fingerprint_tracks_content(self):
        a = make_catalog(seed=0)
        b = make_catalog(seed=1)
        assert catalog_fingerprint(a) != catalog_fingerprint(b)
        assert catalog_fingerprint(a) == catalog_fingerprint(make_catalog(seed=0))


class TestProcessQuery:
    def test_matches_scan_oracle_over_variants(self, tmp_path):
        catalog = make_catalog(seed=2)
        T = make_query_set(seed=3)
        for i, (variant, layout, m) in enumerate(
            [("B", "Ts", 1), ("Ts", "Ts", 1), ("Ta", "Ta", 1), ("B", "Ts", 5)]
        ):
            iset = preprocess(catalog, k=6, D=3, leaf_size=128, layout=layout,
                              seed=i, out_dir=tmp_path / f"i{i}")
            cfg = DBranchConfig(subsets=iset.subsets, p=3, variant=variant,
                                rng_seed=100 + i)
            result = process_query(iset, T, cfg, ensemble_size=m)
            fitted = ensemble_fit(T, cfg, m) if m > 1 else \
                fit_decision_branches(T, cfg)
            np.testing.assert_array_equal(
                result.positive_ids, scan_oracle(catalog, fitted)
            )
            iset.close()

    def test_dedup_and_count_invariants(self, tmp_path):
        catalog = make_catalog(seed=4)
        T = make_query_set(seed=5)
        iset = preprocess(catalog, k=4, D=3, leaf_size=128, layout="Ts",
                          seed=2, out_dir=tmp_path / "i")
        cfg = DBranchConfig(subsets=iset.subsets, p=2, rng_seed=7)
        result = process_query(iset, T, cfg)
        ids = result.positive_ids
        assert np.unique(ids).size == ids.size
        assert np.all(np.diff(ids.astype(np.int64)) > 0)
        total_candidates = sum(c for c, _ in result.per_branch_counts)
        total_kept = sum(k for _, k in result.per_branch_counts)
        assert ids.size <= total_kept <= total_candidates
        assert result.timings["t_total"] >= 0
        assert result.timings["t_total"] >= \
            result.timings["t_train"] + result.timings["t_query"] - 1e-6
        iset.close()

    def test_subset_mismatch_rejected(self, tmp_path):
        catalog = make_catalog(seed=6)
        T = make_query_set(seed=7)
        iset = preprocess(catalog, k=4, D=3, leaf_size=128, layout="Ts",
                          seed=2, out_dir=tmp_path / "i")
        foreign = sample_feature_subsets(8, 3, 4, np.random.default_rng(999))
        cfg = DBranchConfig(subsets=foreign, p=2, rng_seed=7)
        if tuple(s.dims for s in foreign) != tuple(s.dims for s in iset.subsets):
            with pytest.raises(ConfigError):
                process_query(iset, T, cfg)
        iset.close()

    def test_ta_variant_needs_ta_layout(self, tmp_path):
        catalog = make_catalog(seed=8)
        T = make_query_set(seed=9)
        iset = preprocess(catalog, k=3, D=2, leaf_size=128, layout="Ts",
                          seed=4, out_dir=tmp_path / "i")
        cfg = DBranchConfig(subsets=iset.subsets, p=2, variant="Ta", rng_seed=1)
        with pytest.raises(ConfigError):
            process_query(iset, T, cfg)
        iset.close()

    def test_threads_give_same_answer(self, tmp_path):
        catalog = make_catalog(seed=10)
        T = make_query_set(seed=11)
        iset = preprocess(catalog, k=4, D=3, leaf_size=128, layout="Ts",
                          seed=5, out_dir=tmp_path / "i")
        cfg = DBranchConfig(subsets=iset.subsets, p=2, rng_seed=3)
        a = process_query(iset, T, cfg, threads=1)
        b = process_query(iset, T, cfg, threads=4)
        np.testing.assert_array_equal(a.positive_ids, b.positive_ids)
        iset.close()


class TestScanOracle:
    def test_empty_catalog(self):
        catalog = LabeledDataset.catalog(np.zeros((1, 2)), [0]).take(np.array([], int))
        model = fit_decision_branches(
            make_query_set(d=2, seed=1),
            DBranchConfig(subsets=(FeatureSubset((0, 1)),), p=1, rng_seed=0),
        )
        assert scan_oracle(catalog, model).size == 0

    def test_all_negative_model(self):
        catalog = make_catalog(seed=12, n=100, d=2)
        rng = np.random.default_rng(0)
        X = np.vstack([np.full((1, 2), 100.0), rng.random((50, 2))])
        y = np.zeros(51, dtype=np.uint8)
        y[0] = 1
        T = LabeledDataset(X, y, np.arange(51))
        model = fit_decision_branches(
            T, DBranchConfig(subsets=(FeatureSubset((0, 1)),), p=1, rng_seed=0)
        )
        ids = scan_oracle(catalog, model)
        # the lone positive sits far away; no catalog row should match
        assert ids.size == 0


class TestCatalogIO:
    def test_csv_round_trip(self, tmp_path):
        ds = make_query_set(seed=13, n=40, d=3)
        save_catalog_csv(ds, tmp_path / "c.csv")
        back = load_catalog_csv(tmp_path / "c.csv")
        np.testing.assert_allclose(back.features, ds.features, atol=1e-12)
        np.testing.assert_array_equal(back.ids, ds.ids)
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_packed_round_trip(self, tmp_path):
        ds = make_query_set(seed=14, n=40, d=3)
        save_catalog_packed(ds, tmp_path / "c")
        back = load_catalog_packed(tmp_path / "c")
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.ids, ds.ids)
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_csv_missing_id_column(self, tmp_path):
        (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
        with pytest.raises(DomainError):
            load_catalog_csv(tmp_path / "bad.csv")

    def test_csv_malformed_row_reports_line(self, tmp_path):
        (tmp_path / "bad.csv").write_text("id,f0\n1,0.5\n2,not_a_number\n")
        with pytest.raises(DomainError, match="bad.csv:3"):
            load_catalog_csv(tmp_path / "bad.csv")

    def test_csv_empty_file(self, tmp_path):
        (tmp_path / "empty.csv").write_text("")
        with pytest.raises(DomainError):
            load_catalog_csv(tmp_path / "empty.csv")

    def test_packed_size_mismatch_detected(self, tmp_path):
        ds = make_query_set(seed=15, n=10, d=2, n_pos=3)
        save_catalog_packed(ds, tmp_path / "c")
        raw = (tmp_path / "c.bin").read_bytes()
        (tmp_path / "c.bin").write_bytes(raw[:-3])
        from sbc.core import StorageError

        with pytest.raises(StorageError):
            load_catalog_packed(tmp_path / "c")
