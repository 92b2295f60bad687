import json
import time

import numpy as np
import pytest
from scipy import stats

from tarmatest import tables
from tarmatest._montecarlo import ReplicateResult
from tarmatest.dgp import ArmaSpec
from tarmatest.errors import ChecksumError, TableError, TabulationError, ValidationError
from tarmatest.score import Variant
from tarmatest.tables import (
    TABLE_DIR_ENV,
    QuantileTable,
    brownian_bridge_table,
    bundled_defaults,
    default_generator,
    find_table,
    load_table,
    lookup_bundled,
    save_table,
    table_filename,
    tabulate,
    tabulate_variants,
)


# well away from AR/MA cancellation, so short series fit without redraws
IDENTIFIED = ArmaSpec([0.0, 0.5], [-0.3])


@pytest.fixture(scope="module")
def smoke():
    return tabulate_variants(1, 1, generator_spec=IDENTIFIED, n_sim=200, B=100, seed=3, max_points=40)


def _table(sample, **kw):
    sample = np.sort(sample)
    args = dict(variant="sLM", p=1, q=1, band=(0.25, 0.75), n_sim=200, B=sample.size, generator=default_generator(1, 1),
                knots=tables._knots_from_sample(sample), full_sample=sample, seed=5)
    args.update(kw)
    return QuantileTable(**args)


class TestQuantileTable:
    def test_smoke_run_monotone(self, smoke):
        for v, t in smoke.items():
            assert t.variant is v and t.B == 100
            assert np.all(np.diff(t.knots[:, 1]) > 0)
            for prob in (0.90, 0.95, 0.99, 0.999):
                assert t.quantile(prob) > 0
            np.testing.assert_allclose(t.knots[:, 1], np.quantile(t.full_sample, t.knots[:, 0]))

    def test_general_exceeds_ar_only(self, smoke):
        # the general statistic maximises over a larger block
        assert smoke[Variant.GENERAL].quantile(0.5) > smoke[Variant.AR_ONLY].quantile(0.5)

    def test_cdf_inverts_knots(self, smoke):
        t = smoke[Variant.AR_ONLY]
        for prob, qv in t.knots[::10]:
            assert t.cdf(qv) == pytest.approx(prob, abs=1e-12)
        assert t.cdf(-1.0) == 0.0 and t.cdf(1e6) == 1.0

    def test_pvalue_clipping(self, smoke):
        t = smoke[Variant.AR_ONLY]
        assert t.pvalue(0.0) == pytest.approx(1 - 1 / 101)
        assert t.pvalue(1e6) == pytest.approx(1 / 101)

    def test_knot_only_interpolation(self):
        t = lookup_bundled("sLM", 1, 1)
        mid = 0.5 * (t.quantile(0.90) + t.quantile(0.95))
        assert t.pvalue(mid) == pytest.approx(0.075)

    def test_rejects_unsorted_knots(self):
        with pytest.raises(ValidationError):
            QuantileTable("sLM", 1, 1, (0.25, 0.75), 100, 100, None, [[0.9, 2.0], [0.95, 1.0]])

    def test_rejects_wrong_sample_size(self):
        with pytest.raises(ValidationError):
            _table(np.arange(1.0, 11.0), B=20)

    def test_default_generator(self):
        g = default_generator(2, 2)
        np.testing.assert_allclose(g.phi, [0.0, 0.6, -0.09])
        np.testing.assert_allclose(g.theta, [-0.6, -0.09])
        g.validate()


class TestTabulate:
    def test_minimum_replicates(self):
        with pytest.raises(ValidationError):
            tabulate("sLM", 1, 1, B=50)

    def test_parallelism_does_not_change_result(self, smoke):
        again = tabulate("sLMg", 1, 1, generator_spec=IDENTIFIED, n_sim=200, B=100, seed=3, parallelism=2, max_points=40)
        assert again == smoke[Variant.GENERAL]
        np.testing.assert_array_equal(again.full_sample, smoke[Variant.GENERAL].full_sample)

    def test_seed_matters(self, smoke):
        other = tabulate("sLM", 1, 1, generator_spec=IDENTIFIED, n_sim=200, B=100, seed=4, max_points=40)
        assert not np.array_equal(other.full_sample, smoke[Variant.AR_ONLY].full_sample)

    def test_redraw_rate_limit(self, monkeypatch):
        def fake_map(task, ids, threads=1, **kw):
            return [ReplicateResult(i, 1, 1, 1 if i < 2 else 0, True, {"sLM": (1.0 + i, 0.0)}) for i in ids]

        monkeypatch.setattr(tables, "parallel_map", fake_map)
        with pytest.raises(TabulationError):
            tabulate("sLM", 1, 1, B=100)

    def test_abandoned_replicate_is_an_error(self, monkeypatch):
        def fake_map(task, ids, threads=1, **kw):
            return [ReplicateResult(i, 1, 1, 0, True, {"sLM": (1.0 + i, 0.0)}) if i else
                    ReplicateResult(i, -1, -1, 0, False, {}, "not converged") for i in ids]

        monkeypatch.setattr(tables, "parallel_map", fake_map)
        with pytest.raises(TabulationError):
            tabulate("sLM", 1, 1, B=100)

    def test_invalid_generator_rejected(self):
        with pytest.raises(ValidationError):
            tabulate("sLM", 1, 1, generator_spec=ArmaSpec([0.0, 1.2], [0.2]), B=100)


class TestPersistence:
    def test_round_trip(self, smoke, tmp_path):
        t = smoke[Variant.GENERAL]
        path = save_table(t, tmp_path)
        assert path.name == "sLMg_p1q1_b0.25-0.75.qt.json"
        back = load_table(path)
        assert back == t and back.source == "file"
        np.testing.assert_array_equal(back.full_sample, t.full_sample)
        assert back.generator == t.generator

    def test_file_fields(self, smoke, tmp_path):
        path = save_table(smoke[Variant.AR_ONLY], tmp_path / "t.json")
        raw = json.loads(path.read_text())
        assert set(raw) == {"schema_version", "variant", "p", "q", "band", "n_sim", "B", "generator", "seed", "knots",
                            "full_sample", "checksum"}

    def test_truncated_file(self, smoke, tmp_path):
        path = save_table(smoke[Variant.AR_ONLY], tmp_path / "t.json")
        path.write_text(path.read_text()[:200])
        with pytest.raises(ChecksumError):
            load_table(path)

    def test_tampered_file(self, smoke, tmp_path):
        path = save_table(smoke[Variant.AR_ONLY], tmp_path / "t.json")
        raw = json.loads(path.read_text())
        raw["knots"][0][1] += 0.001
        path.write_text(json.dumps(raw))
        with pytest.raises(ChecksumError):
            load_table(path)

    def test_version_mismatch(self, smoke, tmp_path):
        path = save_table(smoke[Variant.AR_ONLY], tmp_path / "t.json")
        raw = json.loads(path.read_text())
        raw["schema_version"] = 99
        path.write_text(json.dumps(raw))
        with pytest.raises(TableError):
            load_table(path)

    def test_large_sample_round_trip_fast(self, tmp_path):
        t = _table(np.random.default_rng(0).chisquare(2, 10_000))
        start = time.perf_counter()
        back = load_table(save_table(t, tmp_path / "big.json"))
        assert time.perf_counter() - start < 1.0
        assert back == t

    def test_filename_convention(self):
        assert table_filename("sLM", 2, 1, (0.1, 0.9)) == "sLM_p2q1_b0.1-0.9.qt.json"


class TestLookup:
    def test_bundled_set(self):
        b = bundled_defaults()
        assert len(b) == 16
        assert all(t.source == "paper" and t.full_sample is None for t in b)

    def test_published_values(self):
        assert lookup_bundled("sLMg", 4, 2).quantile(0.99) == 26.42
        assert lookup_bundled("sLM", 1, 2).quantile(0.90) == 9.64
        assert lookup_bundled("sLM", 5, 1) is None

    def test_bundled_knots_increase_with_order(self):
        for q in (1, 2):
            for v in ("sLM", "sLMg"):
                k = np.array([lookup_bundled(v, p, q).knots[:, 1] for p in range(1, 5)])
                assert np.all(np.diff(k, axis=0) > 0)

    def test_find_table_order(self, smoke, tmp_path, monkeypatch):
        monkeypatch.delenv(TABLE_DIR_ENV, raising=False)
        assert find_table("sLM", 1, 1).source == "paper"
        # sLM(5, 1) borrows a published table that also tests 6 parameters
        borrowed = find_table("sLM", 5, 1)
        assert borrowed.source == "paper" and borrowed.psi_dim == 6
        # no bundled table tests 8 parameters
        fallback = find_table("sLM", 7, 1)
        assert fallback.source == "asymptotic" and fallback.psi_dim == 8
        save_table(smoke[Variant.AR_ONLY], tmp_path)
        monkeypatch.setenv(TABLE_DIR_ENV, str(tmp_path))
        assert find_table("sLM", 1, 1).source == "file"
        assert find_table("sLMg", 1, 1).source == "paper"

    def test_wide_band_falls_back_to_asymptotic(self, monkeypatch):
        monkeypatch.delenv(TABLE_DIR_ENV, raising=False)
        t = find_table("sLM", 1, 1, (0.1, 0.9))
        assert t.source == "asymptotic" and t.band == (0.1, 0.9)
        assert find_table("sLM", 1, 1, (0.1, 0.9), allow_asymptotic=False) is None


class TestBrownianBridge:
    def test_close_to_published_dimension_two(self):
        t = brownian_bridge_table(2)
        assert abs(t.quantile(0.95) - 11.37) < 0.8
        assert t.psi_dim == 2

    def test_wider_band_has_larger_quantiles(self):
        assert brownian_bridge_table(2, (0.1, 0.9)).quantile(0.95) > brownian_bridge_table(2).quantile(0.95)

    def test_dimension_validated(self):
        with pytest.raises(ValidationError):
            brownian_bridge_table(0)


@pytest.mark.slow
class TestNullLaw:
    def test_generator_stability(self):
        kw = dict(n_sim=500, B=3000, seed=11, max_points=None)
        a = tabulate("sLM", 1, 1, generator_spec=ArmaSpec([0.0, 0.3], [0.2]), **kw)
        b = tabulate("sLM", 1, 1, generator_spec=ArmaSpec([0.0, -0.6], [0.4]), **kw)
        assert abs(a.quantile(0.95) - b.quantile(0.95)) < 0.5

    def test_pvalues_uniform_on_fresh_null(self):
        kw = dict(generator_spec=IDENTIFIED, n_sim=300, seed=12, max_points=None)
        table = tabulate("sLM", 1, 1, B=5000, **kw)
        batch = tabulate("sLM", 1, 1, B=1000, **{**kw, "seed": 13}).full_sample
        pv = np.array([table.pvalue(s) for s in batch])
        assert stats.kstest(pv, "uniform").statistic < 0.06
