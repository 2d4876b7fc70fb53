import json
from pathlib import Path

import numpy as np
import pytest

from privlogit.core import ConfigurationError, Dataset, gradient
from privlogit.harness import (CSV_FIELDS, SCHEMA_VERSION, BenchConfig, BenchReport, CsvSpec, EmptyInput,
                               ParseError, PartitionError, SimSpec, bench, load_csv, load_wine,
                               parse_binarize_rule, partition, r_squared, report_emit, report_load, simulate,
                               wine_dir_from_env, write_csv)

from conftest import make_data

GOLDEN = Path(__file__).parent / "golden" / "bench_small.json"


def golden_report():
    data = simulate(SimSpec(120, 3, 11))
    cfg = BenchConfig(nodes=2, seed=3)
    return bench(data, ["plain-newton", "plain-privlogit", "privlogit-local"], cfg, {"source": "simulate"})


@pytest.fixture
def csv_file(tmp_path):
    def write(text, name="d.csv"):
        path = tmp_path / name
        path.write_text(text)
        return path
    return write


class TestLoadCsv:
    def test_three_row_fixture(self, csv_file):
        d = load_csv(CsvSpec(csv_file("a,b,y\n1,2,0\n3,4,1\n5,6,1\n")))
        assert d.x.shape == (3, 2)
        np.testing.assert_array_equal(d.y, [0, 1, 1])

    def test_named_response_and_semicolons(self, csv_file):
        d = load_csv(CsvSpec(csv_file('"y";"a"\n1;2.5\n0;3.5\n'), response_column="y"))
        np.testing.assert_array_equal(d.x[:, 0], [2.5, 3.5])
        np.testing.assert_array_equal(d.y, [1, 0])

    def test_standardize_and_intercept(self, csv_file):
        d = load_csv(CsvSpec(csv_file("a,y\n1,0\n2,1\n3,1\n"), standardize=True, add_intercept=True))
        np.testing.assert_array_equal(d.x[:, 0], 1.0)
        assert abs(d.x[:, 1].mean()) < 1e-12 and abs(d.x[:, 1].std() - 1.0) < 1e-12

    def test_non_numeric_cell(self, csv_file):
        with pytest.raises(ParseError) as info:
            load_csv(CsvSpec(csv_file("a,y\n1,0\nx,1\n")))
        assert (info.value.row, info.value.col) == (3, 1)

    def test_empty(self, csv_file):
        with pytest.raises(EmptyInput):
            load_csv(CsvSpec(csv_file("")))
        with pytest.raises(EmptyInput):
            load_csv(CsvSpec(csv_file("a,y\n")))

    def test_non_binary_response(self, csv_file):
        path = csv_file("a,y\n1,0\n2,2\n")
        with pytest.raises(ParseError):
            load_csv(CsvSpec(path))
        np.testing.assert_array_equal(load_csv(CsvSpec(path, binarize_rule=">=2")).y, [0, 1])

    def test_ragged_row(self, csv_file):
        with pytest.raises(ParseError):
            load_csv(CsvSpec(csv_file("a,b,y\n1,2,0\n1,1\n")))

    def test_binarize_rule(self):
        np.testing.assert_array_equal(parse_binarize_rule(">=6")(np.array([5.0, 6.0, 7.0])), [0, 1, 1])
        with pytest.raises(ConfigurationError):
            parse_binarize_rule("six or more")

    def test_write_read_round_trip(self, tmp_path):
        d = make_data(20, 3, 0)
        write_csv(d, tmp_path / "r.csv")
        back = load_csv(CsvSpec(tmp_path / "r.csv"))
        np.testing.assert_array_equal(back.x, d.x)
        np.testing.assert_array_equal(back.y, d.y)


@pytest.mark.skipif(wine_dir_from_env() is None, reason="PRIVLOGIT_WINE_DIR not set")
def test_wine_shape():
    d = load_wine(wine_dir_from_env())
    assert d.x.shape == (6497, 12)
    assert 0.0 < d.y.mean() < 1.0


class TestSimulate:
    def test_deterministic(self):
        a, b = simulate(SimSpec(100, 4, 7)), simulate(SimSpec(100, 4, 7))
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)

    def test_null_model_is_balanced(self):
        d = simulate(SimSpec(10_000, 3, 1, beta_true=[0.0, 0.0, 0.0]))
        assert abs(d.y.mean() - 0.5) <= 0.02

    def test_large(self):
        import time

        t = time.perf_counter()
        d = simulate(SimSpec(50_000, 10, 2))
        assert time.perf_counter() - t < 5.0 and d.x.shape == (50_000, 10)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            SimSpec(2, 3)


class TestPartition:
    def test_sizes(self):
        d = make_data(10, 2, 0)
        assert sorted(q.n for q in partition(d, 4, 1)) == [2, 2, 3, 3]

    def test_cover(self):
        d = make_data(57, 3, 1)
        rows = np.vstack([q.x for q in partition(d, 5, 2)])
        key = lambda a: a[np.lexsort(a.T[::-1])]
        np.testing.assert_array_equal(key(rows), key(d.x))

    def test_gradient_additivity(self):
        d = make_data(200, 4, 2)
        beta = np.array([0.1, -0.4, 0.3, 0.2])
        total = sum(gradient(q, beta) for q in partition(d, 7, 3))
        np.testing.assert_allclose(total, gradient(d, beta), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("s", [1, 65])
    def test_bounds(self, s):
        with pytest.raises(PartitionError):
            partition(make_data(100, 2, 0), s)

    def test_more_blocks_than_rows(self):
        with pytest.raises(PartitionError):
            partition(make_data(3, 2, 0), 4)


class TestRSquared:
    def test_perfect_and_affine(self):
        b = np.array([1.0, -2.0, 0.5])
        assert r_squared(b, b) == 1.0
        assert r_squared(2 * b + 1, b) == pytest.approx(1.0)

    def test_uncorrelated(self):
        assert r_squared([1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]) == pytest.approx(0.0)


class TestBench:
    def test_plain_methods_record_no_crypto(self):
        rep = bench(make_data(300, 4, 3), ["plain-newton", "plain-privlogit"])
        for e in rep.methods:
            assert e.status == "ok" and all(v == 0 for v in e.op_counters.values())
        assert rep.entry("plain-privlogit").r2_vs_newton >= 0.999999

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            bench(make_data(50, 2, 0), ["gradient-descent"])

    def test_failure_is_recorded(self):
        x = np.ones((12, 2))
        d = Dataset(x, np.r_[np.zeros(6), np.ones(6)])
        rep = bench(d, ["plain-newton", "plain-privlogit"])
        assert [e.status for e in rep.methods] == ["failed", "failed"]
        assert "Diverged" in rep.entry("plain-newton").error

    def test_secure_entries_and_determinism(self):
        a = golden_report()
        b = golden_report()
        assert report_emit(a.without_timing()) == report_emit(b.without_timing())
        loc = a.entry("privlogit-local")
        assert loc.iterations == a.entry("plain-privlogit").iterations
        assert loc.r2_vs_newton >= 0.9999 and loc.op_counters["choleskys"] == 1


class TestReportEmit:
    def test_golden_bytes(self):
        got = report_emit(golden_report().without_timing())
        assert got == GOLDEN.read_bytes()

    def test_json_round_trip(self):
        rep = golden_report()
        back = report_load(report_emit(rep))
        assert back == rep
        assert json.loads(report_emit(rep))["schema"] == SCHEMA_VERSION

    def test_csv_one_row_per_method(self):
        rows = report_emit(golden_report(), "csv").decode().splitlines()
        assert rows[0].split(",") == list(CSV_FIELDS)
        assert [r.split(",")[0] for r in rows[1:]] == ["plain-newton", "plain-privlogit", "privlogit-local"]

    def test_empty_report(self):
        rep = BenchReport(dataset={}, config={})
        assert report_emit(rep, "csv").decode() == ",".join(CSV_FIELDS) + "\n"
        assert report_load(report_emit(rep)).methods == []

    def test_bad_schema(self):
        with pytest.raises(ParseError):
            report_load(b'{"schema": "other/9"}')
