import json
import subprocess
import sys

import numpy as np
import pytest

from privlogit import cli
from privlogit.core import privlogit_fit
from privlogit.harness import CsvSpec, SimSpec, load_csv, simulate


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestFitAndSimulate:
    def test_simulate_then_fit(self, tmp_path):
        data = tmp_path / "d.csv"
        assert run("simulate", "--n", 200, "--p", 3, "--seed", 4, "--out", data) == 0
        out = tmp_path / "fit.json"
        assert run("fit", "--data", data, "--optimizer", "privlogit", "--out", out) == 0
        res = json.loads(out.read_text())
        want = privlogit_fit(load_csv(CsvSpec(data)))
        assert res["iterations"] == want.iterations
        np.testing.assert_allclose(res["beta"], want.beta)

    def test_fit_simulated_newton(self, capsys):
        assert run("fit", "--simulate", "300,3,1", "--optimizer", "newton") == 0
        assert json.loads(capsys.readouterr().out)["converged"]

    def test_parse_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,y\n1,0\nfoo,1\n")
        assert run("fit", "--data", bad) == 2

    def test_bad_simulate_triplet(self):
        assert run("fit", "--simulate", "10,2") == 2

    def test_divergence_exit_code(self, tmp_path):
        path = tmp_path / "flat.csv"
        path.write_text("a,b,y\n" + "".join(f"1,1,{i % 2}\n" for i in range(10)))
        assert run("fit", "--data", path, "--optimizer", "newton") == 4
        # the constant bound is singular too: a configuration problem
        assert run("fit", "--data", path, "--optimizer", "privlogit") == 2

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as info:
            run("fit", "--bogus")
        assert info.value.code == 2


class TestKeygen:
    def test_files(self, tmp_path):
        assert run("keygen", "--bits", 1024, "--out", tmp_path / "k", "--seed", 1) == 0
        assert (tmp_path / "k" / "public.key").exists()
        assert (tmp_path / "k" / "private.key").stat().st_mode & 0o077 == 0

    def test_bad_bits(self, tmp_path):
        with pytest.raises(SystemExit):
            run("keygen", "--bits", 512, "--out", tmp_path)


@pytest.fixture(scope="module")
def keys(tmp_path_factory):
    d = tmp_path_factory.mktemp("keys")
    assert run("keygen", "--bits", 1024, "--out", d, "--seed", 2) == 0
    return d


class TestSecureRunAndBench:
    def test_secure_run_inproc(self, keys, tmp_path):
        out = tmp_path / "t.json"
        rc = run("secure-run", "--protocol", "privlogit-local", "--simulate", "200,3,5", "--nodes", 3,
                 "--keys", keys, "--out", out)
        assert rc == 0
        tr = json.loads(out.read_text())
        want = privlogit_fit(simulate(SimSpec(200, 3, 5)))
        assert tr["iterations"] == want.iterations
        np.testing.assert_allclose(tr["beta"], want.beta, atol=1e-3)

    def test_abort_exit_code(self, keys, tmp_path):
        path = tmp_path / "flat.csv"
        path.write_text("a,b,y\n" + "".join(f"1,1,{i % 2}\n" for i in range(10)))
        rc = run("secure-run", "--protocol", "privlogit-hessian", "--data", path, "--nodes", 2, "--keys", keys)
        assert rc == 3

    def test_separate_processes(self, keys, tmp_path):
        """Each party in its own OS process over TCP."""
        import socket

        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        addr = f"127.0.0.1:{port}"
        common = ["--protocol", "privlogit-hessian", "--nodes", "2", "--transport", "tcp", "--seed", "1"]
        data = ["--simulate", "150,3,8"]
        exe = [sys.executable, "-m", "privlogit.cli", "secure-run"]
        procs = [subprocess.Popen(exe + common + ["--role", "a", "--listen", addr, "--out", str(tmp_path / "a.json")])]
        procs.append(subprocess.Popen(exe + common + ["--role", "b", "--connect", addr, "--keys", str(keys)]))
        for j in (1, 2):
            procs.append(subprocess.Popen(exe + common + data + ["--role", "node", "--index", str(j),
                                                                 "--connect", addr,
                                                                 "--out", str(tmp_path / f"n{j}.json")]))
        codes = [p.wait(timeout=300) for p in procs]
        assert codes == [0, 0, 0, 0]
        a = json.loads((tmp_path / "a.json").read_text())
        want = privlogit_fit(simulate(SimSpec(150, 3, 8)))
        assert a["iterations"] == want.iterations
        for j in (1, 2):
            assert json.loads((tmp_path / f"n{j}.json").read_text())["beta"] == a["beta"]

    def test_bench_json_and_csv(self, keys, tmp_path):
        out = tmp_path / "r.json"
        rc = run("bench", "--simulate", "150,3,2", "--methods", "plain-newton,privlogit-local", "--nodes", 2,
                 "--keys", keys, "--out", out)
        assert rc == 0
        rep = json.loads(out.read_text())
        assert [m["method"] for m in rep["methods"]] == ["plain-newton", "privlogit-local"]
        rc = run("bench", "--simulate", "150,3,2", "--methods", "plain-newton", "--format", "csv",
                 "--out", tmp_path / "r.csv")
        assert rc == 0 and len((tmp_path / "r.csv").read_text().splitlines()) == 2

    def test_bench_deterministic(self, keys, tmp_path):
        outs = []
        for k in range(2):
            path = tmp_path / f"r{k}.json"
            run("bench", "--simulate", "150,3,2", "--methods", "plain-privlogit,privlogit-hessian", "--nodes", 2,
                "--keys", keys, "--out", path)
            rep = json.loads(path.read_text())
            for m in rep["methods"]:
                m["setup_seconds"] = m["total_seconds"] = 0
            rep["speedup_vs_secure_newton"] = {}
            outs.append(rep)
        assert outs[0] == outs[1]

    def test_unknown_method(self):
        assert run("bench", "--simulate", "50,2,0", "--methods", "sgd") == 2
