"""Data ingestion, synthetic data, partitioning and the benchmark driver."""
from __future__ import annotations

import csv
import io
import json
import math
import operator
import os
import re
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from . import paillier
from .core import (ConfigurationError, Dataset, Diverged, ModelConfig, newton_fit, privlogit_fit,
                   sigmoid)
from .protocols.session import Protocol, ProtocolAbort, SessionConfig, run_session
from .secure.counters import OpCounters

SCHEMA_VERSION = "privlogit-bench/1"
PLAIN_METHODS = ("plain-newton", "plain-privlogit")
SECURE_METHODS = ("secure-newton", "privlogit-hessian", "privlogit-local")
ALL_METHODS = PLAIN_METHODS + SECURE_METHODS
WINE_FILES = ("winequality-red.csv", "winequality-white.csv")


class HarnessError(Exception):
    pass


class ParseError(HarnessError, ValueError):
    def __init__(self, message: str, row: Optional[int] = None, col: Optional[int] = None):
        where = "" if row is None else f" (row {row}" + ("" if col is None else f", column {col}") + ")"
        super().__init__(message + where)
        self.row = row
        self.col = col


class EmptyInput(HarnessError, ValueError):
    pass


class PartitionError(HarnessError, ValueError):
    pass


# -- CSV ----------------------------------------------------------------------

_RULE = re.compile(r"^\s*(>=|<=|==|!=|>|<)\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*$")
_OPS = {">=": operator.ge, "<=": operator.le, "==": operator.eq, "!=": operator.ne,
        ">": operator.gt, "<": operator.lt}


def parse_binarize_rule(rule: str):
    """'>=6' -> callable mapping a response array to {0, 1}."""
    m = _RULE.match(rule)
    if not m:
        raise ConfigurationError(f"binarize rule must look like '>=6', got {rule!r}")
    op, thr = _OPS[m.group(1)], float(m.group(2))
    return lambda v: op(v, thr).astype(np.float64)


@dataclass(frozen=True)
class CsvSpec:
    path: Union[str, Path]
    has_header: bool = True
    response_column: Union[str, int, None] = None
    standardize: bool = False
    add_intercept: bool = False
    binarize_rule: Optional[str] = None


def _sniff_delimiter(sample: str) -> str:
    try:
        return csv.Sniffer().sniff(sample, delimiters=",;\t ").delimiter
    except csv.Error:
        return ","


def read_table(path, has_header: bool = True):
    """Raw numeric table: (header or None, float matrix)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise HarnessError(f"cannot read {path}: {exc}") from exc
    if not text.strip():
        raise EmptyInput(f"{path} is empty")
    rows = [r for r in csv.reader(io.StringIO(text), delimiter=_sniff_delimiter(text[:4096])) if r]
    header = None
    if has_header:
        header = [h.strip().strip('"') for h in rows[0]]
        rows = rows[1:]
    if not rows:
        raise EmptyInput(f"{path} has no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    first = 2 if has_header else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"expected {width} fields, found {len(row)}", row=first + i)
        for j, cell in enumerate(row):
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", row=first + i, col=j + 1) from None
            if not math.isfinite(out[i, j]):
                raise ParseError(f"non-finite cell {cell!r}", row=first + i, col=j + 1)
    return header, out


def standardize_columns(x: np.ndarray) -> np.ndarray:
    """Per-column z-score; constant columns are only centred."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return (x - mu) / sd


def finish_features(x: np.ndarray, standardize: bool, add_intercept: bool) -> np.ndarray:
    if standardize:
        x = standardize_columns(x)
    if add_intercept:
        x = np.hstack([np.ones((x.shape[0], 1)), x])
    return x


def _binarize(y: np.ndarray, rule: Optional[str]) -> np.ndarray:
    if rule is not None:
        return parse_binarize_rule(rule)(y)
    bad = np.flatnonzero((y != 0) & (y != 1))
    if bad.size:
        raise ParseError(f"response value {y[bad[0]]:g} is not 0/1 and no binarize rule was given",
                         row=int(bad[0]) + 1)
    return y


def load_csv(spec: CsvSpec) -> Dataset:
    header, table = read_table(spec.path, spec.has_header)
    col = spec.response_column
    if col is None:
        idx = table.shape[1] - 1
    elif isinstance(col, str) and not col.lstrip("-").isdigit():
        if header is None or col not in header:
            raise ConfigurationError(f"response column {col!r} not found in the header")
        idx = header.index(col)
    else:
        idx = int(col) % table.shape[1]
    y = _binarize(table[:, idx], spec.binarize_rule)
    x = np.delete(table, idx, axis=1)
    if x.shape[1] == 0 and not spec.add_intercept:
        raise ParseError("no feature columns")
    return Dataset(finish_features(x, spec.standardize, spec.add_intercept), y)


def load_wine(directory) -> Dataset:
    """Red and white wine quality tables merged; quality >= 6 is the positive class.

    Features are z-scored over the merged table and an intercept column is
    prepended, giving 6497 x 12 for the standard files.
    """
    directory = Path(directory)
    tables = []
    for name in WINE_FILES:
        path = directory / name
        if not path.exists():
            raise HarnessError(f"{path} not found")
        tables.append(read_table(path, True)[1])
    table = np.vstack(tables)
    y = parse_binarize_rule(">=6")(table[:, -1])
    return Dataset(finish_features(table[:, :-1], True, True), y)


def wine_dir_from_env() -> Optional[Path]:
    d = os.environ.get("PRIVLOGIT_WINE_DIR")
    if d and all((Path(d) / f).exists() for f in WINE_FILES):
        return Path(d)
    return None


def write_csv(data: Dataset, path) -> None:
    header = [f"x{j}" for j in range(1, data.p + 1)] + ["y"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row, yi in zip(data.x, data.y):
            w.writerow([repr(float(v)) for v in row] + [int(yi)])


# -- synthetic data and partitioning ------------------------------------------

@dataclass(frozen=True)
class SimSpec:
    n: int
    p: int
    seed: int = 0
    beta_true: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not int(self.n) >= int(self.p) >= 1:
            raise ConfigurationError(f"need n >= p >= 1, got n={self.n}, p={self.p}")
        if self.beta_true is not None and len(self.beta_true) != self.p:
            raise ConfigurationError("beta_true must have p entries")


def simulate(spec: SimSpec) -> Dataset:
    """Standard-normal covariates, Bernoulli(sigmoid(x'beta)) responses."""
    rng = np.random.default_rng(spec.seed)
    if spec.beta_true is None:
        beta = rng.uniform(-1.0, 1.0, spec.p)
    else:
        beta = np.asarray(spec.beta_true, dtype=np.float64)
    x = rng.standard_normal((spec.n, spec.p))
    y = (rng.random(spec.n) < sigmoid(x @ beta)).astype(np.float64)
    return Dataset(x, y)


def parse_sim_triplet(text: str) -> SimSpec:
    try:
        n, p, seed = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"--simulate expects n,p,seed, got {text!r}") from None
    return SimSpec(n, p, seed)


def partition(data: Dataset, s: int, seed: int = 0) -> List[Dataset]:
    """Random balanced row split into s blocks (sizes differ by at most one)."""
    if not 2 <= s <= 64:
        raise PartitionError(f"number of blocks must be in [2, 64], got {s}")
    if s > data.n:
        raise PartitionError(f"cannot split {data.n} rows into {s} non-empty blocks")
    perm = np.random.default_rng(seed).permutation(data.n)
    return [Dataset(data.x[np.sort(b)], data.y[np.sort(b)]) for b in np.array_split(perm, s)]


# -- benchmark ------------------------------------------------------------------

def r_squared(beta, reference) -> float:
    """Squared Pearson correlation of two coefficient vectors."""
    a = np.asarray(beta, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("R^2 needs two vectors of equal length >= 2")
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return 1.0 if np.array_equal(a, b) else 0.0
    r = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
    return min(1.0, max(0.0, r * r))


@dataclass(frozen=True)
class BenchConfig:
    nodes: int = 4
    lam: float = 0.0
    tol: float = 1e-6
    max_iter: int = 500
    key_bits: int = 1024
    seed: int = 0
    transport: str = "inproc"
    timeout: float = 30.0


@dataclass
class MethodEntry:
    method: str
    status: str = "ok"
    error: Optional[str] = None
    iterations: Optional[int] = None
    converged: Optional[bool] = None
    setup_seconds: float = 0.0
    total_seconds: float = 0.0
    op_counters: dict = field(default_factory=lambda: OpCounters().as_dict())
    beta: Optional[List[float]] = None
    r2_vs_newton: Optional[float] = None


@dataclass
class BenchReport:
    dataset: dict
    config: dict
    methods: List[MethodEntry] = field(default_factory=list)
    speedup_vs_secure_newton: dict = field(default_factory=dict)
    schema: str = SCHEMA_VERSION

    def entry(self, method: str) -> MethodEntry:
        for e in self.methods:
            if e.method == method:
                return e
        raise KeyError(method)

    def without_timing(self) -> "BenchReport":
        """Copy with wall-clock fields zeroed (for reproducibility checks)."""
        entries = [replace(e, setup_seconds=0.0, total_seconds=0.0) for e in self.methods]
        return replace(self, methods=entries, speedup_vs_secure_newton={k: 0.0 for k in self.speedup_vs_secure_newton})


def _finite(v):
    return [float(b) for b in v]


def bench(data: Dataset, methods: Sequence[str], config: BenchConfig = BenchConfig(),
          descriptor: Optional[dict] = None, keypair: Optional[paillier.KeyPair] = None) -> BenchReport:
    """Run each method on the same data, partitions and seed, one after another."""
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ConfigurationError(f"unknown methods {unknown}; choose from {list(ALL_METHODS)}")
    methods = list(dict.fromkeys(methods))
    mcfg = ModelConfig(lam=config.lam, tol=config.tol, max_iter=config.max_iter)
    desc = {"n": data.n, "p": data.p, "nodes": config.nodes}
    desc.update(descriptor or {})
    report = BenchReport(dataset=desc, config=asdict(config))
    try:
        reference = newton_fit(data, mcfg).beta
    except Diverged:
        reference = None

    secure = [m for m in methods if m in SECURE_METHODS]
    parts = partition(data, config.nodes, config.seed) if secure else None
    if secure and keypair is None:
        import random

        keypair = paillier.keygen(config.key_bits, random.Random(f"{config.seed}/bench-key"))

    for m in methods:
        entry = MethodEntry(method=m)
        t0 = time.perf_counter()
        try:
            if m in PLAIN_METHODS:
                fit = newton_fit if m == "plain-newton" else privlogit_fit
                res = fit(data, mcfg)
                entry.total_seconds = time.perf_counter() - t0
                entry.iterations, entry.converged, beta = res.iterations, res.converged, res.beta
            else:
                scfg = SessionConfig(s_nodes=config.nodes, protocol=Protocol(m), lam=config.lam, tol=config.tol,
                                     max_iter=config.max_iter, key_bits=config.key_bits, seed=config.seed,
                                     timeout=config.timeout)
                tr = run_session(parts, scfg, transport=config.transport, keypair=keypair).trace
                entry.total_seconds = time.perf_counter() - t0
                entry.setup_seconds = tr.setup_seconds
                entry.iterations, entry.converged, beta = tr.iterations, tr.converged, tr.beta
                entry.op_counters = tr.counters.as_dict()
            entry.beta = _finite(beta)
            if reference is not None and data.p >= 2:
                entry.r2_vs_newton = r_squared(beta, reference)
        except (ProtocolAbort, Diverged, ConfigurationError) as exc:
            entry.status, entry.error = "failed", f"{type(exc).__name__}: {exc}"
            entry.total_seconds = time.perf_counter() - t0
        report.methods.append(entry)

    try:
        base = report.entry("secure-newton")
    except KeyError:
        base = None
    if base is not None and base.status == "ok":
        for e in report.methods:
            if e.status == "ok" and e.total_seconds > 0:
                report.speedup_vs_secure_newton[e.method] = base.total_seconds / e.total_seconds
    return report


# -- report emission ----------------------------------------------------------------

CSV_FIELDS = ("method", "status", "iterations", "converged", "setup_seconds", "total_seconds",
              "r2_vs_newton", "speedup_vs_secure_newton") + tuple(OpCounters().as_dict()) + ("beta", "error")


def report_to_dict(report: BenchReport) -> dict:
    return {
        "schema": report.schema,
        "dataset": dict(report.dataset),
        "config": dict(report.config),
        "methods": [asdict(e) for e in report.methods],
        "speedup_vs_secure_newton": dict(report.speedup_vs_secure_newton),
    }


def report_emit(report: BenchReport, fmt: str = "json") -> bytes:
    if fmt == "json":
        return (json.dumps(report_to_dict(report), indent=2) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for e in report.methods:
            row = {"method": e.method, "status": e.status, "iterations": e.iterations, "converged": e.converged,
                   "setup_seconds": e.setup_seconds, "total_seconds": e.total_seconds,
                   "r2_vs_newton": e.r2_vs_newton,
                   "speedup_vs_secure_newton": report.speedup_vs_secure_newton.get(e.method),
                   "beta": "" if e.beta is None else ";".join(repr(b) for b in e.beta),
                   "error": e.error}
            row.update(e.op_counters)
            w.writerow(["" if row[k] is None else row[k] for k in CSV_FIELDS])
        return buf.getvalue().encode()
    raise ConfigurationError(f"unknown report format {fmt!r}")


def report_load(blob: bytes) -> BenchReport:
    d = json.loads(blob)
    if d.get("schema") != SCHEMA_VERSION:
        raise ParseError(f"unsupported report schema {d.get('schema')!r}")
    return BenchReport(dataset=d["dataset"], config=d["config"],
                       methods=[MethodEntry(**m) for m in d["methods"]],
                       speedup_vs_secure_newton=d["speedup_vs_secure_newton"], schema=d["schema"])
