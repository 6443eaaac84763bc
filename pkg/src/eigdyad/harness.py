"""Monte Carlo runner, edge-list ingestion and CSV emitters.

Every replication draws from its own stream, seeded by
``derive_seed(master, design_index, n, replication)``, and fills a
pre-allocated slot; aggregation is a sequential fold over slots.  Output files
therefore depend only on the configuration and master seed, never on the
number of workers or the order in which replications finish.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats
from threadpoolctl import threadpool_limits

from eigdyad.core import DyadicDesign, OutcomeMatrix, build_residual_matrix, objective_corrected, offdiag_ones
from eigdyad.dgp import DesignSpec, derive_seed, oracle_outcome, simulate, standard_designs
from eigdyad.errors import ConfigError, ContractViolation, EigDyadError, IngestionError
from eigdyad.estimators import estimate, f_n_step, ols_dyadic
from eigdyad.inference import infer

log = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

ESTIMATORS = ("ols", "ols_adjusted", "single_iteration", "fixed_point", "two_step", "oracle_ols")
INTERVAL_ESTIMATORS = ("single_iteration", "fixed_point", "two_step")
MIN_N = 10
FLOAT_FMT = "{:.17g}"


def fmt(x: float) -> str:
    """Shortest-safe text for a float: 17 significant digits, ``nan`` kept."""
    return FLOAT_FMT.format(float(x))


# --- configuration ----------------------------------------------------------


def _design_from_entry(entry: Any, idx: int) -> DesignSpec:
    if isinstance(entry, str):
        if not entry.startswith("standard:"):
            raise ConfigError(f"design {idx}: string designs must look like 'standard:<1-4>', got {entry!r}")
        try:
            k = int(entry.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"design {idx}: bad standard design {entry!r}") from exc
        if not 1 <= k <= 4:
            raise ConfigError(f"design {idx}: standard designs are numbered 1-4, got {k}")
        return standard_designs()[k - 1]
    spec = DesignSpec.from_dict(entry)
    return spec if spec.name else spec.with_(name=f"design{idx + 1}")


@dataclass(frozen=True)
class RunConfig:
    """A Monte Carlo sweep over designs x sample sizes x replications.

    JSON schema (unknown keys are rejected)::

        {"designs": ["standard:1", {...DesignSpec fields...}],
         "estimators": ["ols", "two_step", "oracle_ols"],
         "replications": 500, "n_grid": [100, 200], "seed": 1,
         "output_dir": "results", "ci_level": 0.95}

    The ``n`` and ``seed`` fields of each design are overridden by the sweep.
    """

    designs: tuple[DesignSpec, ...]
    estimators: tuple[str, ...] = ("ols", "two_step", "oracle_ols")
    replications: int = 500
    n_grid: tuple[int, ...] = (100,)
    seed: int = 0
    output_dir: str = "results"
    ci_level: float = 0.95

    def __post_init__(self) -> None:
        if not self.designs:
            raise ConfigError("config needs at least one design")
        names = [d.name for d in self.designs]
        if len(set(names)) != len(names):
            raise ConfigError(f"design names must be unique, got {names}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ConfigError(f"unknown estimators {bad}; choose from {list(ESTIMATORS)}")
        if len(set(self.estimators)) != len(self.estimators):
            raise ConfigError("estimators listed twice")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ConfigError(f"replications must be a positive integer, got {self.replications}")
        if not self.n_grid or any(int(n) != n or n < MIN_N for n in self.n_grid):
            raise ConfigError(f"n_grid entries must be integers >= {MIN_N}, got {list(self.n_grid)}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigError(f"ci_level must be in (0, 1), got {self.ci_level}")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {"designs", "estimators", "replications", "n_grid", "seed", "output_dir", "ci_level"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "designs" not in d or not isinstance(d["designs"], list):
            raise ConfigError("config needs a 'designs' list")
        kw: dict[str, Any] = {k: v for k, v in d.items() if k != "designs"}
        kw["designs"] = tuple(_design_from_entry(e, i) for i, e in enumerate(d["designs"]))
        for key in ("estimators", "n_grid"):
            if key in kw:
                if not isinstance(kw[key], list):
                    raise ConfigError(f"'{key}' must be a list")
                kw[key] = tuple(kw[key])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot read config {p}: {exc.strerror or exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict[str, Any]:
        return {
            "designs": [d.to_dict() for d in self.designs],
            "estimators": list(self.estimators),
            "replications": self.replications,
            "n_grid": list(self.n_grid),
            "seed": self.seed,
            "output_dir": self.output_dir,
            "ci_level": self.ci_level,
        }


def target_index(spec: DesignSpec) -> int:
    """Coefficient tracked in summaries: the first slope, or the intercept if alone."""
    terms = spec.terms
    slopes = [k for k, t in enumerate(terms) if t != "intercept"]
    return slopes[0] if slopes else 0


# --- replications -----------------------------------------------------------


@dataclass
class _Task:
    design_idx: int
    spec: DesignSpec
    rep: int
    estimators: tuple[str, ...]
    level: float


@dataclass
class _RepOutcome:
    estimates: dict[str, FloatArray | None] = field(default_factory=dict)
    covered: dict[str, NDArray[np.bool_] | None] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    runtimes: dict[str, float] = field(default_factory=dict)


def _run_one(task: _Task) -> _RepOutcome:
    out = _RepOutcome()
    with threadpool_limits(limits=1):
        design, y, truth = simulate(task.spec)
        for name in task.estimators:
            t0 = time.perf_counter()
            try:
                if name == "oracle_ols":
                    mu = ols_dyadic(design, oracle_outcome(design, task.spec, truth)).mu_hat
                    covered = None
                else:
                    rep = estimate(design, y, name)
                    mu = rep.mu_hat
                    covered = None
                    if name in INTERVAL_ESTIMATORS:
                        covered = infer(design, y, rep, task.level).covers(truth.mu0)
                if not np.all(np.isfinite(mu)):
                    raise EigDyadError("non-finite estimate")
                out.estimates[name] = mu
                out.covered[name] = covered
            except (EigDyadError, np.linalg.LinAlgError, ArithmeticError) as exc:
                out.estimates[name] = None
                out.covered[name] = None
                out.errors[name] = f"{type(exc).__name__}: {exc}"
            out.runtimes[name] = time.perf_counter() - t0
    return out


def worker_count() -> int:
    """Worker processes from ``DYAD_THREADS`` (unset or 0: one per CPU)."""
    raw = os.environ.get("DYAD_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"DYAD_THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ConfigError("DYAD_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


# --- results ----------------------------------------------------------------


@dataclass(frozen=True)
class CellResult:
    """Replication estimates of one (design, n, estimator) cell.

    ``estimates`` is ``(S, L)`` with NaN rows for failed replications;
    aggregates skip those rows.
    """

    design: str
    n: int
    estimator: str
    truth: FloatArray
    names: tuple[str, ...]
    target: int
    estimates: FloatArray
    covered: FloatArray
    runtimes: FloatArray
    errors: tuple[tuple[int, str], ...] = ()

    @property
    def ok(self) -> NDArray[np.bool_]:
        return np.all(np.isfinite(self.estimates), axis=1)

    @property
    def replications(self) -> int:
        return self.estimates.shape[0]

    @property
    def failures(self) -> int:
        return int(self.replications - np.sum(self.ok))

    def values(self, coef: int | None = None) -> FloatArray:
        """Successful estimates of one coefficient (the tracked slope by default)."""
        c = self.target if coef is None else coef
        return self.estimates[self.ok, c]

    def mean(self, coef: int | None = None) -> float:
        v = self.values(coef)
        return float(np.mean(v)) if v.size else float("nan")

    def sd(self, coef: int | None = None) -> float:
        v = self.values(coef)
        return float(np.std(v, ddof=1)) if v.size > 1 else float("nan")

    def rmse(self, coef: int | None = None) -> float:
        c = self.target if coef is None else coef
        v = self.values(c)
        return float(np.sqrt(np.mean((v - self.truth[c]) ** 2))) if v.size else float("nan")

    def skewness(self, coef: int | None = None) -> float:
        v = self.values(coef)
        return float(stats.skew(v)) if v.size > 2 else float("nan")

    def coverage(self, coef: int | None = None) -> float:
        c = self.target if coef is None else coef
        col = self.covered[self.ok, c]
        col = col[np.isfinite(col)]
        return float(np.mean(col)) if col.size else float("nan")

    def mean_runtime(self) -> float:
        return float(np.mean(self.runtimes))


@dataclass(frozen=True)
class McResult:
    config: RunConfig
    cells: tuple[CellResult, ...]

    def cell(self, design: str, n: int, estimator: str) -> CellResult:
        for c in self.cells:
            if (c.design, c.n, c.estimator) == (design, n, estimator):
                return c
        raise KeyError((design, n, estimator))

    def summary_rows(self, design: str | None = None) -> list[list[str]]:
        rows = []
        for c in self.cells:
            if design is not None and c.design != design:
                continue
            for k, name in enumerate(c.names):
                rows.append(
                    [
                        c.design,
                        str(c.n),
                        c.estimator,
                        name,
                        fmt(c.truth[k]),
                        str(c.replications),
                        str(c.failures),
                        fmt(c.mean(k)),
                        fmt(c.sd(k)),
                        fmt(c.rmse(k)),
                        fmt(c.skewness(k)),
                        fmt(c.coverage(k)),
                    ]
                )
        return rows


SUMMARY_HEADER = ["design", "n", "estimator", "coefficient", "truth", "replications", "failures",
                  "mean", "sd", "rmse", "skewness", "coverage"]


def run_monte_carlo(config: RunConfig, workers: int | None = None) -> McResult:
    """Simulate and estimate every (design, n, replication); never aborts on a bad draw.

    ``workers`` defaults to :func:`worker_count`.  Each replication runs with a
    single BLAS thread so results do not depend on the parallel schedule.
    """
    nw = worker_count() if workers is None else max(1, int(workers))
    tasks: list[_Task] = []
    for di, base in enumerate(config.designs):
        for n in config.n_grid:
            for rep in range(config.replications):
                spec = base.with_(n=int(n), seed=derive_seed(config.seed, di, int(n), rep))
                tasks.append(_Task(di, spec, rep, config.estimators, config.ci_level))

    if nw > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            outcomes = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * nw))))
    else:
        outcomes = [_run_one(t) for t in tasks]

    cells = []
    pos = 0
    for base in config.designs:
        truth_mu = base.mu0
        l = len(base.terms)
        names = tuple("const" if t == "intercept" else f"x{k}" for k, t in enumerate(base.terms))
        for n in config.n_grid:
            block = outcomes[pos : pos + config.replications]
            pos += config.replications
            for name in config.estimators:
                est = np.full((len(block), l), np.nan)
                cov = np.full((len(block), l), np.nan)
                rt = np.empty(len(block))
                errs = []
                for r, o in enumerate(block):
                    if o.estimates[name] is not None:
                        est[r] = o.estimates[name]
                    if o.covered.get(name) is not None:
                        cov[r] = o.covered[name]
                    if name in o.errors:
                        errs.append((r, o.errors[name]))
                    rt[r] = o.runtimes[name]
                truth = np.array(base.beta) if name == "oracle_ols" else truth_mu
                cells.append(
                    CellResult(base.name, int(n), name, truth, names, target_index(base), est, cov, rt, tuple(errs))
                )
                if errs:
                    log.warning("%s n=%d %s: %d of %d replications failed", base.name, n, name, len(errs), len(block))
    return McResult(config, tuple(cells))


# --- emitters ----------------------------------------------------------------


def _write_csv(path: str | Path, header: list[str], rows: Iterable[list[str]]) -> Path:
    out = Path(path)
    try:
        with out.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror or exc}") from exc
    return out


def emit_histogram_csv(estimates: ArrayLike, path: str | Path) -> Path:
    """One estimate per line under the header ``estimate``."""
    vals = np.asarray(estimates, dtype=np.float64).ravel()
    if vals.size == 0:
        raise ContractViolation("no estimates to write")
    return _write_csv(path, ["estimate"], ([fmt(v)] for v in vals))


def write_mc_outputs(result: McResult, out_dir: str | Path | None = None) -> list[Path]:
    """Summary CSVs (all cells and one per design), histograms, failures and timings.

    Everything except ``timing.csv`` is a pure function of the configuration.
    """
    root = Path(out_dir if out_dir is not None else result.config.output_dir)
    hist = root / "histograms"
    try:
        hist.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {root}: {exc.strerror or exc}") from exc
    written = [_write_csv(root / "summary.csv", SUMMARY_HEADER, result.summary_rows())]
    for d in result.config.designs:
        written.append(_write_csv(root / f"summary_{d.name}.csv", SUMMARY_HEADER, result.summary_rows(d.name)))
    for c in result.cells:
        vals = c.values()
        if vals.size:
            written.append(emit_histogram_csv(vals, hist / f"{c.design}_n{c.n}_{c.estimator}.csv"))
    fails = [[c.design, str(c.n), c.estimator, str(r), msg] for c in result.cells for r, msg in c.errors]
    written.append(_write_csv(root / "failures.csv", ["design", "n", "estimator", "replication", "error"], fails))
    timing = [[c.design, str(c.n), c.estimator, fmt(c.mean_runtime())] for c in result.cells]
    written.append(_write_csv(root / "timing.csv", ["design", "n", "estimator", "mean_runtime_s"], timing))
    cfg = root / "config.json"
    cfg.write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(cfg)
    return written


def fn_profile(design: DyadicDesign, y: OutcomeMatrix, mu_grid: ArrayLike) -> FloatArray:
    """``(G, 3)`` table of ``mu``, ``f_N(mu)`` and the corrected objective at ``mu``."""
    if design.l != 1:
        raise ContractViolation(f"fn profile needs a one-parameter model, got l={design.l}")
    grid = np.asarray(mu_grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ContractViolation("empty grid")
    out = np.empty((grid.size, 3))
    for g, mu in enumerate(grid):
        nxt, spec = f_n_step(design, y, [mu])
        out[g] = mu, nxt[0], objective_corrected(build_residual_matrix(design, y, [mu]), spec)
    return out


def emit_fn_profile(design: DyadicDesign, y: OutcomeMatrix, mu_grid: ArrayLike, path: str | Path) -> Path:
    table = fn_profile(design, y, mu_grid)
    return _write_csv(path, ["mu", "f_n", "objective_corrected"], ([fmt(v) for v in row] for row in table))


# --- edge lists -------------------------------------------------------------


def _node_order(labels: set[str]) -> list[str]:
    try:
        return sorted(labels, key=int)
    except ValueError:
        return sorted(labels)


def load_edge_list(
    path: str | Path, intercept: bool = True
) -> tuple[DyadicDesign, OutcomeMatrix, list[str]]:
    """Read ``i,j,y,x1..xL`` rows of a complete undirected network.

    Node labels are sorted (numerically when all are integers) and mapped to
    ``0..N-1``.  With ``intercept`` an off-diagonal ones regressor named
    ``const`` is prepended.  Returns the design, the outcome and the labels.

    Raises:
        IngestionError: bad header, non-numeric cell, self pair, duplicate
            pair or missing pairs.
        OSError: the file cannot be read.
    """
    p = Path(path)
    try:
        fh = p.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read edge list {p}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if len(header) < 3 or header[:3] != ["i", "j", "y"]:
            raise IngestionError(f"{p}: header must start with i,j,y, got {header}")
        xcols = header[3:]
        raw: list[tuple[str, str, list[float], int]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"{p}:{lineno}: expected {len(header)} fields, got {len(row)}")
            a, b = row[0].strip(), row[1].strip()
            if a == b:
                raise IngestionError(f"{p}:{lineno}: self pair ({a}, {b})")
            try:
                vals = [float(c) for c in row[2:]]
            except ValueError as exc:
                raise IngestionError(f"{p}:{lineno}: non-numeric value ({exc})") from exc
            if not all(np.isfinite(vals)):
                raise IngestionError(f"{p}:{lineno}: non-finite value")
            raw.append((a, b, vals, lineno))

    labels = _node_order({r[0] for r in raw} | {r[1] for r in raw})
    n = len(labels)
    if n < 2:
        raise IngestionError(f"{p}: need at least two nodes")
    index = {lab: k for k, lab in enumerate(labels)}
    mats = np.zeros((1 + len(xcols), n, n))
    seen = np.zeros((n, n), dtype=bool)
    for a, b, vals, lineno in raw:
        i, j = index[a], index[b]
        if seen[i, j]:
            raise IngestionError(f"{p}:{lineno}: duplicate pair ({a}, {b})")
        seen[i, j] = seen[j, i] = True
        mats[:, i, j] = mats[:, j, i] = vals
    missing = n * (n - 1) // 2 - len(raw)
    if missing:
        iu = np.triu_indices(n, k=1)
        gaps = [(labels[i], labels[j]) for i, j in zip(*iu) if not seen[i, j]]
        raise IngestionError(f"{p}: incomplete network, {missing} missing pair(s), e.g. {gaps[:3]}")

    x = mats[1:]
    names = tuple(xcols)
    idx = None
    if intercept:
        x = np.concatenate([offdiag_ones(n)[None], x])
        names = ("const",) + names
        idx = 0
    if x.shape[0] == 0:
        raise IngestionError(f"{p}: no regressors (no x columns and intercept disabled)")
    try:
        design = DyadicDesign(x, idx, names)
    except ContractViolation as exc:
        raise IngestionError(f"{p}: {exc}") from exc
    return design, OutcomeMatrix(mats[0]), labels


def write_edge_list(design: DyadicDesign, y: OutcomeMatrix, path: str | Path) -> Path:
    """Write the upper triangle as ``i,j,y,x1..`` rows (intercept column omitted)."""
    cols = design.slopes
    n = design.n
    iu = np.triu_indices(n, k=1)
    header = ["i", "j", "y"] + [design.names[k] for k in cols]
    yv = y.y[iu]
    xv = [design.x[k][iu] for k in cols]
    rows = ([str(i), str(j), fmt(yv[r])] + [fmt(x[r]) for x in xv] for r, (i, j) in enumerate(zip(*iu)))
    return _write_csv(path, header, rows)
