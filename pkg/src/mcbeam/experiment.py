"""Parameter sweeps over random instances with per-run reports and aggregates.

An experiment spec is a JSON object (see :class:`ExperimentSpec`). Running
it writes, under ``output_dir``::

    spec.json                   resolved spec, for provenance
    runs/<id>/report.json       configuration, solver report and summary
    runs/<id>/trajectory.csv    inner/probe trajectory of the run
    aggregate.csv               per grid point statistics (deterministic)
    timing.csv                  per grid point mean wall time

``aggregate.csv`` holds only quantities that are reproducible bit for bit
for fixed seeds; wall times live in ``timing.csv``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from mcbeam.admm import AdmmConfig, solve_consensus_subproblem, solve_qos_subproblem
from mcbeam.ccp import CcpConfig, CcpFailure, ccp_qos, initialize
from mcbeam.mmf import BisectionConfig, MmfFailure, solve_mmf
from mcbeam.model import check_feasibility, generate_instance, total_power
from mcbeam.units import db_to_linear, dbm_to_watts, linear_to_db, watts_to_dbm

__all__ = ["ExperimentSpec", "SCHEMA_VERSION", "run_experiment", "run_single",
           "aggregate_rows", "read_run_summaries", "format_csv", "parse_csv"]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODES = ("qos", "mmf", "subproblem-bench")
SOLVERS = ("ccp-admm", "ccp-consensus")
BENCH_THRESHOLD = 1e-4
KEY_COLUMNS = ["N", "K", "M", "sinr_target_db", "power_cap_dbm", "solver"]


@dataclass
class ExperimentSpec:
    """Sweep description; dB-valued fields are converted once when instances are built.

    ``power_cap_dbm`` is per antenna unless ``total_power_dbm`` is given,
    in which case every antenna gets ``P_all / N``. Seeds are
    ``seeds`` if given, else ``seed_base + 0 .. repetitions-1``.
    """

    mode: str = "qos"
    N: list = field(default_factory=lambda: [16])
    K: list = field(default_factory=lambda: [8])
    M: list = field(default_factory=lambda: [2])
    sinr_target_db: list = field(default_factory=lambda: [10.0])
    power_cap_dbm: list = field(default_factory=lambda: [40.0])
    total_power_dbm: list | None = None
    noise_power: float = 1.0
    sinr_weight: float = 1.0
    seeds: list | None = None
    repetitions: int = 10
    seed_base: int = 0
    solver: str = "ccp-admm"
    parallelism: str = "sequential"
    jobs: int = 1
    rho: float | None = None
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_inner_iterations: int = 3000
    rel_decrease_tol: float = 1e-3
    max_outer_iterations: int = 30
    retry_budget: int = 10
    tol_t: float = 1e-3
    max_probes: int = 60
    output_dir: str = "out"

    def __post_init__(self):
        for name in ("N", "K", "M", "sinr_target_db", "power_cap_dbm", "total_power_dbm",
                     "seeds"):
            val = getattr(self, name)
            if val is not None and not isinstance(val, (list, tuple)):
                setattr(self, name, [val])
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        for name in ("N", "K", "M", "sinr_target_db"):
            if not getattr(self, name):
                raise ValueError(f"grid {name} is empty")
        if not self.power_cap_dbm and not self.total_power_dbm:
            raise ValueError("need power_cap_dbm or total_power_dbm")
        for name in ("N", "K", "M"):
            if any(int(v) != v or v < 1 for v in getattr(self, name)):
                raise ValueError(f"grid {name} must hold positive integers")
        if self.seeds is None and int(self.repetitions) < 1:
            raise ValueError("repetitions must be positive")
        if int(self.jobs) < 1:
            raise ValueError("jobs must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def seed_list(self) -> list:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [int(self.seed_base) + i for i in range(int(self.repetitions))]

    def power_levels(self):
        """``(label_dbm, per_antenna_fn)`` pairs; the function maps ``N`` to watts."""
        if self.total_power_dbm:
            return [(float(p), lambda N, p=p: float(dbm_to_watts(p)) / N)
                    for p in self.total_power_dbm]
        return [(float(p), lambda N, p=p: float(dbm_to_watts(p))) for p in self.power_cap_dbm]

    def points(self):
        """Grid points in a fixed order: N, K, M, target, power, then seed."""
        out = []
        for N, K, M, g_db, (p_dbm, cap) in itertools.product(
                self.N, self.K, self.M, self.sinr_target_db, self.power_levels()):
            if M > K:
                log.warning("skipping grid point with M=%s > K=%s", M, K)
                continue
            for seed in self.seed_list():
                out.append({"N": int(N), "K": int(K), "M": int(M),
                            "sinr_target_db": float(g_db), "power_cap_dbm": p_dbm,
                            "power_cap_w": cap(int(N)), "seed": seed})
        return out

    def admm_config(self) -> AdmmConfig:
        return AdmmConfig(rho=self.rho, eps_abs=self.eps_abs, eps_rel=self.eps_rel,
                          max_iterations=self.max_inner_iterations,
                          parallelism=self.parallelism)

    def ccp_config(self, seed: int) -> CcpConfig:
        return CcpConfig(rel_decrease_tol=self.rel_decrease_tol,
                         max_outer_iterations=self.max_outer_iterations,
                         admm=self.admm_config(), retry_budget=self.retry_budget,
                         inner="consensus" if self.solver == "ccp-consensus" else "admm",
                         seed=seed)


def run_id(point: dict, solver: str) -> str:
    return (f"N{point['N']}_K{point['K']}_M{point['M']}_g{point['sinr_target_db']:g}"
            f"_P{point['power_cap_dbm']:g}_{solver}_s{point['seed']}")


def _instance(spec, point):
    return generate_instance(point["N"], point["K"], point["M"],
                             sinr_target=float(db_to_linear(point["sinr_target_db"])),
                             noise_power=spec.noise_power,
                             power_cap_per_antenna=point["power_cap_w"],
                             rng_seed=point["seed"], sinr_weight=spec.sinr_weight)


def _run_qos(spec, point, inst):
    summary = {"success": False, "power_w": None, "power_dbm": None, "outer_iterations": 0,
               "inner_iterations": 0, "restarts": 0, "error": None}
    try:
        W, rep = ccp_qos(inst, spec.ccp_config(point["seed"]))
    except CcpFailure as exc:
        summary["error"] = str(exc)
        rep = exc.report
        if rep is None:
            return summary, None, "", 0.0
        return summary, rep.to_dict(), "", rep.wall_time
    feas = check_feasibility(W, inst)
    p = total_power(W)
    summary.update(success=bool(feas.feasible), power_w=p, power_dbm=float(watts_to_dbm(p)),
                   outer_iterations=rep.outer_iterations,
                   inner_iterations=int(sum(rep.inner_iterations)), restarts=rep.restarts)
    return summary, rep.to_dict(), rep.inner_csv(), rep.wall_time


def _probe_csv(probes):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["probe", "t", "r", "inner_iterations", "outer_iterations", "accepted"])
    for i, p in enumerate(probes, start=1):
        wr.writerow([i, repr(p["t"]), "" if p["r"] is None else repr(p["r"]),
                     p["inner_iterations"], p["outer_iterations"], int(p["accepted"])])
    return buf.getvalue()


def _run_mmf(spec, point, inst):
    summary = {"success": False, "t_star": None, "min_sinr_db": None, "power_w": None,
               "power_dbm": None, "probes": 0, "error": None}
    config = BisectionConfig(tol_t=spec.tol_t, max_probes=spec.max_probes,
                             ccp=spec.ccp_config(point["seed"]))
    try:
        W, t_star, rep = solve_mmf(inst, config)
    except MmfFailure as exc:
        summary["error"] = str(exc)
        return summary, exc.report.to_dict(), _probe_csv(exc.report.probes), exc.report.wall_time
    p = total_power(W)
    summary.update(success=True, t_star=float(t_star),
                   min_sinr_db=float(linear_to_db(rep.min_weighted_sinr)),
                   power_w=p, power_dbm=float(watts_to_dbm(p)), probes=len(rep.probes))
    return summary, rep.to_dict(), _probe_csv(rep.probes), rep.wall_time


def _iterations_to(objective, reference, threshold=BENCH_THRESHOLD):
    """First iteration after which the relative error stays below ``threshold``."""
    err = np.abs(np.asarray(objective) - reference) / abs(reference)
    above = np.flatnonzero(err >= threshold)
    if above.size == 0:
        return 1
    if above[-1] == err.size - 1:
        return None
    return int(above[-1]) + 2


def _run_bench(spec, point, inst):
    summary = {"success": False, "reference_objective": None, "iterations_admm": None,
               "iterations_consensus": None, "error": None}
    t0 = time.perf_counter()
    try:
        W0 = initialize(inst, retry_budget=spec.retry_budget, seed=point["seed"])
    except CcpFailure as exc:
        summary["error"] = str(exc)
        return summary, None, "", time.perf_counter() - t0
    base = spec.admm_config()
    tight = AdmmConfig(eps_abs=1e-10, eps_rel=1e-10, max_iterations=20000, rho=spec.rho,
                       parallelism=spec.parallelism)
    ref = solve_qos_subproblem(inst, W0, tight)
    p_ref = total_power(ref.W)
    a = solve_qos_subproblem(inst, W0, base)
    c = solve_consensus_subproblem(inst, W0, base)
    ia = _iterations_to(a.trajectory.objective, p_ref)
    ic = _iterations_to(c.trajectory.objective, p_ref)
    summary.update(success=bool(ref.trajectory.converged), reference_objective=p_ref,
                   iterations_admm=ia, iterations_consensus=ic)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["solver", "iteration", "objective", "relative_error", "primal_residual",
                 "dual_residual", "wall_time"])
    for name, tr in (("admm", a.trajectory), ("consensus", c.trajectory)):
        for it, obj, pr, du, wt in tr.rows():
            wr.writerow([name, it, repr(obj), repr(abs(obj - p_ref) / p_ref), repr(pr),
                         repr(du), repr(wt)])
    doc = {"reference": ref.trajectory.iterations, "admm": a.trajectory.iterations,
           "consensus": c.trajectory.iterations,
           "converged": {"reference": ref.trajectory.converged,
                         "admm": a.trajectory.converged,
                         "consensus": c.trajectory.converged}}
    return summary, doc, buf.getvalue(), time.perf_counter() - t0


_RUNNERS = {"qos": _run_qos, "mmf": _run_mmf, "subproblem-bench": _run_bench}


def run_single(spec: ExperimentSpec, point: dict) -> dict:
    """Run one (grid point, seed). Returns the report document (not written)."""
    inst = _instance(spec, point)
    solver = "admm-vs-consensus" if spec.mode == "subproblem-bench" else spec.solver
    try:
        summary, detail, traj, wall = _RUNNERS[spec.mode](spec, point, inst)
    except Exception as exc:  # a failing run must not stop the sweep
        log.exception("run %s failed", run_id(point, solver))
        summary, detail, traj, wall = {"success": False, "error": repr(exc)}, None, "", 0.0
    return {"schema_version": SCHEMA_VERSION, "id": run_id(point, solver), "mode": spec.mode,
            "solver": solver, "point": point, "spec": spec.to_dict(), "summary": summary,
            "report": detail, "wall_time": wall, "_trajectory": traj}


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def aggregate_rows(docs, mode: str):
    """Per grid point statistics from run report documents.

    Returns ``(aggregate_rows, timing_rows)`` as lists of dicts. Powers are
    averaged in watts over successful runs and then reported in dBm.
    """
    groups = {}
    for d in docs:
        p = d["point"]
        key = (p["N"], p["K"], p["M"], p["sinr_target_db"], p["power_cap_dbm"], d["solver"])
        groups.setdefault(key, []).append(d)
    agg, timing = [], []
    for key in sorted(groups):
        runs = groups[key]
        ok = [r["summary"] for r in runs if r["summary"].get("success")]
        row = dict(zip(KEY_COLUMNS, key))
        row.update(runs=len(runs), successes=len(ok), success_rate=len(ok) / len(runs))
        if mode == "qos":
            pw = _mean([s["power_w"] for s in ok])
            row.update(mean_power_dbm=None if pw is None else float(watts_to_dbm(pw)),
                       mean_outer_iterations=_mean([s["outer_iterations"] for s in ok]),
                       mean_inner_iterations=_mean([s["inner_iterations"] for s in ok]))
        elif mode == "mmf":
            pw = _mean([s["power_w"] for s in ok])
            row.update(mean_min_sinr_db=_mean([s["min_sinr_db"] for s in ok]),
                       mean_power_dbm=None if pw is None else float(watts_to_dbm(pw)),
                       mean_probes=_mean([s["probes"] for s in ok]))
        else:
            row.update(mean_iterations_admm=_mean([s["iterations_admm"] for s in ok]),
                       mean_iterations_consensus=_mean([s["iterations_consensus"] for s in ok]))
        agg.append(row)
        t = dict(zip(KEY_COLUMNS, key))
        t.update(runs=len(runs), mean_wall_time=_mean([r["wall_time"] for r in runs]))
        timing.append(t)
    return agg, timing


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def format_csv(rows) -> str:
    """CSV text with a ``schema_version`` comment line and a header row."""
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    if not rows:
        return buf.getvalue()
    wr = csv.writer(buf, lineterminator="\n")
    cols = list(rows[0])
    wr.writerow(cols)
    for r in rows:
        wr.writerow([_cell(r[c]) for c in cols])
    return buf.getvalue()


def parse_csv(text: str):
    """Inverse of :func:`format_csv`; numeric cells become float, empty cells ``None``."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out = []
    for rec in csv.DictReader(lines):
        row = {}
        for k, v in rec.items():
            if v == "":
                row[k] = None
                continue
            try:
                row[k] = float(v)
            except ValueError:
                row[k] = v
        out.append(row)
    return out


def read_run_summaries(output_dir) -> list:
    """Load every ``runs/*/report.json`` below ``output_dir``."""
    docs = []
    for path in sorted(Path(output_dir, "runs").glob("*/report.json")):
        with open(path) as fh:
            docs.append(json.load(fh))
    return docs


def _write_run(out: Path, doc: dict):
    run_dir = out / "runs" / doc["id"]
    run_dir.mkdir(parents=True, exist_ok=True)
    traj = doc.pop("_trajectory")
    with open(run_dir / "report.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(run_dir / "trajectory.csv", "w", newline="") as fh:
        fh.write(traj)


def run_experiment(spec: ExperimentSpec, progress=None) -> int:
    """Run every grid point and seed, write all artifacts; returns an exit status.

    Per-run failures are recorded in the run report and counted in the
    aggregate; the status is 0 when every run produced a report.
    """
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "spec.json", "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    points = spec.points()
    if int(spec.jobs) > 1:
        with ThreadPoolExecutor(int(spec.jobs)) as pool:
            docs = list(pool.map(lambda p: run_single(spec, p), points))
    else:
        docs = []
        for i, p in enumerate(points):
            docs.append(run_single(spec, p))
            if progress:
                progress(i + 1, len(points), docs[-1])
    for d in docs:
        _write_run(out, d)
    agg, timing = aggregate_rows(docs, spec.mode)
    (out / "aggregate.csv").write_text(format_csv(agg))
    (out / "timing.csv").write_text(format_csv(timing))
    return 0
