"""Convex-concave outer loop for power minimisation and the max-min probe problem.

Each outer iteration replaces the concave part of every SINR constraint by
its tangent at the current beamformer and solves the resulting convex
problem with an ADMM engine from :mod:`mcbeam.admm`. Starting points come
from :func:`initialize`.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from mcbeam.admm import (AdmmConfig, FactorCache, FeasibilitySearchFailed,
                         random_initial_beamformer, solve_consensus_subproblem,
                         solve_feasibility_admm, solve_mmf_subproblem, solve_qos_subproblem)
from mcbeam.model import (ProblemInstance, antenna_power, check_feasibility, compute_all_sinr,
                          scale_to_targets, total_power)
from mcbeam.qcqp1 import InfeasibleSubproblemError, project_rows

__all__ = [
    "CcpConfig",
    "CcpReport",
    "CcpFailure",
    "closed_form_start",
    "zero_forcing_matrix",
    "initialize",
    "polish_iterate",
    "ccp_qos",
    "ccp_p",
]

INIT_STRATEGIES = ("closed-form-first", "admm-search", "provided")
INNER_SOLVERS = ("admm", "consensus")
COND_LIMIT = 1e8


@dataclass(frozen=True)
class CcpConfig:
    """Outer-loop settings.

    ``inner`` selects the engine for the convexified problem (``"admm"`` or
    the ``"consensus"`` baseline; the max-min probe always uses ``"admm"``).
    ``seed`` drives the random restarts.
    """

    rel_decrease_tol: float = 1e-3
    max_outer_iterations: int = 30
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    init_strategy: str = "closed-form-first"
    retry_budget: int = 10
    inner: str = "admm"
    feasibility_max_iterations: int = 3000
    seed: int = 0

    def __post_init__(self):
        if not self.rel_decrease_tol > 0:
            raise ValueError("rel_decrease_tol must be positive")
        if int(self.max_outer_iterations) < 1 or int(self.retry_budget) < 1:
            raise ValueError("iteration and retry budgets must be positive")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")
        if self.inner not in INNER_SOLVERS:
            raise ValueError(f"unknown inner solver {self.inner!r}")

    def to_dict(self) -> dict:
        return {"rel_decrease_tol": self.rel_decrease_tol,
                "max_outer_iterations": int(self.max_outer_iterations),
                "admm": self.admm.to_dict(), "init_strategy": self.init_strategy,
                "retry_budget": int(self.retry_budget), "inner": self.inner,
                "feasibility_max_iterations": int(self.feasibility_max_iterations),
                "seed": int(self.seed)}


@dataclass
class CcpReport:
    """Outcome of one outer loop.

    ``objective`` holds the objective after each outer iteration (total
    power, or the power ratio ``r`` for the probe problem); ``start_value``
    is the objective at the starting point.
    """

    mode: str
    objective: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    inner_converged: list = field(default_factory=list)
    outer_wall_time: list = field(default_factory=list)
    start: str = ""
    start_value: float = float("nan")
    restarts: int = 0
    converged: bool = False
    feasibility: dict | None = None
    target_scale: float | None = None
    wall_time: float = 0.0
    inner_trajectories: list = field(default_factory=list, repr=False)

    @property
    def outer_iterations(self) -> int:
        return len(self.objective)

    def relative_decrease(self) -> list:
        p = np.asarray(self.objective, float)
        return list(np.abs(np.diff(p)) / p[:-1])

    def to_dict(self) -> dict:
        return {"mode": self.mode, "objective": [float(x) for x in self.objective],
                "inner_iterations": [int(x) for x in self.inner_iterations],
                "inner_converged": [bool(x) for x in self.inner_converged],
                "outer_iterations": self.outer_iterations, "start": self.start,
                "start_value": float(self.start_value), "restarts": int(self.restarts),
                "converged": bool(self.converged), "feasibility": self.feasibility,
                "target_scale": self.target_scale, "wall_time": float(self.wall_time)}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def outer_csv(self) -> str:
        """``outer_iteration, objective, inner_iterations, inner_converged, wall_time``."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["outer_iteration", "objective", "inner_iterations", "inner_converged",
                     "wall_time"])
        for i, row in enumerate(zip(self.objective, self.inner_iterations,
                                    self.inner_converged, self.outer_wall_time), start=1):
            wr.writerow([i, repr(float(row[0])), int(row[1]), int(bool(row[2])),
                         repr(float(row[3]))])
        return buf.getvalue()

    def inner_csv(self) -> str:
        """Concatenated inner trajectories, one block per outer iteration."""
        parts = []
        for i, tr in enumerate(self.inner_trajectories, start=1):
            text = tr.to_csv(prefix=[("outer_iteration", i)])
            parts.append(text if not parts else text.split("\n", 1)[1])
        return "".join(parts)


class CcpFailure(RuntimeError):
    """No usable starting point within the retry budget."""

    def __init__(self, msg, report: CcpReport | None = None):
        super().__init__(msg)
        self.report = report


def zero_forcing_matrix(instance: ProblemInstance, theta=None, sinr_target=None) -> np.ndarray:
    """``A`` with ``A[k, m_k] = sqrt(gamma_k sigma_k^2) exp(j theta_k)`` and zeros elsewhere."""
    K, M = instance.num_users, instance.num_groups
    target = instance.sinr_target if sinr_target is None else np.broadcast_to(
        np.asarray(sinr_target, float), (K,))
    theta = np.zeros(K) if theta is None else np.asarray(theta, float)
    A = np.zeros((K, M), complex)
    A[np.arange(K), instance.group_of_user] = np.sqrt(target * instance.noise_power) * np.exp(
        1j * theta)
    return A


def closed_form_start(instance: ProblemInstance, theta=None, sinr_target=None) -> np.ndarray:
    """Zero-forcing start ``W = H (H^H H)^{-1} A``.

    Every user receives its own group's signal at exactly its target SINR
    and no interference. Needs ``N >= K`` and full column rank.
    """
    H = instance.channels
    N, K, _ = instance.shape
    if N < K:
        raise ValueError(f"closed-form start needs N >= K, got N={N}, K={K}")
    A = zero_forcing_matrix(instance, theta, sinr_target)
    G = H.conj().T @ H
    return H @ np.linalg.solve(G, A)


def _closed_form_ok(instance):
    N, K, _ = instance.shape
    if N < K:
        return False
    H = instance.channels
    return bool(np.linalg.cond(H.conj().T @ H) < COND_LIMIT)


def _start_candidates(instance, strategy, retry_budget, seed, sinr_target,
                      feasibility_max_iterations=3000):
    """Yield ``(W, provenance)`` start points, at most ``retry_budget`` of them."""
    use_closed = strategy == "closed-form-first" and _closed_form_ok(instance)
    K = instance.num_users
    cache = None
    for attempt in range(int(retry_budget)):
        rng = np.random.default_rng([int(seed), attempt])
        if use_closed:
            theta = None if attempt == 0 else rng.uniform(0, 2 * np.pi, K)
            yield closed_form_start(instance, theta, sinr_target), "closed-form"
            continue
        if cache is None:
            cache = FactorCache.unit(instance.channels)
        W_init = random_initial_beamformer(instance, rng, sinr_target)
        try:
            W = solve_feasibility_admm(instance, W_init, feasibility_max_iterations, cache,
                                       sinr_target)
        except FeasibilitySearchFailed:
            continue
        yield W, "admm-search"


def initialize(instance: ProblemInstance, strategy: str = "closed-form-first",
               retry_budget: int = 10, seed: int = 0, sinr_target=None,
               feasibility_max_iterations: int = 3000) -> np.ndarray:
    """A beamformer meeting every SINR target (power caps not enforced).

    With ``"closed-form-first"`` the zero-forcing start is used whenever
    ``N >= K`` and ``H^H H`` is well conditioned; otherwise random points
    are pushed towards the SINR set by the feasibility ADMM, with up to
    ``retry_budget`` different seeds. Raises :class:`CcpFailure` when every
    attempt fails.
    """
    if strategy == "provided":
        raise ValueError("strategy 'provided' needs an explicit start point")
    for W, _ in _start_candidates(instance, strategy, retry_budget, seed, sinr_target,
                                  feasibility_max_iterations):
        return W
    raise CcpFailure(f"no SINR-feasible start found in {retry_budget} attempts")


def polish_iterate(W, instance: ProblemInstance, sinr_target=None) -> np.ndarray:
    """Remove the residual ADMM inexactness from an inner solution.

    Rows over their power cap are scaled back onto it, then the whole
    matrix is scaled up by the smallest factor that restores every SINR
    target, if that is needed and keeps all antennas within their caps.
    """
    W = project_rows(W, instance.antenna_power_cap)
    Ws, s = scale_to_targets(W, instance, sinr_target)
    if Ws is not None and s > 1.0:
        if np.all(antenna_power(Ws) <= instance.antenna_power_cap):
            return Ws
    return W


def _run_outer(instance, W_start, config, inner_solve, objective, report, sinr_target,
               polish=True):
    """Shared outer loop. Returns the final ``W``; fills ``report``."""
    W = W_start
    t0 = time.perf_counter()
    for it in range(int(config.max_outer_iterations)):
        res = inner_solve(W)
        W_new, traj = res[0], res[-1]
        if polish:
            W_new = polish_iterate(W_new, instance, sinr_target)
        report.objective.append(objective(W_new, res))
        report.inner_iterations.append(traj.iterations)
        report.inner_converged.append(traj.converged)
        report.outer_wall_time.append(time.perf_counter() - t0)
        report.inner_trajectories.append(traj)
        W = W_new
        p = report.objective
        if len(p) >= 2 and abs(p[-1] - p[-2]) <= config.rel_decrease_tol * abs(p[-2]):
            report.converged = True
            break
    return W


def _inner_qos(instance, config, cache):
    if config.inner == "consensus":
        return lambda W: solve_consensus_subproblem(instance, W, config.admm)
    return lambda W: solve_qos_subproblem(instance, W, config.admm, cache)


def ccp_qos(instance: ProblemInstance, config: CcpConfig | None = None, W0=None):
    """Minimise total power subject to SINR targets and per-antenna caps.

    Returns ``(W, report)``. The first convexified problem is solved at the
    start point; if it is infeasible (zero own-group gain) or the inner
    solver does not converge, the next start point is tried. Each outer
    iterate is polished with :func:`polish_iterate`. The loop stops when
    the relative decrease of total power falls below
    ``config.rel_decrease_tol``.
    """
    config = config or CcpConfig()
    t0 = time.perf_counter()
    N = instance.num_antennas
    cache = (FactorCache.qos(instance.channels, config.admm.penalty(N))
             if config.inner == "admm" else None)
    inner = _inner_qos(instance, config, cache)
    report = CcpReport(mode="qos")
    if W0 is not None or config.init_strategy == "provided":
        if W0 is None:
            raise ValueError("init_strategy 'provided' needs W0")
        starts = iter([(np.asarray(W0, complex), "provided")])
    else:
        starts = _start_candidates(instance, config.init_strategy, config.retry_budget,
                                   config.seed, None, config.feasibility_max_iterations)

    first = None
    for W_start, origin in starts:
        try:
            res = inner(W_start)
        except InfeasibleSubproblemError:
            report.restarts += 1
            continue
        if not res[-1].converged:
            report.restarts += 1
            continue
        first = (W_start, origin, res)
        break
    if first is None:
        report.wall_time = time.perf_counter() - t0
        raise CcpFailure("convexified problem infeasible at every start point "
                         f"({report.restarts} attempts)", report)

    W_start, report.start, res0 = first
    report.start_value = total_power(W_start)
    replay = iter([res0])

    def inner_once(W):
        # reuse the already computed first solve
        r = next(replay, None)
        return r if r is not None else inner(W)

    W = _run_outer(instance, W_start, config, inner_once, lambda Wn, _: total_power(Wn),
                   report, None)
    report.feasibility = check_feasibility(W, instance).to_dict()
    report.wall_time = time.perf_counter() - t0
    return W, report


def _warm_start(instance, targets, W_warm, config):
    if W_warm is not None:
        W_warm = np.asarray(W_warm, complex)
        if np.all(compute_all_sinr(W_warm, instance) >= targets):
            return W_warm, "warm"
        Ws, _ = scale_to_targets(W_warm, instance, targets)
        if Ws is not None:
            return Ws, "warm-scaled"
    strategy = "closed-form-first" if config.init_strategy == "provided" else config.init_strategy
    W = initialize(instance, strategy, config.retry_budget, config.seed, targets,
                   config.feasibility_max_iterations)
    return W, "initialized"


def ccp_p(instance: ProblemInstance, t: float, config: CcpConfig | None = None, W_warm=None,
          cache: FactorCache | None = None):
    """Minimise the largest per-antenna power ratio at SINR targets ``t * g``.

    Returns ``(W, r, report)`` with ``r = max_n power_n / P_n`` of the
    returned ``W``. The warm start is used as is when it meets the scaled
    targets, scaled up when that suffices, and replaced by
    :func:`initialize` otherwise.
    """
    config = config or CcpConfig()
    t0 = time.perf_counter()
    targets = float(t) * instance.sinr_weight
    if cache is None:
        cache = FactorCache.unit(instance.channels)
    report = CcpReport(mode="mmf", target_scale=float(t))
    W_start, report.start = _warm_start(instance, targets, W_warm, config)
    cap = instance.antenna_power_cap

    def ratio(W):
        return float(np.max(antenna_power(W) / cap))

    report.start_value = ratio(W_start)

    def inner(W):
        return solve_mmf_subproblem(instance, targets, W, config.admm, cache)

    W = _run_outer(instance, W_start, config, inner, lambda Wn, _: ratio(Wn), report,
                   targets, polish=False)
    Ws, s = scale_to_targets(W, instance, targets)
    if Ws is not None and s > 1.0:
        # inner inexactness leaves the targets met only approximately
        W = Ws
        report.objective[-1] = ratio(W)
    r = ratio(W)
    report.feasibility = check_feasibility(W, instance, sinr_target=targets,
                                           check_power=False).to_dict()
    report.wall_time = time.perf_counter() - t0
    return W, r, report

