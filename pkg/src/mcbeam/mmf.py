"""Max-min fair beamforming by bisection on the common SINR scale.

For a scale ``t`` the probe problem minimises the largest per-antenna power
ratio ``r*(t)`` subject to SINR targets ``t * g``. ``r*`` is nondecreasing
in ``t`` and the max-min optimum is the ``t`` where ``r*(t) = 1``, so a
one-dimensional bisection over ``t`` finds it. Each probe is solved by
:func:`mcbeam.ccp.ccp_p`.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from mcbeam.admm import FactorCache
from mcbeam.ccp import CcpConfig, CcpFailure, ccp_p
from mcbeam.model import ProblemInstance, compute_all_sinr

__all__ = ["BisectionConfig", "MmfReport", "MmfFailure", "upper_bound", "solve_mmf",
           "ratio_curve"]


@dataclass(frozen=True)
class BisectionConfig:
    """Bisection settings.

    Stops once ``U - L <= tol_t * (U + L) / 2`` or after ``max_probes``
    probes. Probes whose ratio lands in ``(1, 1 + delta]`` are retried from
    a fresh start before being rejected, since a warm-started outer loop
    may stall at a worse stationary point.
    """

    tol_t: float = 1e-3
    max_probes: int = 60
    delta: float = 1e-2
    ccp: CcpConfig = field(default_factory=CcpConfig)

    def __post_init__(self):
        if not (self.tol_t > 0 and self.delta > 0):
            raise ValueError("tol_t and delta must be positive")
        if int(self.max_probes) < 1:
            raise ValueError("max_probes must be positive")

    def to_dict(self) -> dict:
        return {"tol_t": self.tol_t, "max_probes": int(self.max_probes), "delta": self.delta,
                "ccp": self.ccp.to_dict()}


@dataclass
class MmfReport:
    """Probe log and final bracket of one bisection run."""

    probes: list = field(default_factory=list)
    lower: float = 0.0
    upper: float = 0.0
    t_star: float = 0.0
    min_weighted_sinr: float = float("nan")
    converged: bool = False
    wall_time: float = 0.0
    last_report: object = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"probes": self.probes, "lower": self.lower, "upper": self.upper,
                "t_star": self.t_star, "min_weighted_sinr": self.min_weighted_sinr,
                "converged": bool(self.converged), "wall_time": self.wall_time}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


class MmfFailure(RuntimeError):
    """No probe produced a beamformer within the power caps."""

    def __init__(self, msg, report: MmfReport | None = None):
        super().__init__(msg)
        self.report = report


def upper_bound(instance: ProblemInstance) -> float:
    """Weighted SINR reached when all power goes to the single best user."""
    gains = np.sum(np.abs(instance.channels) ** 2, axis=0)
    P_all = float(np.sum(instance.antenna_power_cap))
    return float(np.max(P_all * gains / (instance.sinr_weight * instance.noise_power)))


def _probe(instance, t, config, W_warm, cache):
    """Run one probe; returns ``(W, r, report)`` or ``None`` when no start exists."""
    try:
        return ccp_p(instance, t, config.ccp, W_warm, cache)
    except CcpFailure:
        return None


def solve_mmf(instance: ProblemInstance, config: BisectionConfig | None = None):
    """Maximise the minimum weighted SINR under per-antenna power caps.

    Returns ``(W, t_star, report)``. ``W`` is the beamformer of the last
    accepted probe (``r* <= 1``, so it respects every cap), and ``t_star``
    is the midpoint of the final bracket. Raises :class:`MmfFailure` if no
    probe is ever accepted.
    """
    config = config or BisectionConfig()
    t0 = time.perf_counter()
    cache = FactorCache.unit(instance.channels)
    report = MmfReport(upper=upper_bound(instance))
    lo, hi = 0.0, report.upper
    best_W = None
    for _ in range(int(config.max_probes)):
        if hi - lo <= config.tol_t * 0.5 * (hi + lo):
            report.converged = True
            break
        t = 0.5 * (lo + hi)
        out = _probe(instance, t, config, best_W, cache)
        retried = False
        if out is not None and best_W is not None and 1.0 < out[1] <= 1.0 + config.delta:
            cold = _probe(instance, t, config, None, cache)
            retried = True
            if cold is not None and cold[1] < out[1]:
                out = cold
        if out is None:
            report.probes.append({"t": t, "r": None, "inner_iterations": 0,
                                  "outer_iterations": 0, "accepted": False,
                                  "retried": retried})
            hi = t
            continue
        W, r, rep = out
        accepted = r <= 1.0
        report.probes.append({"t": t, "r": r, "inner_iterations": int(sum(rep.inner_iterations)),
                              "outer_iterations": rep.outer_iterations, "accepted": accepted,
                              "retried": retried})
        if accepted:
            lo, best_W = t, W
            report.last_report = rep
        else:
            hi = t
    else:
        report.converged = hi - lo <= config.tol_t * 0.5 * (hi + lo)
    report.lower, report.upper = lo, hi
    report.t_star = 0.5 * (lo + hi)
    report.wall_time = time.perf_counter() - t0
    if best_W is None:
        raise MmfFailure("no probe met the power caps", report)
    report.min_weighted_sinr = float(np.min(compute_all_sinr(best_W, instance)
                                            / instance.sinr_weight))
    return best_W, report.t_star, report


def ratio_curve(instance: ProblemInstance, ts, config: CcpConfig | None = None, W_warm=None):
    """Probe values ``r*(t)`` on a grid, each probe warm-started from the previous one."""
    cache = FactorCache.unit(instance.channels)
    out = []
    W = W_warm
    for t in ts:
        W, r, _ = ccp_p(instance, float(t), config, W, cache)
        out.append(r)
    return np.asarray(out)
