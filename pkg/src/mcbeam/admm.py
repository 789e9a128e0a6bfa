"""ADMM engines for the convexified multicast subproblems.

Four engines share the same iteration skeleton (first block, second block,
scaled dual update, residual test):

* :func:`solve_qos_subproblem` -- power minimisation with linearised SINR
  constraints and per-antenna caps, split through the interference
  variables ``Gamma = H^H W`` and the copy ``v = W``.
* :func:`solve_mmf_subproblem` -- the same split plus per-antenna copies
  ``alpha_n = r`` of the common power ratio ``r``.
* :func:`solve_feasibility_admm` -- search for a point meeting the
  non-convex SINR constraints, used to start the CCP loop.
* :func:`solve_consensus_subproblem` -- the consensus baseline with one
  local copy of ``W`` per constraint.

Stopping follows the usual primal/dual residual test with
``eps_abs * sqrt(dim) + eps_rel * scale`` thresholds.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg

from mcbeam.model import ProblemInstance, antenna_power, scale_to_targets
from mcbeam.qcqp1 import (consensus_x_update_batch,
                          gamma_update_convex_batch, gamma_update_feasibility_batch,
                          project_rows, v_alpha_update_batch)

__all__ = [
    "AdmmConfig",
    "AdmmState",
    "FactorCache",
    "Trajectory",
    "QosSolution",
    "MmfSolution",
    "ConsensusSolution",
    "FeasibilitySearchFailed",
    "default_rho",
    "w_update",
    "consensus_w_update",
    "r_update",
    "solve_qos_subproblem",
    "solve_mmf_subproblem",
    "solve_feasibility_admm",
    "solve_consensus_subproblem",
    "random_initial_beamformer",
]

STALL_TOL = 1e-10
TRAJECTORY_FIELDS = ("iteration", "objective", "primal_residual", "dual_residual", "wall_time")


def default_rho(N: int, method: str = "admm") -> float:
    """Default penalty per engine.

    ``2/sqrt(N)`` for power minimisation, ``10/sqrt(N)`` for the consensus
    baseline and ``0.8/N`` for the ratio copies of the max-min engine.
    """
    if method == "consensus":
        return 10.0 / np.sqrt(N)
    if method == "mmf":
        return 0.8 / N
    return 2.0 / np.sqrt(N)


@dataclass(frozen=True)
class AdmmConfig:
    """Inner-loop settings.

    ``rho=None`` picks :func:`default_rho`. ``aux_penalty`` is the max-min
    engine's penalty on the ``Gamma`` and ``v`` consistency constraints;
    ``None`` means ``rho / mean(P_n)``, which keeps the iteration count
    insensitive to the power scale.
    """

    rho: float | None = None
    aux_penalty: float | None = None
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iterations: int = 3000
    parallelism: str = "sequential"
    workers: int = 4

    def __post_init__(self):
        for name in ("rho", "aux_penalty"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive")
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("tolerances must be positive")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be positive")
        if self.parallelism not in ("sequential", "deterministic-parallel"):
            raise ValueError(f"unknown parallelism {self.parallelism!r}")

    def penalty(self, N: int, method: str = "admm") -> float:
        return default_rho(N, method) if self.rho is None else float(self.rho)

    def to_dict(self) -> dict:
        return {"rho": self.rho, "aux_penalty": self.aux_penalty, "eps_abs": self.eps_abs,
                "eps_rel": self.eps_rel, "max_iterations": int(self.max_iterations), "parallelism": self.parallelism,
                "workers": int(self.workers)}


@dataclass
class AdmmState:
    """Primal, auxiliary and scaled dual variables of one ADMM run."""

    Gamma: np.ndarray
    v: np.ndarray
    w: np.ndarray
    lam: np.ndarray
    z: np.ndarray
    alpha: np.ndarray | None = None
    mu: np.ndarray | None = None
    r: float | None = None
    iteration: int = 0


class FactorCache:
    """Cholesky factor of ``diag * I + scale * H H^H``.

    The matrix depends only on the channels and the penalty, so one factor
    serves every ADMM iteration and every outer CCP iteration.
    """

    def __init__(self, H, diag: float, scale: float):
        H = np.asarray(H, complex)
        self.H = H
        self.diag = float(diag)
        self.scale = float(scale)
        A = self.scale * (H @ H.conj().T)
        A[np.diag_indices_from(A)] += self.diag
        self._factor = linalg.cho_factor(A, lower=True, check_finite=False)

    @classmethod
    def qos(cls, H, rho: float) -> "FactorCache":
        """``(2 + rho) I + rho H H^H`` for the power-minimisation engine."""
        return cls(H, 2.0 + rho, rho)

    @classmethod
    def unit(cls, H) -> "FactorCache":
        """``I + H H^H`` for the feasibility and max-min engines."""
        return cls(H, 1.0, 1.0)

    def matrix(self) -> np.ndarray:
        A = self.scale * (self.H @ self.H.conj().T)
        A[np.diag_indices_from(A)] += self.diag
        return A

    def solve(self, B) -> np.ndarray:
        return linalg.cho_solve(self._factor, B, check_finite=False)


def w_update(cache: FactorCache, gamma_plus_lam, v_plus_z=None) -> np.ndarray:
    """Minimise the augmented Lagrangian over ``W``.

    Solves ``A w_m = s * (sum_k h_k (Gamma + lambda)_km + (v + z)_m)`` where
    ``A`` and ``s`` come from the cache (``s = rho`` for the QoS cache,
    ``1`` for the unit cache). ``v_plus_z=None`` drops the copy term.
    """
    B = cache.H @ np.asarray(gamma_plus_lam, complex)
    if v_plus_z is not None:
        B = B + v_plus_z
    return cache.solve(cache.scale * B)


def r_update(alpha, mu, rho: float) -> float:
    """Closed-form minimiser of ``r + (rho/2) sum_n (alpha_n - r + mu_n)^2``."""
    s = np.asarray(alpha, float) + np.asarray(mu, float)
    return float(s.mean() - 1.0 / (s.size * rho))


@dataclass
class Trajectory:
    """Per-iteration log of one ADMM run."""

    iteration: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    primal_residual: list = field(default_factory=list)
    dual_residual: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    converged: bool = False

    def append(self, it, obj, prim, dual, wall):
        self.iteration.append(int(it))
        self.objective.append(float(obj))
        self.primal_residual.append(float(prim))
        self.dual_residual.append(float(dual))
        self.wall_time.append(float(wall))

    @property
    def iterations(self) -> int:
        return len(self.iteration)

    def rows(self):
        return zip(self.iteration, self.objective, self.primal_residual,
                   self.dual_residual, self.wall_time)

    def to_csv(self, dest=None, prefix=()) -> str | None:
        """Write ``iteration, objective, primal_residual, dual_residual, wall_time``.

        ``prefix`` is a sequence of ``(name, value)`` pairs prepended to
        every row. Returns the text when ``dest`` is ``None``.
        """
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow([p[0] for p in prefix] + list(TRAJECTORY_FIELDS))
        for row in self.rows():
            wr.writerow([p[1] for p in prefix] + [row[0]] + [repr(x) for x in row[1:]])
        if dest is None:
            return buf.getvalue()
        with open(dest, "w", newline="") as fh:
            fh.write(buf.getvalue())
        return None

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        tr = cls()
        for rec in csv.DictReader(io.StringIO(text)):
            tr.append(int(rec["iteration"]), float(rec["objective"]),
                      float(rec["primal_residual"]), float(rec["dual_residual"]),
                      float(rec["wall_time"]))
        return tr


class QosSolution(NamedTuple):
    W: np.ndarray
    state: AdmmState
    trajectory: Trajectory


class MmfSolution(NamedTuple):
    W: np.ndarray
    r: float
    trajectory: Trajectory


class ConsensusSolution(NamedTuple):
    W: np.ndarray
    trajectory: Trajectory


class FeasibilitySearchFailed(RuntimeError):
    """No SINR-satisfying point found within the iteration budget."""

    def __init__(self, msg, last_iterate=None, iterations=0):
        super().__init__(msg)
        self.last_iterate = last_iterate
        self.iterations = iterations


class _Blocks:
    """Run a per-index kernel over contiguous index blocks.

    Sequential mode calls the kernel once on the full range. The parallel
    mode splits into fixed blocks, runs them on a thread pool and
    reassembles in index order, so results do not depend on scheduling.
    """

    def __init__(self, config: AdmmConfig):
        self.parallel = config.parallelism == "deterministic-parallel"
        self.workers = max(1, int(config.workers))
        self.pool = ThreadPoolExecutor(self.workers) if self.parallel else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def map(self, fn, n):
        """``fn(slice)`` returns a tuple of arrays; results are stacked along axis 0."""
        if not self.parallel or n < 2:
            return fn(slice(0, n))
        edges = np.linspace(0, n, min(self.workers, n) + 1).astype(int)
        parts = list(self.pool.map(fn, [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]))
        return tuple(np.concatenate([p[i] for p in parts]) for i in range(len(parts[0])))


def _nrm2(*arrays):
    return float(np.sqrt(sum(np.sum(a.real ** 2 + a.imag ** 2) for a in arrays)))


def _own_gain(instance, W):
    return (instance.channels.conj().T @ W)[np.arange(instance.num_users),
                                             instance.group_of_user]


def solve_qos_subproblem(instance: ProblemInstance, W_lin, config: AdmmConfig | None = None,
                         cache: FactorCache | None = None) -> QosSolution:
    """Minimise total power with SINR constraints linearised at ``W_lin``.

    The iteration starts at ``W_lin`` with zero duals. Per iteration the
    interference variables are updated user by user (closed-form convex
    subproblem), the copies antenna by antenna (ball projection), and
    ``W`` group by group with the cached factor. Returns the final ``W``
    iterate; ``trajectory.converged`` tells whether the residual test fired
    before ``max_iterations``.

    Raises :class:`~mcbeam.qcqp1.InfeasibleSubproblemError` if some user
    sees no own-group signal at ``W_lin``.
    """
    config = config or AdmmConfig()
    H = instance.channels
    N, K, M = instance.shape
    rho = config.penalty(N)
    if cache is None:
        cache = FactorCache.qos(H, rho)
    groups, gam, sig, cap = (instance.group_of_user, instance.sinr_target,
                             instance.noise_power, instance.antenna_power_cap)
    W = np.array(W_lin, dtype=complex, copy=True)
    tau = _own_gain(instance, W)
    lam = np.zeros((K, M), complex)
    z = np.zeros((N, M), complex)
    HW = H.conj().T @ W
    dim = K * M + N * M
    traj = Trajectory()
    t0 = time.perf_counter()

    def gamma_block(sl):
        return gamma_update_convex_batch(HW[sl] - lam[sl], groups[sl], gam[sl], sig[sl], tau[sl])

    def v_block(sl):
        return (project_rows(W[sl] - z[sl], cap[sl]),)

    def w_block(sl):
        return (w_update(cache, Gamma[:, sl] + lam[:, sl], v[:, sl] + z[:, sl]).T,)

    with _Blocks(config) as blocks:
        for it in range(1, int(config.max_iterations) + 1):
            Gamma, _ = blocks.map(gamma_block, K)
            (v,) = blocks.map(v_block, N)
            W_prev = W
            (Wt,) = blocks.map(w_block, M)
            W = Wt.T
            HW = H.conj().T @ W
            r_gamma = Gamma - HW
            r_v = v - W
            lam = lam + r_gamma
            z = z + r_v

            prim = _nrm2(r_gamma, r_v)
            dW = W - W_prev
            dual = rho * _nrm2(H.conj().T @ dW, dW)
            eps_pri = np.sqrt(dim) * config.eps_abs + config.eps_rel * max(
                _nrm2(Gamma, v), _nrm2(HW, W))
            eps_dual = np.sqrt(dim) * config.eps_abs + config.eps_rel * rho * _nrm2(lam, z)
            traj.append(it, _nrm2(W) ** 2, prim, dual, time.perf_counter() - t0)
            if prim <= eps_pri and dual <= eps_dual:
                traj.converged = True
                break
    state = AdmmState(Gamma, v, W, lam, z, iteration=traj.iterations)
    return QosSolution(W, state, traj)


def solve_mmf_subproblem(instance: ProblemInstance, targets, W_lin,
                         config: AdmmConfig | None = None,
                         cache: FactorCache | None = None) -> MmfSolution:
    """Minimise the largest per-antenna power ratio with linearised SINR targets.

    ``targets`` are the scaled weights ``t * g``. Besides the interference
    variables and the copy ``v = W`` every antenna keeps a local copy
    ``alpha_n`` of the common ratio ``r``; the copy/ratio pair is updated
    jointly per antenna and ``r`` in closed form.

    The augmented Lagrangian weights the ``Gamma`` and ``v`` consistency
    terms by ``beta/2`` (``config.aux_penalty``) and the ``alpha`` terms by
    ``rho/2``. The ``W`` update does not depend on ``beta``; the joint
    ``(v, alpha)`` update sees the ratio ``2 rho / beta``. ``beta = 2``
    gives unit weight on the ``Gamma`` and ``v`` terms. ``r`` starts at the
    largest power ratio of ``W_lin``.
    """
    config = config or AdmmConfig()
    H = instance.channels
    N, K, M = instance.shape
    rho = config.penalty(N, "mmf")
    if cache is None:
        cache = FactorCache.unit(H)
    groups, sig, cap = instance.group_of_user, instance.noise_power, instance.antenna_power_cap
    beta = rho / float(np.mean(cap)) if config.aux_penalty is None else float(config.aux_penalty)
    gam = np.broadcast_to(np.asarray(targets, float), (K,))
    W = np.array(W_lin, dtype=complex, copy=True)
    tau = _own_gain(instance, W)
    lam = np.zeros((K, M), complex)
    z = np.zeros((N, M), complex)
    mu = np.zeros(N)
    r = float(np.max(antenna_power(W) / cap))
    HW = H.conj().T @ W
    dim = K * M + N * M + N
    traj = Trajectory()
    t0 = time.perf_counter()

    def gamma_block(sl):
        return gamma_update_convex_batch(HW[sl] - lam[sl], groups[sl], gam[sl], sig[sl], tau[sl])

    def va_block(sl):
        return v_alpha_update_batch(W[sl] - z[sl], r - mu[sl], cap[sl], 2.0 * rho / beta)

    def w_block(sl):
        return (w_update(cache, Gamma[:, sl] + lam[:, sl], v[:, sl] + z[:, sl]).T,)

    with _Blocks(config) as blocks:
        for it in range(1, int(config.max_iterations) + 1):
            Gamma, _ = blocks.map(gamma_block, K)
            v, alpha = blocks.map(va_block, N)
            W_prev, r_prev = W, r
            (Wt,) = blocks.map(w_block, M)
            W = Wt.T
            r = r_update(alpha, mu, rho)
            HW = H.conj().T @ W
            r_gamma, r_v, r_a = Gamma - HW, v - W, alpha - r
            lam = lam + r_gamma
            z = z + r_v
            mu = mu + r_a

            prim = np.sqrt(_nrm2(r_gamma, r_v) ** 2 + np.sum(r_a ** 2))
            dW = W - W_prev
            dual = np.sqrt((beta * _nrm2(H.conj().T @ dW, dW)) ** 2
                           + N * (rho * (r - r_prev)) ** 2)
            eps_pri = np.sqrt(dim) * config.eps_abs + config.eps_rel * max(
                np.sqrt(_nrm2(Gamma, v) ** 2 + np.sum(alpha ** 2)),
                np.sqrt(_nrm2(HW, W) ** 2 + N * r * r))
            eps_dual = np.sqrt(dim) * config.eps_abs + config.eps_rel * np.sqrt(
                (beta * _nrm2(lam, z)) ** 2 + rho ** 2 * np.sum(mu ** 2))
            traj.append(it, r, prim, dual, time.perf_counter() - t0)
            if prim <= eps_pri and dual <= eps_dual:
                traj.converged = True
                break
    return MmfSolution(W, r, traj)


def random_initial_beamformer(instance: ProblemInstance, rng, sinr_target=None) -> np.ndarray:
    """Gaussian beamformer with each group scaled so its best user meets the target."""
    N, K, M = instance.shape
    target = instance.sinr_target if sinr_target is None else np.broadcast_to(sinr_target, (K,))
    W = (rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))) / np.sqrt(2)
    G = np.abs(instance.channels.conj().T @ W) ** 2
    for m in range(M):
        users = instance.members(m)
        need = target[users] * instance.noise_power[users] / np.maximum(G[users, m], 1e-300)
        W[:, m] *= np.sqrt(np.min(need))
    return W


def solve_feasibility_admm(instance: ProblemInstance, W_init, max_iterations: int = 3000,
                           cache: FactorCache | None = None, sinr_target=None,
                           return_iterations: bool = False):
    """Search for a beamformer meeting every SINR constraint, ignoring power caps.

    Alternates the closed-form non-convex per-user projection with a
    ridge-regularised least-squares fit of ``W``; the iteration has no
    penalty parameter. Stops as soon as the current ``W``, after the
    smallest common up-scaling, meets every target, and returns that
    scaled point. Raises :class:`FeasibilitySearchFailed` when the budget
    runs out or the iterates settle into a fixed point or 2-cycle outside
    the SINR set.
    """
    H = instance.channels
    K, M = instance.num_users, instance.num_groups
    if cache is None:
        cache = FactorCache.unit(H)
    target = instance.sinr_target if sinr_target is None else np.broadcast_to(
        np.asarray(sinr_target, float), (K,))
    W = np.array(W_init, dtype=complex, copy=True)
    lam = np.zeros((K, M), complex)
    Ws, _ = scale_to_targets(W, instance, target)
    if Ws is not None:
        return (Ws, 0) if return_iterations else Ws
    history = [W, W]
    for it in range(1, int(max_iterations) + 1):
        Gamma, _ = gamma_update_feasibility_batch(H.conj().T @ W - lam, instance.group_of_user,
                                                  target, instance.noise_power)
        W = w_update(cache, Gamma + lam)
        lam = lam + Gamma - H.conj().T @ W
        Ws, _ = scale_to_targets(W, instance, target)
        if Ws is not None:
            return (Ws, it) if return_iterations else Ws
        # a fixed point or 2-cycle away from the SINR set will not recover
        size = _nrm2(W)
        if it > 2 and min(_nrm2(W - h) for h in history) <= STALL_TOL * size:
            raise FeasibilitySearchFailed(f"iteration stalled after {it} iterations", W, it)
        history = [history[1], W]
    raise FeasibilitySearchFailed(f"no SINR-feasible point after {max_iterations} iterations",
                                  W, int(max_iterations))


def consensus_w_update(sum_x_u, sum_y_v, rho: float, K: int, N: int) -> np.ndarray:
    """Average the local copies: ``rho / (2 + rho (K + N)) * (sum_x_u + sum_y_v)``."""
    return rho / (2.0 + rho * (K + N)) * (np.asarray(sum_x_u) + np.asarray(sum_y_v))


def solve_consensus_subproblem(instance: ProblemInstance, W_lin,
                               config: AdmmConfig | None = None) -> ConsensusSolution:
    """Consensus ADMM baseline for the linearised power-minimisation problem.

    Every SINR constraint ``k`` and every antenna cap ``n`` gets its own
    copy of the full ``W``; the copies are updated independently and then
    averaged into ``W`` in closed form. Memory grows as ``(K + N) N M``.
    """
    config = config or AdmmConfig()
    H = instance.channels
    N, K, M = instance.shape
    rho = config.penalty(N, "consensus")
    groups, gam, sig, cap = (instance.group_of_user, instance.sinr_target,
                             instance.noise_power, instance.antenna_power_cap)
    W = np.array(W_lin, dtype=complex, copy=True)
    tau = _own_gain(instance, W)
    U = np.zeros((K, N, M), complex)
    V = np.zeros((N, N, M), complex)
    dim = (K + N) * N * M
    traj = Trajectory()
    t0 = time.perf_counter()

    def x_block(sl):
        return (consensus_x_update_batch(H[:, sl], W[None] - U[sl], groups[sl], gam[sl],
                                         sig[sl], tau[sl]),)

    def y_block(sl):
        idx = np.arange(sl.start, sl.stop)
        Y = W[None] - V[sl]
        Y[np.arange(idx.size), idx] = project_rows(Y[np.arange(idx.size), idx], cap[sl])
        return (Y,)

    with _Blocks(config) as blocks:
        for it in range(1, int(config.max_iterations) + 1):
            (X,) = blocks.map(x_block, K)
            (Y,) = blocks.map(y_block, N)
            W_prev = W
            W = consensus_w_update((X + U).sum(axis=0), (Y + V).sum(axis=0), rho, K, N)
            rx, ry = X - W[None], Y - W[None]
            U = U + rx
            V = V + ry

            prim = _nrm2(rx, ry)
            dual = rho * np.sqrt(K + N) * _nrm2(W - W_prev)
            eps_pri = np.sqrt(dim) * config.eps_abs + config.eps_rel * max(
                _nrm2(X, Y), np.sqrt(K + N) * _nrm2(W))
            eps_dual = np.sqrt(dim) * config.eps_abs + config.eps_rel * rho * _nrm2(U, V)
            traj.append(it, _nrm2(W) ** 2, prim, dual, time.perf_counter() - t0)
            if prim <= eps_pri and dual <= eps_dual:
                traj.converged = True
                break
    return ConsensusSolution(W, traj)

