"""Problem instances, SINR evaluation and feasibility checks.

All quantities are linear (watts, linear SINR). Conversion from dB happens
in :mod:`mcbeam.units` and only at the command-line boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ProblemInstance",
    "FeasibilityReport",
    "generate_instance",
    "round_robin_groups",
    "compute_sinr",
    "compute_all_sinr",
    "antenna_power",
    "total_power",
    "check_feasibility",
    "scale_to_targets",
    "validate_beamformer",
    "instance_to_dict",
    "instance_from_dict",
    "save_instance",
    "load_instance",
]

INSTANCE_FORMAT = "mcbeam-instance"
INSTANCE_VERSION = 1


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """One multi-group multicast downlink.

    Parameters
    ----------
    channels : (N, K) complex array
        Column ``k`` is the channel ``h_k`` of user ``k``.
    group_of_user : (K,) int array
        Zero-based multicast group of every user.
    noise_power, sinr_target, sinr_weight : (K,) float arrays
        Noise power, QoS SINR target and MMF weight of every user.
    antenna_power_cap : (N,) float array
        Peak radiated power allowed on every antenna.
    num_groups : int, optional
        Defaults to ``max(group_of_user) + 1``.
    seed : int, optional
        Generator seed, kept for provenance only.
    """

    channels: np.ndarray
    group_of_user: np.ndarray
    noise_power: np.ndarray
    sinr_target: np.ndarray
    sinr_weight: np.ndarray
    antenna_power_cap: np.ndarray
    num_groups: int | None = None
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        H = _frozen(self.channels, complex)
        if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
            raise ValueError("channels must be a non-empty N x K matrix")
        N, K = H.shape
        groups = _frozen(self.group_of_user, np.int64)
        if groups.shape != (K,):
            raise ValueError(f"group_of_user must have length K={K}")
        M = int(groups.max()) + 1 if self.num_groups is None else int(self.num_groups)
        if M < 1 or M > K:
            raise ValueError(f"need 1 <= M <= K, got M={M}, K={K}")
        if groups.min() < 0 or groups.max() >= M:
            raise ValueError("group indices must lie in [0, M)")
        if np.unique(groups).size != M:
            raise ValueError("every group must contain at least one user")
        object.__setattr__(self, "channels", H)
        object.__setattr__(self, "group_of_user", groups)
        object.__setattr__(self, "num_groups", M)
        for name, size in (("noise_power", K), ("sinr_target", K),
                           ("sinr_weight", K), ("antenna_power_cap", N)):
            vec = np.broadcast_to(np.asarray(getattr(self, name), float), (size,))
            vec = _frozen(vec, float)
            if not np.all(np.isfinite(vec)) or np.any(vec <= 0):
                raise ValueError(f"{name} must be finite and strictly positive")
            object.__setattr__(self, name, vec)
        if not np.all(np.isfinite(H)):
            raise ValueError("channels must be finite")

    @property
    def num_antennas(self) -> int:
        return self.channels.shape[0]

    @property
    def num_users(self) -> int:
        return self.channels.shape[1]

    @property
    def shape(self) -> tuple[int, int, int]:
        """``(N, K, M)``."""
        return self.num_antennas, self.num_users, self.num_groups

    def members(self, m: int) -> np.ndarray:
        """Users of group ``m``."""
        return np.flatnonzero(self.group_of_user == m)

    def with_targets(self, sinr_target) -> "ProblemInstance":
        """Copy of the instance with different QoS targets."""
        return ProblemInstance(self.channels, self.group_of_user, self.noise_power,
                               sinr_target, self.sinr_weight, self.antenna_power_cap,
                               self.num_groups, self.seed)

    def with_power_cap(self, antenna_power_cap) -> "ProblemInstance":
        return ProblemInstance(self.channels, self.group_of_user, self.noise_power,
                               self.sinr_target, self.sinr_weight, antenna_power_cap,
                               self.num_groups, self.seed)

    def __eq__(self, other):
        if not isinstance(other, ProblemInstance):
            return NotImplemented
        return (self.num_groups == other.num_groups
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("channels", "group_of_user", "noise_power",
                                  "sinr_target", "sinr_weight", "antenna_power_cap")))

    __hash__ = None


@dataclass(frozen=True)
class FeasibilityReport:
    """Constraint slacks of a beamformer.

    ``sinr_slack`` is achieved minus target SINR (linear); the SINR
    violation used for the verdict is relative, ``(target - sinr) / target``.
    ``antenna_power_slack`` is cap minus radiated power, in watts.
    """

    sinr_slack: np.ndarray
    antenna_power_slack: np.ndarray
    worst_sinr_violation: float
    worst_power_violation: float
    feasible: bool
    sinr_tol: float
    power_tol: float

    def to_dict(self) -> dict:
        return {
            "feasible": bool(self.feasible),
            "worst_sinr_violation": float(self.worst_sinr_violation),
            "worst_power_violation": float(self.worst_power_violation),
            "sinr_tol": self.sinr_tol,
            "power_tol": self.power_tol,
            "min_sinr_slack": float(self.sinr_slack.min()),
            "min_power_slack": float(self.antenna_power_slack.min()),
        }


def round_robin_groups(K: int, M: int) -> np.ndarray:
    """Split users ``0..K-1`` into ``M`` groups.

    Contiguous equal blocks of ``K // M`` users, then the remaining
    ``K % M`` users are dealt out one per group.
    """
    if M < 1 or K < M:
        raise ValueError(f"need 1 <= M <= K, got K={K}, M={M}")
    base = K // M
    groups = np.repeat(np.arange(M), base)
    return np.concatenate([groups, np.arange(K - base * M)])


def generate_instance(N: int, K: int, M: int, sinr_target=10.0, noise_power=1.0,
                      power_cap_per_antenna=10.0, rng_seed=None, sinr_weight=1.0
                      ) -> ProblemInstance:
    """Draw an i.i.d. CN(0, 1) channel instance.

    Scalar parameters are broadcast over users (or antennas). Values are
    linear: ``sinr_target=10.0`` is 10 dB, ``power_cap_per_antenna=10.0``
    is 40 dBm.
    """
    for name, v in (("N", N), ("K", K), ("M", M)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    N, K, M = int(N), int(K), int(M)
    if M > K:
        raise ValueError(f"cannot form M={M} non-empty groups from K={K} users")
    rng = np.random.default_rng(rng_seed)
    H = (rng.standard_normal((N, K)) + 1j * rng.standard_normal((N, K))) / np.sqrt(2.0)
    return ProblemInstance(H, round_robin_groups(K, M), noise_power, sinr_target,
                           sinr_weight, power_cap_per_antenna, M,
                           None if rng_seed is None else int(rng_seed))


def validate_beamformer(W, instance: ProblemInstance) -> np.ndarray:
    W = np.asarray(W, dtype=complex)
    N, _, M = instance.shape
    if W.shape != (N, M):
        raise ValueError(f"beamformer must be {N} x {M}, got {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ValueError("beamformer has non-finite entries")
    return W


def _signal_interference(W, instance):
    G = np.abs(instance.channels.conj().T @ W) ** 2          # (K, M)
    own = G[np.arange(instance.num_users), instance.group_of_user]
    return own, G.sum(axis=1) - own


def compute_all_sinr(W, instance: ProblemInstance) -> np.ndarray:
    """SINR of every user, shape ``(K,)``."""
    own, interf = _signal_interference(np.asarray(W, complex), instance)
    return own / (interf + instance.noise_power)


def compute_sinr(W, instance: ProblemInstance, k: int) -> float:
    """SINR of user ``k``: own-group gain over interference plus noise."""
    W = np.asarray(W, complex)
    g = np.abs(instance.channels[:, k].conj() @ W) ** 2
    m = instance.group_of_user[k]
    return float(g[m] / (g.sum() - g[m] + instance.noise_power[k]))


def antenna_power(W) -> np.ndarray:
    """Radiated power per antenna, ``sum_m |W[n, m]|^2``."""
    W = np.asarray(W, complex)
    return np.sum(W.real ** 2 + W.imag ** 2, axis=1)


def total_power(W) -> float:
    return float(np.sum(antenna_power(W)))


def check_feasibility(W, instance: ProblemInstance, tol: float = 1e-6,
                      power_tol: float | None = None,
                      sinr_target=None, check_power: bool = True) -> FeasibilityReport:
    """Evaluate the SINR and per-antenna power constraints.

    SINR violations are relative to the target, power violations absolute.
    ``power_tol`` defaults to ``tol``. ``sinr_target`` overrides the
    instance targets (used for scaled MMF targets). With
    ``check_power=False`` only the SINR constraints decide feasibility.
    """
    W = validate_beamformer(W, instance)
    target = instance.sinr_target if sinr_target is None else np.broadcast_to(
        np.asarray(sinr_target, float), (instance.num_users,))
    power_tol = tol if power_tol is None else power_tol
    sinr = compute_all_sinr(W, instance)
    sinr_slack = sinr - target
    power_slack = instance.antenna_power_cap - antenna_power(W)
    worst_sinr = float(np.max((target - sinr) / target))
    worst_power = float(np.max(-power_slack))
    feasible = worst_sinr <= tol and (not check_power or worst_power <= power_tol)
    return FeasibilityReport(sinr_slack, power_slack, worst_sinr, worst_power,
                             bool(feasible), float(tol), float(power_tol))


def scale_to_targets(W, instance: ProblemInstance, sinr_target=None):
    """Smallest common scaling ``s`` with ``s * W`` meeting every SINR target.

    Returns ``(s * W, s)``, or ``(None, inf)`` when some user's
    signal-to-interference ratio is at or below its target, in which case
    no scaling helps.
    """
    W = np.asarray(W, complex)
    target = instance.sinr_target if sinr_target is None else np.broadcast_to(
        np.asarray(sinr_target, float), (instance.num_users,))
    own, interf = _signal_interference(W, instance)
    margin = own - target * interf
    if np.any(margin <= 0):
        return None, np.inf
    s = float(np.sqrt(np.max(target * instance.noise_power / margin)))
    return s * W, s


def _vec(a):
    return [float(x) for x in np.asarray(a).ravel()]


def instance_to_dict(instance: ProblemInstance, explicit: bool = True) -> dict:
    """Serializable form of an instance.

    With ``explicit=False`` and a known seed, channels are stored by seed
    and regenerated on load; otherwise real and imaginary parts are written
    out. Floats use shortest round-trip repr, so loading is exact.
    """
    N, K, M = instance.shape
    doc = {
        "format": INSTANCE_FORMAT,
        "version": INSTANCE_VERSION,
        "num_antennas": N,
        "num_users": K,
        "num_groups": M,
        "seed": instance.seed,
        "group_of_user": [int(g) for g in instance.group_of_user],
        "noise_power": _vec(instance.noise_power),
        "sinr_target": _vec(instance.sinr_target),
        "sinr_weight": _vec(instance.sinr_weight),
        "antenna_power_cap": _vec(instance.antenna_power_cap),
    }
    if explicit or instance.seed is None:
        doc["channels"] = {"re": instance.channels.real.tolist(),
                           "im": instance.channels.imag.tolist()}
    return doc


def instance_from_dict(doc: dict) -> ProblemInstance:
    if doc.get("format") != INSTANCE_FORMAT:
        raise ValueError(f"not an {INSTANCE_FORMAT} document")
    if doc.get("version") != INSTANCE_VERSION:
        raise ValueError(f"unsupported instance version {doc.get('version')!r}")
    N, K, M = doc["num_antennas"], doc["num_users"], doc["num_groups"]
    if "channels" in doc:
        H = np.array(doc["channels"]["re"], float) + 1j * np.array(doc["channels"]["im"], float)
    else:
        if doc.get("seed") is None:
            raise ValueError("instance has neither channels nor a seed")
        H = generate_instance(N, K, M, rng_seed=doc["seed"]).channels
    inst = ProblemInstance(H, doc["group_of_user"], doc["noise_power"], doc["sinr_target"],
                           doc["sinr_weight"], doc["antenna_power_cap"], M, doc.get("seed"))
    if inst.shape != (N, K, M):
        raise ValueError(f"dimension mismatch: header {(N, K, M)}, data {inst.shape}")
    return inst


def save_instance(instance: ProblemInstance, path, explicit: bool = True) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance, explicit), indent=1))


def load_instance(path) -> ProblemInstance:
    return instance_from_dict(json.loads(Path(path).read_text()))
