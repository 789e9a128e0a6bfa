import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcbeam.model import (ProblemInstance, antenna_power, check_feasibility, compute_all_sinr,
                          compute_sinr, generate_instance, instance_from_dict, instance_to_dict,
                          load_instance, round_robin_groups, save_instance, scale_to_targets,
                          total_power)
from mcbeam.units import db_to_linear, dbm_to_watts

from oracles import sinr_loop


def test_reference_setup_instance():
    inst = generate_instance(100, 60, 4, sinr_target=float(db_to_linear(10)),
                             power_cap_per_antenna=float(dbm_to_watts(40)), rng_seed=7)
    assert inst.shape == (100, 60, 4)
    assert np.allclose(inst.sinr_target, 10.0)
    assert np.allclose(inst.antenna_power_cap, 10.0)
    assert np.all(np.bincount(inst.group_of_user) == 15)
    # CN(0, 1): unit average power per entry
    assert abs(np.mean(np.abs(inst.channels) ** 2) - 1.0) < 0.05


def test_scalar_instance():
    inst = generate_instance(1, 1, 1, rng_seed=0)
    assert inst.channels.shape == (1, 1)
    assert list(inst.group_of_user) == [0]


def test_same_seed_bit_identical():
    a = generate_instance(5, 4, 2, rng_seed=11)
    b = generate_instance(5, 4, 2, rng_seed=11)
    assert a.channels.tobytes() == b.channels.tobytes()
    assert a == b
    assert generate_instance(5, 4, 2, rng_seed=12) != a


@pytest.mark.parametrize("args", [(0, 1, 1), (2, 0, 1), (2, 3, 4), (2, 3, 0), (2.5, 3, 1)])
def test_invalid_dimensions(args):
    with pytest.raises(ValueError):
        generate_instance(*args)


def test_round_robin_groups():
    assert list(round_robin_groups(6, 3)) == [0, 0, 1, 1, 2, 2]
    assert list(round_robin_groups(7, 3)) == [0, 0, 1, 1, 2, 2, 0]
    assert list(round_robin_groups(8, 3)) == [0, 0, 1, 1, 2, 2, 0, 1]


def test_instance_invariants_enforced():
    H = np.ones((2, 2), complex)
    with pytest.raises(ValueError):
        ProblemInstance(H, [0, 0], 1.0, 1.0, 1.0, 1.0, num_groups=2)   # group 1 unused
    with pytest.raises(ValueError):
        ProblemInstance(H, [0, 1], -1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ProblemInstance(H, [0, 1], 1.0, 1.0, 1.0, [1.0, 0.0])


def test_instance_is_read_only():
    inst = generate_instance(3, 2, 1, rng_seed=0)
    with pytest.raises(ValueError):
        inst.channels[0, 0] = 0


def test_sinr_matched_filter_single_group():
    inst = generate_instance(4, 1, 1, noise_power=0.5, rng_seed=3)
    h = inst.channels[:, 0]
    p = 2.0
    W = (np.sqrt(p) * h / np.linalg.norm(h))[:, None]
    assert np.isclose(compute_sinr(W, inst, 0), p * np.linalg.norm(h) ** 2 / 0.5, rtol=1e-12)


def test_sinr_zero_beamformer():
    inst = generate_instance(3, 4, 2, rng_seed=1)
    assert np.all(compute_all_sinr(np.zeros((3, 2)), inst) == 0)


def test_sinr_matches_scalar_loop():
    inst = generate_instance(3, 4, 2, rng_seed=2)
    rng = np.random.default_rng(0)
    W = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    for k in range(4):
        ref = sinr_loop(W, inst, k)
        assert abs(compute_sinr(W, inst, k) - ref) <= 1e-12 * ref
    assert np.allclose(compute_all_sinr(W, inst), [sinr_loop(W, inst, k) for k in range(4)],
                       rtol=1e-12)


def test_feasibility_zero_beamformer():
    inst = generate_instance(3, 4, 2, sinr_target=5.0, rng_seed=1)
    rep = check_feasibility(np.zeros((3, 2)), inst)
    assert not rep.feasible
    assert np.isclose(rep.worst_sinr_violation, 1.0)


def test_feasibility_boundary_equality():
    # one user, one antenna: SINR = |h|^2 |w|^2 / sigma^2 exactly at the target
    inst = ProblemInstance(np.array([[2.0 + 0j]]), [0], 1.0, 4.0, 1.0, 10.0)
    W = np.array([[1.0 + 0j]])
    rep = check_feasibility(W, inst, tol=0.0)
    assert rep.feasible and rep.sinr_slack[0] == 0.0


def test_feasibility_power_violation_absolute():
    inst = ProblemInstance(np.array([[1.0 + 0j], [1.0 + 0j]]), [0], 1.0, 0.1, 1.0, [1.0, 0.5])
    W = np.array([[0.5 + 0j], [1.0 + 0j]])
    rep = check_feasibility(W, inst)
    assert np.isclose(rep.worst_power_violation, 0.5)
    assert not rep.feasible
    assert check_feasibility(W, inst, check_power=False).feasible


def test_scale_to_targets():
    inst = generate_instance(6, 4, 2, sinr_target=2.0, rng_seed=4)
    rng = np.random.default_rng(1)
    draws = 0
    Ws = None
    while Ws is None:
        W = rng.standard_normal((6, 2)) + 1j * rng.standard_normal((6, 2))
        Ws, s = scale_to_targets(W, inst)
        if Ws is None:
            # no scaling helps when some user's SIR is below target
            sir = compute_all_sinr(W * 1e6, inst)
            assert sir.min() <= 2.0 * (1 + 1e-9)
        draws += 1
        assert draws < 200
    sinr = compute_all_sinr(Ws, inst)
    assert np.all(sinr >= 2.0 * (1 - 1e-12))
    assert np.isclose(sinr.min(), 2.0, rtol=1e-10)


def test_serialization_round_trip(tmp_path):
    inst = generate_instance(4, 3, 2, sinr_target=3.0, rng_seed=9, power_cap_per_antenna=2.5)
    for explicit in (True, False):
        doc = instance_to_dict(inst, explicit=explicit)
        back = instance_from_dict(json.loads(json.dumps(doc)))
        assert back == inst
        assert back.channels.tobytes() == inst.channels.tobytes()
        path = tmp_path / f"inst_{explicit}.json"
        save_instance(inst, path, explicit=explicit)
        assert load_instance(path) == inst


@st.composite
def instance_and_beamformer(draw):
    N = draw(st.integers(1, 5))
    K = draw(st.integers(1, 5))
    M = draw(st.integers(1, K))
    seed = draw(st.integers(0, 2 ** 31 - 1))
    inst = generate_instance(N, K, M, rng_seed=seed)
    rng = np.random.default_rng(seed + 1)
    W = rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))
    return inst, W, rng


@settings(max_examples=60, deadline=None)
@given(instance_and_beamformer())
def test_sinr_phase_invariance(data):
    inst, W, rng = data
    theta = rng.uniform(0, 2 * np.pi, W.shape[1])
    assert np.allclose(compute_all_sinr(W * np.exp(1j * theta), inst),
                       compute_all_sinr(W, inst), rtol=1e-10)


@settings(max_examples=60, deadline=None)
@given(instance_and_beamformer())
def test_antenna_power_selector_form(data):
    _, W, _ = data
    N = W.shape[0]
    for n in range(N):
        R = np.zeros((N, N))
        R[n, n] = 1.0
        sel = sum((W[:, m].conj() @ R @ W[:, m]).real for m in range(W.shape[1]))
        assert np.isclose(antenna_power(W)[n], sel, rtol=1e-12)
    assert np.isclose(total_power(W), np.sum(np.abs(W) ** 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10 ** 6))
def test_generation_reproducible(N, K, seed):
    M = 1 + seed % K
    assert generate_instance(N, K, M, rng_seed=seed) == generate_instance(N, K, M, rng_seed=seed)
