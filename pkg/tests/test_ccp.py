import json

import numpy as np
import pytest

from mcbeam.admm import AdmmConfig
from mcbeam.ccp import (CcpConfig, CcpFailure, ccp_p, ccp_qos, closed_form_start, initialize,
                        zero_forcing_matrix, polish_iterate)
from mcbeam.mmf import ratio_curve
from mcbeam.model import (ProblemInstance, antenna_power, check_feasibility, compute_all_sinr,
                          generate_instance, total_power)

from oracles import dc_value


def _crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# ---------------------------------------------------------- initialisation

def test_zero_forcing_matrix_pattern():
    inst = ProblemInstance(np.eye(3, dtype=complex), [0, 1, 0], noise_power=[1.0, 0.5, 0.25],
                           sinr_target=[2.0, 3.0, 4.0], sinr_weight=1.0,
                           antenna_power_cap=10.0)
    A = zero_forcing_matrix(inst)
    assert np.allclose(A, [[np.sqrt(2.0), 0], [0, np.sqrt(1.5)], [1.0, 0]])


def test_closed_form_unitary_channels():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(_crandn(rng, 5, 5))
    H = Q[:, :4]
    inst = ProblemInstance(H, [0, 0, 1, 1], noise_power=0.7, sinr_target=3.0, sinr_weight=1.0,
                           antenna_power_cap=10.0)
    W = closed_form_start(inst)
    assert np.allclose(W, H @ zero_forcing_matrix(inst), atol=1e-14)
    G = np.abs(H.conj().T @ W) ** 2
    assert np.allclose(G[[0, 1], 1], 0, atol=1e-20) and np.allclose(G[[2, 3], 0], 0, atol=1e-20)
    assert np.allclose(compute_all_sinr(W, inst), 3.0, rtol=1e-12)


def test_closed_form_full_rank():
    for seed in range(5):
        inst = generate_instance(8, 5, 2, sinr_target=4.0, rng_seed=seed)
        W = closed_form_start(inst)
        assert np.linalg.norm(inst.channels.conj().T @ W - zero_forcing_matrix(inst)) <= 1e-10
        assert np.allclose(compute_all_sinr(W, inst), 4.0, rtol=1e-8)
    theta = np.linspace(0, 3, 5)
    W = closed_form_start(inst, theta)
    assert np.allclose(compute_all_sinr(W, inst), 4.0, rtol=1e-8)
    with pytest.raises(ValueError):
        closed_form_start(generate_instance(3, 5, 2, rng_seed=0))


def test_initialize_overloaded_uses_search():
    inst = generate_instance(8, 12, 2, sinr_target=1.0, rng_seed=3)
    W = initialize(inst, seed=3)
    assert np.all(compute_all_sinr(W, inst) >= inst.sinr_target * (1 - 1e-12))
    with pytest.raises(ValueError):
        initialize(inst, "provided")


def test_initialize_reports_failure():
    rng = np.random.default_rng(1)
    h = _crandn(rng, 2)
    H = np.stack([h, h, h], axis=1)
    inst = ProblemInstance(H, [0, 1, 2], noise_power=1.0, sinr_target=1e6, sinr_weight=1.0,
                           antenna_power_cap=10.0)
    with pytest.raises(CcpFailure):
        initialize(inst, retry_budget=2, feasibility_max_iterations=100)


def test_polish_restores_caps_and_targets():
    inst = generate_instance(6, 3, 3, sinr_target=2.0, power_cap_per_antenna=100.0, rng_seed=4)
    W = closed_form_start(inst) * 0.999
    P = polish_iterate(W, inst)
    assert np.all(compute_all_sinr(P, inst) >= 2.0 * (1 - 1e-12))
    assert np.all(antenna_power(P) <= 100.0)


# ------------------------------------------------------------- QoS driver

def test_single_user_matched_filter_power():
    rng = np.random.default_rng(2)
    h = _crandn(rng, 4)[:, None]
    gamma, sigma2 = 5.0, 0.3
    inst = ProblemInstance(h, [0], noise_power=sigma2, sinr_target=gamma, sinr_weight=1.0,
                           antenna_power_cap=100.0)
    W0 = _crandn(rng, 4, 1)
    W0 *= np.sqrt(1.5 * gamma * sigma2) / abs(h[:, 0].conj() @ W0[:, 0])
    W, rep = ccp_qos(inst, CcpConfig(rel_decrease_tol=1e-8), W0=W0)
    p_star = gamma * sigma2 / np.linalg.norm(h) ** 2
    assert abs(total_power(W) - p_star) <= 1e-4 * p_star
    assert rep.start == "provided"


def test_scalar_qos():
    inst = ProblemInstance(np.array([[2.0 + 0j]]), [0], noise_power=1.0, sinr_target=3.0,
                           sinr_weight=1.0, antenna_power_cap=10.0)
    W, _ = ccp_qos(inst)
    assert total_power(W) == pytest.approx(3.0 / 4.0, rel=1e-4)


def _small_instance(seed, N=8, K=6, M=2, gamma=2.0):
    inst = generate_instance(N, K, M, sinr_target=gamma, rng_seed=seed)
    cap = 1.2 * antenna_power(closed_form_start(inst)).max()
    return inst.with_power_cap(cap)


def test_qos_descent_caps_and_sinr():
    for seed in range(3):
        inst = _small_instance(seed)
        W, rep = ccp_qos(inst)
        p = np.array([rep.start_value] + rep.objective)
        assert np.all(p[1:] <= p[:-1] * (1 + 1e-6))
        assert rep.feasibility["feasible"]
        rep_f = check_feasibility(W, inst, tol=1e-6, power_tol=1e-8)
        assert rep_f.feasible
        for k in range(inst.num_users):
            scale = inst.sinr_target[k] * (np.sum(np.abs(inst.channels[:, k].conj() @ W) ** 2)
                                           + inst.noise_power[k])
            g = inst.channels[:, k].conj() @ W
            assert dc_value(g, inst.group_of_user[k], inst.sinr_target[k],
                            inst.noise_power[k]) <= 1e-6 * scale


def test_ccp_consensus_agrees_with_admm():
    cfg = AdmmConfig(eps_abs=1e-7, eps_rel=1e-7, max_iterations=20000)
    for seed in range(2):
        inst = _small_instance(20 + seed, N=6, K=4, M=2)
        Wa, ra = ccp_qos(inst, CcpConfig(admm=cfg))
        Wc, rc = ccp_qos(inst, CcpConfig(admm=cfg, inner="consensus"))
        pa, pc = total_power(Wa), total_power(Wc)
        assert abs(pa - pc) <= 5e-3 * pa


def test_qos_failure_when_no_start():
    inst = ProblemInstance(np.array([[1.0 + 0j, 1.0 + 0j]]), [0, 1], noise_power=1.0,
                           sinr_target=1.0, sinr_weight=1.0, antenna_power_cap=10.0)
    with pytest.raises(CcpFailure) as exc:
        ccp_qos(inst, W0=np.zeros((1, 2), complex))
    assert exc.value.report.restarts == 1


def test_report_serialises():
    inst = _small_instance(5, N=6, K=4, M=2)
    W, rep = ccp_qos(inst)
    doc = json.loads(rep.to_json())
    assert doc["outer_iterations"] == rep.outer_iterations == len(doc["objective"])
    lines = rep.outer_csv().splitlines()
    assert len(lines) == rep.outer_iterations + 1
    inner = rep.inner_csv().splitlines()
    assert inner[0].startswith("outer_iteration,iteration,objective")
    assert len(inner) == 1 + sum(rep.inner_iterations)


# ------------------------------------------------------------- probe driver

def test_ccp_p_scalar_closed_form():
    h, g, sigma2, P, t = 1.5 + 0.5j, 2.0, 0.5, 3.0, 4.0
    inst = ProblemInstance(np.array([[h]]), [0], noise_power=sigma2, sinr_target=1.0,
                           sinr_weight=g, antenna_power_cap=P)
    W, r, rep = ccp_p(inst, t)
    assert r == pytest.approx(t * g * sigma2 / (P * abs(h) ** 2), rel=1e-4)


def test_ccp_p_initial_ratio():
    inst = generate_instance(6, 4, 2, power_cap_per_antenna=2.0, rng_seed=6)
    W0 = closed_form_start(inst, sinr_target=1.0)
    W, r, rep = ccp_p(inst, 1.0, W_warm=W0)
    assert rep.start in ("warm", "warm-scaled")
    assert rep.start_value == pytest.approx(np.max(np.sum(np.abs(W0) ** 2, axis=1) / 2.0),
                                            rel=1e-9)
    assert r <= rep.start_value * (1 + 1e-6)
    assert np.max(antenna_power(W) / 2.0) == pytest.approx(r)
    assert np.all(compute_all_sinr(W, inst) >= 1.0 * (1 - 1e-9))


def test_ratio_nondecreasing_in_t():
    inst = generate_instance(8, 4, 2, power_cap_per_antenna=1.0, rng_seed=7)
    r = ratio_curve(inst, [0.5, 1.0, 2.0, 4.0])
    assert np.all(np.diff(r) >= -1e-2)
    assert np.all(r > 0)
