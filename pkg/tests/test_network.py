"""Equivariant network: parameter budget, invariances, EvNorm semantics."""

import numpy as np
import pytest

from qmmnet import network as nw
from qmmnet import so3
from qmmnet.errors import DegenerateAttention, UnknownChargeState
from qmmnet.scf import run_scf

import helpers


@pytest.fixture(scope="module")
def small_setup(small_config):
    system = helpers.water_system()
    qmms, _res = run_scf(system)
    params = helpers.randomized_params(small_config, seed=3)
    graph = nw.build_graph(qmms, system)
    return system, qmms, graph, small_config, params


def test_default_parameter_count():
    config = nw.ModelConfig()
    params = nw.ModelParams.init(config, seed=0)
    n = params.n_parameters()
    assert n == 2_096_135
    assert abs(n - 2_100_000) <= 0.10 * 2_100_000
    assert sum(b.size for b in params.buffers.values()) == 8192
    assert len(params.buffers) == 32


def test_zero_init_prediction_is_zero(small_setup):
    _sys, _qmms, graph, config, _params = small_setup
    fresh = nw.ModelParams.init(config, seed=0)
    for head in ("energy", "fmo"):
        assert nw.forward(graph, config, fresh, head=head).item() == 0.0


def test_prediction_nonzero_off_init(small_setup):
    _sys, _qmms, graph, config, params = small_setup
    assert nw.forward(graph, config, params).item() != 0.0


def test_rotation_invariance_exact(rng, small_setup):
    system, qmms, graph, config, params = small_setup
    pred = nw.forward(graph, config, params).item()
    for _ in range(3):
        r = so3.random_rotation(rng)
        qmms_r, system_r = helpers.rotate_qmms_exact(qmms, system, r)
        graph_r = nw.build_graph(qmms_r, system_r)
        pred_r = nw.forward(graph_r, config, params).item()
        assert abs(pred_r - pred) < 1e-9 * max(1.0, abs(pred))


def test_permutation_invariance_exact(small_setup):
    system, qmms, graph, config, params = small_setup
    pred = nw.forward(graph, config, params).item()
    for perm in [(1, 0, 2), (2, 1, 0), (1, 2, 0)]:
        qmms_p, system_p = helpers.permute_qmms_exact(qmms, system, perm)
        graph_p = nw.build_graph(qmms_p, system_p)
        pred_p = nw.forward(graph_p, config, params).item()
        assert abs(pred_p - pred) < 1e-12 * max(1.0, abs(pred))


def test_evnorm_buffers_update_only_in_training(small_setup):
    _sys, _qmms, graph, config, _p = small_setup
    params = helpers.randomized_params(config, seed=9)
    before = {k: v.copy() for k, v in params.buffers.items()}
    nw.forward(graph, config, params, training=False)
    for k, v in params.buffers.items():
        assert np.array_equal(v, before[k]), k
    nw.forward(graph, config, params, training=True)
    moved = sum(
        0 if np.array_equal(v, before[k]) else 1 for k, v in params.buffers.items()
    )
    assert moved > 0
    for v in params.buffers.values():
        assert np.all(np.isfinite(v))


def test_evnorm_buffers_frozen_after_training_pass(small_setup):
    _sys, _qmms, graph, config, _p = small_setup
    params = helpers.randomized_params(config, seed=11)
    nw.forward(graph, config, params, training=True)
    frozen = {k: v.copy() for k, v in params.buffers.items()}
    out = nw.forward(graph, config, params, training=False)
    from qmmnet import autodiff as ad

    ad.backward(out)
    for k, v in params.buffers.items():
        assert np.array_equal(v, frozen[k]), k


def test_cg_pathways_respect_parity(small_config):
    for (l1, p1, l2, p2, l, p, k) in nw._cg_pathways(small_config):
        assert abs(l1 - l2) <= l <= l1 + l2
        assert p1 * p2 * p == (-1) ** (l1 + l2 + l)
        assert k >= 1


def test_unknown_charge_state(small_setup):
    _sys, _qmms, _graph, config, params = small_setup
    with pytest.raises(UnknownChargeState):
        params.charge_index(5)


def test_degenerate_attention(small_setup):
    _sys, _qmms, graph, config, _p = small_setup
    params = helpers.randomized_params(config, seed=5)
    params["pool.W_a"].data = np.full_like(params["pool.W_a"].data, -1e6)
    with pytest.raises(DegenerateAttention):
        nw.forward(graph, config, params, head="fmo")


def test_config_validation():
    with pytest.raises(ValueError):
        nw.ModelConfig(decode_schedule=(1, 1))  # wrong length
    with pytest.raises(ValueError):
        nw.ModelConfig(n_decode_layers=3, decode_schedule=(0, 0, 0, 4))


def test_graph_shapes(small_setup):
    _sys, qmms, graph, _config, _p = small_setup
    assert graph.n_atoms == 3
    assert graph.n_ao == qmms.layout.n_ao == 7
    assert set(graph.blocks) == set(nw.QMM_NAMES)


def test_charge_projected_sums_to_zero():
    q = nw.charge_projected([0.3, -0.1, 0.5])
    assert q.sum() == pytest.approx(0.0, abs=1e-15)
