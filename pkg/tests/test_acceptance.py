"""Acceptance suite: the twelve contract-level checks for the package.

Tolerances here are fixed by the contract; do not loosen them.
"""

import time

import numpy as np
import pytest

from qmmnet import autodiff as ad
from qmmnet import basis, corpus, dataio, network as nw, scf, so3, training as tr
from qmmnet.constants import ANGSTROM_TO_BOHR, CHEMICAL_ACCURACY_MEV, HARTREE_TO_EV

import helpers
import test_so3 as so3_oracles


# ---------------------------------------------------------------------------
# 1. QMM equivariance: Wigner transform law on every block of all six QMMs


def test_01_qmm_equivariance_under_rotation():
    rng = np.random.default_rng(101)
    molecules = [
        (z, np.array(coords), charge, mult)
        for (_name, z, coords, charge, mult) in corpus.TEMPLATES[:10]
    ]
    assert len(molecules) >= 10
    assert all(len(z) <= 8 for z, *_ in molecules)
    t0 = time.perf_counter()
    worst = 0.0
    for z, ang, charge, mult in molecules:
        coords = ang * ANGSTROM_TO_BOHR
        system = scf.MolecularSystem(z, coords, charge=charge, multiplicity=mult)
        qmms, _ = scf.run_scf(system, density_tol=1e-11)
        mats = qmms.matrices()
        for _ in range(100):
            r = so3.random_rotation(rng)
            d = scf.ao_rotation_matrix(qmms.layout, r)
            qmms_r, _ = scf.run_scf(system.rotated(r), density_tol=1e-11)
            mats_r = qmms_r.matrices()
            for name in mats:
                dev = np.abs(mats_r[name] - d @ mats[name] @ d.T).max()
                worst = max(worst, dev)
    elapsed = time.perf_counter() - t0
    assert worst < 1e-8
    assert elapsed < 120.0


# ---------------------------------------------------------------------------
# 2-3. Conservation and closed-shell reduction across the test corpus


CONSERVATION_CASES = [
    # covering charges {-1, 0, +1} and multiplicities {1, 2, 3}
    ("water", 0, 1),
    ("water_cation", 1, 2),
    ("hydroxide", -1, 1),
    ("amide_anion", -1, 1),
    ("ammonium_like", 1, 2),
    ("methylene_triplet", 0, 3),
    ("oxygen_like_triplet", 0, 3),
    ("hydroxyl", 0, 2),
]


def _template_system(name, charge=None, mult=None):
    for tname, z, coords, q, m in corpus.TEMPLATES:
        if tname == name:
            return scf.MolecularSystem(
                z, np.array(coords) * ANGSTROM_TO_BOHR,
                charge=q if charge is None else charge,
                multiplicity=m if mult is None else mult,
            )
    raise KeyError(name)


@pytest.fixture(scope="module")
def conservation_corpus():
    out = []
    anion_doublet = scf.MolecularSystem(
        (8, 1, 1),
        np.array(corpus.TEMPLATES[0][2]) * ANGSTROM_TO_BOHR,
        charge=-1, multiplicity=2,
    )
    systems = [_template_system(n, q, m) for n, q, m in CONSERVATION_CASES]
    systems.append(anion_doublet)
    for system in systems:
        qmms, _ = scf.run_scf(system)
        out.append((system, qmms))
    return out


def test_02_conservation_laws(conservation_corpus):
    charges = set()
    mults = set()
    for system, qmms in conservation_corpus:
        charges.add(system.charge)
        mults.add(system.multiplicity)
        n = np.trace(qmms.p_total @ qmms.overlap)
        s2 = np.trace((qmms.p_alpha - qmms.p_beta) @ qmms.overlap)
        assert abs(n - system.n_electrons) < 1e-8
        assert abs(s2 - system.two_s) < 1e-8
    assert charges == {-1, 0, 1}
    assert mults == {1, 2, 3}


def test_03_closed_shell_reduction(conservation_corpus):
    n_closed = 0
    for system, qmms in conservation_corpus:
        if system.multiplicity == 1:
            n_closed += 1
            assert np.abs(qmms.f_alpha - qmms.f_beta).max() == 0.0
            assert np.abs(qmms.p_alpha - qmms.p_beta).max() == 0.0
    assert n_closed >= 2


# ---------------------------------------------------------------------------
# 4. End-to-end invariance of the network under roto-translation/permutation


def test_04_end_to_end_invariance(small_config):
    rng = np.random.default_rng(44)
    system = helpers.water_system()
    qmms, _ = scf.run_scf(system)
    params = helpers.randomized_params(small_config, seed=8)
    graph = nw.build_graph(qmms, system)
    pred = nw.forward(graph, small_config, params).item()
    scale = max(1.0, abs(pred))
    t0 = time.perf_counter()
    for _ in range(100):
        r = so3.random_rotation(rng)
        qmms_t, system_t = helpers.rotate_qmms_exact(qmms, system, r)
        shift = rng.normal(scale=2.0, size=3)
        system_t = system_t.translated(shift)
        layout_t = basis.build_basis(system_t.atomic_numbers, system_t.coordinates)
        qmms_t = scf.QMMSet(layout=layout_t, **qmms_t.matrices())
        graph_t = nw.build_graph(qmms_t, system_t)
        pred_t = nw.forward(graph_t, small_config, params).item()
        assert abs(pred_t - pred) / scale < 1e-9
    for perm in [(1, 0, 2), (2, 1, 0), (0, 2, 1), (2, 0, 1), (1, 2, 0)]:
        qmms_p, system_p = helpers.permute_qmms_exact(qmms, system, perm)
        graph_p = nw.build_graph(qmms_p, system_p)
        pred_p = nw.forward(graph_p, small_config, params).item()
        assert abs(pred_p - pred) / scale < 1e-12
    assert time.perf_counter() - t0 < 300.0


# ---------------------------------------------------------------------------
# 5. Gradient correctness: FD vs backprop for every parameter block


def test_05_gradients_every_parameter_block(small_config):
    t0 = time.perf_counter()
    system = scf.MolecularSystem(
        helpers.HYDROXYMETHYL_Z, helpers.HYDROXYMETHYL_ANG * ANGSTROM_TO_BOHR,
        multiplicity=2,
    )
    assert len(system.atomic_numbers) == 5
    qmms, _ = scf.run_scf(system)
    graph = nw.build_graph(qmms, system)
    params = helpers.randomized_params(small_config, seed=13)
    params.zero_grad()
    out = nw.forward(graph, small_config, params)
    ad.backward(out)
    rng = np.random.default_rng(55)
    eps = 1e-4
    for name, t in params.tensors.items():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        # probe the steepest element of the block plus one random element
        picks = {np.unravel_index(np.argmax(np.abs(grad)), grad.shape)}
        picks.add(tuple(int(rng.integers(0, s)) for s in t.data.shape))
        for idx in picks:
            keep = t.data[idx]

            def f(x):
                t.data[idx] = x
                return nw.forward(graph, small_config, params).item()

            fd = (
                f(keep - 2 * eps) - 8 * f(keep - eps)
                + 8 * f(keep + eps) - f(keep + 2 * eps)
            ) / (12 * eps)
            t.data[idx] = keep
            denom = max(abs(fd), abs(grad[idx]), 1e-3)
            assert abs(fd - grad[idx]) / denom < 1e-6, (name, idx)
    assert time.perf_counter() - t0 < 600.0


# ---------------------------------------------------------------------------
# 6. Parameter count of the default configuration


def test_06_default_parameter_count():
    params = nw.ModelParams.init(nw.ModelConfig(), seed=0)
    n = params.n_parameters()
    assert abs(n - 2_100_000) <= 0.10 * 2_100_000
    assert n == 2_096_135


# ---------------------------------------------------------------------------
# 7. CG / Wigner oracles


def test_07_cg_and_wigner_oracles():
    rng = np.random.default_rng(77)
    # Wigner: defining property and homomorphism to 1e-10
    for _ in range(10):
        r1 = so3.random_rotation(rng)
        r2 = so3.random_rotation(rng)
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        for l in range(5):
            d1 = so3.wigner_d_real(l, r1)
            lhs = so3.sph_harm_vector(l, r1 @ v)
            assert np.abs(lhs - d1 @ so3.sph_harm_vector(l, v)).max() < 1e-10
            hom = so3.wigner_d_real(l, r1 @ r2) - d1 @ so3.wigner_d_real(l, r2)
            assert np.abs(hom).max() < 1e-10
    # CG vs complex-CG oracle to 1e-12 and quadrature oracle to 1e-6
    points, weights = so3_oracles._quadrature_grid()
    for (l1, l2, l3) in so3_oracles.TRIANGLE_PATHS:
        table = so3.cg_real(l1, l2, l3)
        t, r = so3_oracles._aligned(
            table, so3_oracles._complex_cg_oracle(l1, l2, l3)
        )
        assert np.abs(t - r).max() < 1e-12, (l1, l2, l3)
        quad = so3_oracles._quadrature_triple(l1, l2, l3, points, weights)
        if (l1 + l2 + l3) % 2 == 0:
            t, r = so3_oracles._aligned(table, quad)
            assert np.abs(t - r).max() < 1e-6, (l1, l2, l3)
        else:
            assert np.abs(quad).max() < 1e-10, (l1, l2, l3)


# ---------------------------------------------------------------------------
# 8. Toy delta-learning capability


def _delta_learning_run(entries, mode, seed=0):
    config = nw.ModelConfig(hidden_dim=64, mlp_hidden=44, attention_hidden=16)
    train_config = tr.TrainConfig(
        max_lr=2e-3, warmup_epochs=4, cosine_epochs=16, batch_size=16,
        seed=seed, mode=mode,
    )
    records = [
        dataio.ManifestRecord(geometry_file=f"{i}.xyz", species=e.species)
        for i, e in enumerate(entries)
    ]
    manifest = dataio.split_dataset(
        dataio.DatasetManifest(records), (0.6, 0.2, 0.2), seed=seed,
        balance_by_species=True,
    )
    splits = {"train": [], "val": [], "test": []}
    for rec, entry in zip(manifest.records, entries):
        graph = nw.build_graph(entry.qmms, entry.system)
        low = (entry.low_energy_ev, True) if mode == "delta" else None
        label = tr.compute_delta_labels(
            [entry.high_energy_ev], [low], [entry.species], mode=mode
        )[0]
        splits[rec.split].append(tr.TrainSample(graph=graph, label=label))
    params = nw.ModelParams.init(config, seed=seed)
    # warm start: least-squares element biases + charge shifts on train split
    counts = [
        [list(s.graph.atomic_numbers).count(z) for z in params.elements]
        for s in splits["train"]
    ]
    labels = [s.label.delta for s in splits["train"]]
    charges = [s.graph.charge for s in splits["train"]]
    b_z, _sing = tr.init_element_biases(counts, labels, params.elements)
    shifts = tr.init_charge_shifts(charges, labels, counts, b_z)
    params.tensors["pool.b_Z"].data[:] = b_z
    for q, shift in shifts.items():
        params.tensors["pool.b_Q"].data[params.charges.index(q)] = shift
    best, _history = tr.train(
        config, params, splits["train"], splits["val"], train_config
    )
    tr.restore_params(params, best)
    metrics = tr.evaluate(config, params, splits["test"], train_config)
    test_labels = np.array([s.label.y_target for s in splits["test"]])
    return metrics["mae_meV"], float(test_labels.std()) * 1000.0


def test_08_toy_delta_learning():
    t0 = time.perf_counter()
    entries = corpus.generate_corpus(64, seed=8, with_high_level=True)
    assert len(entries) == 64
    delta_mae, label_std = _delta_learning_run(entries, "delta", seed=0)
    direct_mae, _ = _delta_learning_run(entries, "direct", seed=0)
    assert delta_mae < 0.10 * label_std
    assert delta_mae <= direct_mae
    assert time.perf_counter() - t0 < 1800.0


# ---------------------------------------------------------------------------
# 9. Spin/charge discrimination


SPIN_CHARGE_STATES = [(0, 1), (1, 2), (-1, 2), (0, 3)]


def test_09_spin_charge_discrimination(small_config):
    sets = []
    for q, mult in SPIN_CHARGE_STATES:
        system = helpers.water_system(charge=q, multiplicity=mult)
        qmms, _ = scf.run_scf(system)
        sets.append((system, qmms))
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            diff = np.linalg.norm(
                sets[i][1].p_total.T - sets[j][1].p_total.T
            )
            assert diff > 1e-3, (i, j)
    # a toy model trained on synthetic per-state labels separates the states
    synthetic = [0.0, 1.0, -1.0, 2.0]  # eV
    samples = []
    for (system, qmms), y in zip(sets, synthetic):
        graph = nw.build_graph(qmms, system)
        label = tr.DeltaLabel(
            y_target=y, y_low=0.0, delta=y,
            species=tr.species_tag(system.charge, system.multiplicity),
        )
        samples.append(tr.TrainSample(graph=graph, label=label))
    params = helpers.randomized_params(small_config, seed=21, scale=0.01)
    config = tr.TrainConfig(
        max_lr=5e-3, warmup_epochs=10, cosine_epochs=90, batch_size=4,
        smooth_l1_delta=0.1, seed=21,
    )
    best, _hist = tr.train(small_config, params, samples, samples, config)
    tr.restore_params(params, best)
    metrics = tr.evaluate(small_config, params, samples, config)
    assert metrics["mae_meV"] < CHEMICAL_ACCURACY_MEV


# ---------------------------------------------------------------------------
# 10. Uniform-field response


def test_10_field_response():
    f_mag = 0.005
    _q0, r0 = scf.run_scf(helpers.water_system(), density_tol=1e-12)
    _q1, r1 = scf.run_scf(
        helpers.water_system(field=np.array([0.0, 0.0, f_mag])), density_tol=1e-12
    )
    assert abs(r1.energy - r0.energy) > 1e-6  # hartree

    system = helpers.water_system()
    qmms, _ = scf.run_scf(system, density_tol=1e-12)
    origin = system.charge_center()
    dip = basis.dipole_integrals(qmms.layout, origin=origin)
    mu_el = -np.array([np.sum(qmms.p_total * dip[k]) for k in range(3)])
    z = np.array(system.atomic_numbers, dtype=np.float64)
    mu = mu_el + z @ (system.coordinates - origin)
    h = 1e-4
    for k in range(3):
        f = np.zeros(3)
        f[k] = h
        _qp, rp = scf.run_scf(helpers.water_system(field=f), density_tol=1e-12)
        _qm, rm = scf.run_scf(helpers.water_system(field=-f), density_tol=1e-12)
        fd = (rp.energy - rm.energy) / (2 * h)
        assert abs(fd + mu[k]) < 1e-5


# ---------------------------------------------------------------------------
# 11. Spin-gap utility


def test_11_spin_gap_arithmetic():
    assert scf.spin_gaps(-10.0, -10.0, -10.0, -10.0) == (0.0, 0.0, 0.0)
    gaps = scf.spin_gaps(-10.0, -11.0, -10.5, -10.8)
    assert gaps == pytest.approx((1.0, 0.3, 0.5), abs=1e-12)
    # vertical gaps are plain differences; adiabatic crosses the spin channels
    gaps2 = scf.spin_gaps(0.0, -2.0, 1.5, -0.5)
    assert gaps2 == pytest.approx((2.0, 2.0, 3.5), abs=1e-12)


# ---------------------------------------------------------------------------
# 12. Schedule / loss / reporting constants


def test_12_schedule_loss_constants():
    config = tr.TrainConfig(max_lr=5e-4, warmup_epochs=100, cosine_epochs=200)
    assert tr.lr_schedule(100, config) == pytest.approx(5e-4)
    assert tr.smooth_l1(2.0, 1.0) == 1.5
    assert CHEMICAL_ACCURACY_MEV == pytest.approx(43.4, abs=0.05)
