"""Command-line interface: featurize -> train -> predict -> eval -> verify.

Exit codes: 0 success, 2 parse error, 3 SCF failure(s), 4 verification
failure, 5 checksum mismatch.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, network as nw, so3, training as tr
from . import autodiff as ad
from .basis import default_basis_table
from .constants import HARTREE_TO_EV
from .errors import (
    ChecksumMismatch,
    ParseError,
    QmmNetError,
    ScfNotConverged,
)
from .scf import MolecularSystem, rotate_system_check, run_scf
from .training import species_tag

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_SCF = 3
EXIT_VERIFY = 4
EXIT_CHECKSUM = 5

log = logging.getLogger("qmmnet")


class VerificationFailure(QmmNetError):
    """One or more verify checks exceeded tolerance."""


# ---------------------------------------------------------------------------
# featurize


def _featurize_one(args):
    """Worker: parse one xyz, run SCF, write its container.

    Returns (record_id, manifest row dict or None, sidecar row dict,
    failure kind or None).
    """
    xyz_path, out_dir = args
    record_id = Path(xyz_path).stem
    row = {"id": record_id, "converged": False, "energy_ev": "", "error": ""}
    try:
        with open(xyz_path) as fh:
            system, labels = dataio.parse_xyz(fh.read())
    except QmmNetError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return record_id, None, row, "parse"
    record = {
        "geometry_file": os.path.basename(xyz_path),
        "charge": system.charge,
        "multiplicity": system.multiplicity,
        "field": None if system.field is None else tuple(map(float, system.field)),
        "labels": labels,
        "species": species_tag(system.charge, system.multiplicity),
        "split": None,
        "parent_id": None,
    }
    try:
        qmms, result = run_scf(system)
    except ScfNotConverged as exc:
        row["error"] = f"ScfNotConverged: {exc}"
        return record_id, record, row, "scf"
    dataio.save_qmms(os.path.join(out_dir, record_id + ".qmm"), qmms, system)
    ea_h, ea_l, eb_h, eb_l = result.homo_lumo
    row.update(
        converged=True,
        energy_ev="%.12f" % (result.energy * HARTREE_TO_EV),
        homo_alpha_ev="" if ea_h is None else "%.12f" % (ea_h * HARTREE_TO_EV),
        lumo_alpha_ev="" if ea_l is None else "%.12f" % (ea_l * HARTREE_TO_EV),
        homo_beta_ev="" if eb_h is None else "%.12f" % (eb_h * HARTREE_TO_EV),
        lumo_beta_ev="" if eb_l is None else "%.12f" % (eb_l * HARTREE_TO_EV),
    )
    return record_id, record, row, None


def cmd_featurize(args):
    in_dir, out_dir = Path(args.input), Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    xyz_files = sorted(in_dir.glob("*.xyz"))
    if not xyz_files:
        log.warning("no .xyz files in %s; nothing to do", in_dir)
        return EXIT_OK
    work = [(str(p), str(out_dir)) for p in xyz_files]
    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_featurize_one, work))
    else:
        results = [_featurize_one(w) for w in work]
    manifest_records = []
    sidecar_rows = []
    n_parse = n_scf = 0
    for record_id, record, row, failure in results:
        sidecar_rows.append(row)
        if failure == "parse":
            n_parse += 1
            log.error("%s: %s", record_id, row["error"])
            continue
        if failure == "scf":
            n_scf += 1
            log.error("%s: %s", record_id, row["error"])
        manifest_records.append(dataio.ManifestRecord(**record))
    dataio.write_lowlevel_csv(out_dir / "lowlevel.csv", sidecar_rows)
    dataio.DatasetManifest(manifest_records).save(out_dir / "manifest.json")
    n_ok = len(results) - n_parse - n_scf
    log.info("featurized %d/%d records (%d parse, %d SCF failures)",
             n_ok, len(results), n_parse, n_scf)
    if n_parse:
        return EXIT_PARSE
    if n_scf:
        return EXIT_SCF
    return EXIT_OK


# ---------------------------------------------------------------------------
# shared dataset assembly

_TARGET_TO_LABEL = {
    "total_energy": "energy_ev",
    "fmo_alpha_homo": "fmo_alpha_homo",
    "fmo_alpha_lumo": "fmo_alpha_lumo",
    "fmo_beta_homo": "fmo_beta_homo",
    "fmo_beta_lumo": "fmo_beta_lumo",
}

_TARGET_TO_SIDECAR = {
    "total_energy": "energy_ev",
    "fmo_alpha_homo": "homo_alpha_ev",
    "fmo_alpha_lumo": "lumo_alpha_ev",
    "fmo_beta_homo": "homo_beta_ev",
    "fmo_beta_lumo": "lumo_beta_ev",
}


def _load_split(manifest, features_dir, target, mode, split=None,
                expect_checksum=None, require_labels=True):
    """Build TrainSamples for one split (or all records when split is None)."""
    lowlevel = dataio.read_lowlevel_csv(Path(features_dir) / "lowlevel.csv")
    label_key = _TARGET_TO_LABEL[target]
    records = manifest.subset(split) if split is not None else manifest.records
    samples = []
    ids = []
    for rec in records:
        record_id = Path(rec.geometry_file).stem
        container = Path(features_dir) / (record_id + ".qmm")
        if not container.exists():
            continue  # featurization failure for this record
        qmms, system, _header = dataio.load_qmms(container, expect_checksum=expect_checksum)
        graph = nw.build_graph(qmms, system)
        y_target = rec.labels.get(label_key, 0.0) if require_labels else 0.0
        low = lowlevel.get(record_id)
        low_pair = None
        if low is not None:
            energy, converged, fmo = low
            if target == "total_energy":
                low_value = energy
            else:
                low_value = fmo.get(_TARGET_TO_SIDECAR[target])
            if low_value is not None:
                low_pair = (low_value, converged)
        labels = tr.compute_delta_labels(
            [y_target], [low_pair], [rec.species], mode=mode
        )
        samples.append(tr.TrainSample(graph=graph, label=labels[0]))
        ids.append(record_id)
    return samples, ids


# ---------------------------------------------------------------------------
# train


def cmd_train(args):
    model_config, train_config = dataio.load_run_config(args.config)
    manifest = dataio.DatasetManifest.load(args.manifest)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set, _ = _load_split(manifest, args.features, train_config.target,
                               train_config.mode, split="train")
    val_set, _ = _load_split(manifest, args.features, train_config.target,
                             train_config.mode, split="val")
    if not train_set or not val_set:
        raise ParseError(
            f"manifest provides {len(train_set)} train / {len(val_set)} val "
            "records with features; run split assignment and featurize first"
        )
    params = nw.ModelParams.init(model_config, seed=train_config.seed)
    _warm_start_biases(params, train_set)
    best, history = train_fn(model_config, params, train_set, val_set, train_config)
    tr.restore_params(params, best)
    dataio.save_checkpoint(out_dir / "checkpoint.qcp", params,
                           training_step=len(history))
    dataio.write_metrics_csv(out_dir / "metrics.csv", history)
    log.info("best validation MAE %.3f meV over %d epochs",
             min(h["val_mae_meV"] for h in history), len(history))
    return EXIT_OK


train_fn = tr.train  # patchable seam for tests


def _warm_start_biases(params, train_set):
    """Least-squares element biases + per-charge shifts from the train split."""
    counts = []
    labels = []
    charges = []
    for s in train_set:
        row = [list(s.graph.atomic_numbers).count(z) for z in params.elements]
        counts.append(row)
        labels.append(s.label.delta)
        charges.append(s.graph.charge)
    try:
        b_z, _singular = tr.init_element_biases(counts, labels, params.elements)
    except QmmNetError:
        return
    shifts = tr.init_charge_shifts(charges, labels, counts, b_z)
    params.tensors["pool.b_Z"].data[:] = b_z
    for q, shift in shifts.items():
        if q in params.charges:
            params.tensors["pool.b_Q"].data[params.charges.index(q)] = shift


# ---------------------------------------------------------------------------
# predict / eval


def _load_for_inference(args, require_labels):
    params, manifest_meta = dataio.load_checkpoint(args.checkpoint)
    manifest = dataio.DatasetManifest.load(args.manifest)
    target = args.target
    samples, ids = _load_split(
        manifest, args.features, target, mode="delta", split=args.split,
        expect_checksum=manifest_meta["basis_checksum"],
        require_labels=require_labels,
    )
    return params, samples, ids


def cmd_predict(args):
    params, samples, ids = _load_for_inference(args, require_labels=False)
    train_config = tr.TrainConfig(target=args.target)
    rows = []
    for record_id, (delta, total) in zip(
        ids, tr.predictions(params.config, params, samples, train_config)
    ):
        rows.append((record_id, "%.12f" % delta, "%.12f" % total))
    dataio.write_predictions_csv(args.output, rows)
    log.info("wrote %d predictions to %s", len(rows), args.output)
    return EXIT_OK


def cmd_eval(args):
    params, samples, ids = _load_for_inference(args, require_labels=True)
    train_config = tr.TrainConfig(target=args.target)
    metrics = tr.evaluate(params.config, params, samples, train_config)
    with open(args.output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["species", "mae_meV", "n"])
        writer.writerow(["all", "%.6f" % metrics["mae_meV"], metrics["n"]])
        for tag in tr.SPECIES_TAGS:
            if tag in metrics["per_species"]:
                n_tag = sum(1 for s in samples if s.label.species == tag)
                writer.writerow([tag, "%.6f" % metrics["per_species"][tag], n_tag])
    log.info("MAE %.3f meV over %d samples (%.1f%% within chemical accuracy)",
             metrics["mae_meV"], metrics["n"],
             100 * metrics["fraction_within_chemical_accuracy"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def _verify_equivariance(rng, report):
    coords = np.array([[0.0, 0.0, 0.117], [0.0, 0.757, -0.467], [0.0, -0.757, -0.467]])
    from .constants import ANGSTROM_TO_BOHR

    system = MolecularSystem((8, 1, 1), coords * ANGSTROM_TO_BOHR)
    worst = 0.0
    for _ in range(5):
        rotation = so3.random_rotation(rng)
        worst = max(worst, rotate_system_check(system, rotation)["max_deviation"])
    report.append(("qmm_equivariance", worst, 1e-8))


def _verify_conservation(report):
    from .constants import ANGSTROM_TO_BOHR

    cases = [
        ((8, 1, 1), 0, 1),
        ((8, 1, 1), 1, 2),
        ((8, 1), -1, 1),
        ((6, 1, 1), 0, 3),
    ]
    coords_map = {
        3: np.array([[0.0, 0.0, 0.117], [0.0, 0.757, -0.467], [0.0, -0.757, -0.467]]),
        2: np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.97]]),
    }
    worst_n = worst_s = 0.0
    closed_shell_dev = 0.0
    for numbers, charge, mult in cases:
        coords = coords_map[len(numbers)] * ANGSTROM_TO_BOHR
        system = MolecularSystem(numbers, coords, charge=charge, multiplicity=mult)
        qmms, _ = run_scf(system)
        n = np.trace(qmms.p_total @ qmms.overlap)
        s2 = np.trace((qmms.p_alpha - qmms.p_beta) @ qmms.overlap)
        worst_n = max(worst_n, abs(n - system.n_electrons))
        worst_s = max(worst_s, abs(s2 - system.two_s))
        if mult == 1:
            closed_shell_dev = max(
                closed_shell_dev,
                np.abs(qmms.f_alpha - qmms.f_beta).max(),
                np.abs(qmms.p_alpha - qmms.p_beta).max(),
            )
    report.append(("electron_count", worst_n, 1e-8))
    report.append(("spin_count", worst_s, 1e-8))
    report.append(("closed_shell_reduction", closed_shell_dev, 0.0))


def _verify_gradients(rng, report):
    from .constants import ANGSTROM_TO_BOHR

    config = nw.ModelConfig(
        hidden_dim=32, n_message_layers=2, n_decode_layers=2,
        decode_schedule=(0, 2), mlp_hidden=24, attention_hidden=16,
    )
    params = nw.ModelParams.init(config, seed=11)
    # move off the zero-init point so every block carries gradient
    for t in params.tensors.values():
        t.data = t.data + rng.normal(scale=0.05, size=t.data.shape)
    coords = np.array([[0.0, 0.0, 0.117], [0.0, 0.757, -0.467], [0.0, -0.757, -0.467]])
    system = MolecularSystem((8, 1, 1), coords * ANGSTROM_TO_BOHR)
    qmms, _ = run_scf(system)
    graph = nw.build_graph(qmms, system)
    params.zero_grad()
    out = nw.forward(graph, config, params)
    ad.backward(out)
    eps = 1e-4
    worst = 0.0
    names = list(params.tensors)
    for pick in rng.choice(len(names), size=8, replace=False):
        name = names[pick]
        t = params.tensors[name]
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        idx = tuple(int(rng.integers(0, s)) for s in t.data.shape)
        keep = t.data[idx]

        def f_at(x, _t=t, _idx=idx):
            _t.data[_idx] = x
            return nw.forward(graph, config, params).item()

        # fourth-order central difference keeps truncation error ~ eps^4
        fd = (
            f_at(keep - 2 * eps)
            - 8.0 * f_at(keep - eps)
            + 8.0 * f_at(keep + eps)
            - f_at(keep + 2 * eps)
        ) / (12.0 * eps)
        t.data[idx] = keep
        # the 1e-3 floor turns the relative test into an absolute one of
        # ~1e-9 for near-zero gradients, above double-precision FD noise
        denom = max(abs(fd), abs(grad[idx]), 1e-3)
        worst = max(worst, abs(fd - grad[idx]) / denom)
    report.append(("gradient_check", worst, 1e-6))


def cmd_verify(args):
    rng = np.random.default_rng(args.seed)
    report = []
    _verify_equivariance(rng, report)
    _verify_conservation(report)
    _verify_gradients(rng, report)
    if args.dump_cg_table:
        with open(args.dump_cg_table, "w") as fh:
            for l1 in range(3):
                for l2 in range(3):
                    for l3 in range(abs(l1 - l2), l1 + l2 + 1):
                        table = so3.cg_real(l1, l2, l3)
                        fh.write(f"# C({l1},{l2},{l3})\n")
                        np.savetxt(fh, table.reshape(-1, table.shape[-1]))
        log.info("wrote CG tables to %s", args.dump_cg_table)
    failed = False
    for name, value, tol in report:
        status = "ok" if value <= tol else "FAIL"
        if value > tol:
            failed = True
        print(f"{name:26s} max deviation {value:.3e}  (tolerance {tol:.0e})  {status}")
    if failed:
        raise VerificationFailure("one or more verification checks failed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qmmnet",
        description="Semi-empirical QMM features + equivariant orbital "
        "message passing for delta-learning molecular properties.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="run SCF over a directory of .xyz files")
    p.add_argument("--input", required=True, help="directory of extended-XYZ files")
    p.add_argument("--output", required=True, help="output directory for .qmm containers")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a model from manifest + features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--config", required=True, help="flat TOML run configuration")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write per-molecule predictions CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--target", default="total_energy", choices=sorted(_TARGET_TO_LABEL))
    p.add_argument("--split", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="write per-species MAE table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--target", default="total_energy", choices=sorted(_TARGET_TO_LABEL))
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="equivariance / conservation / gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-cg-table", default=None, metavar="PATH",
                   help="debug: dump real Clebsch-Gordan tables to a text file")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        log.error("parse error: %s", exc)
        return EXIT_PARSE
    except ScfNotConverged as exc:
        log.error("SCF failure: %s", exc)
        return EXIT_SCF
    except VerificationFailure as exc:
        log.error("verification failure: %s", exc)
        return EXIT_VERIFY
    except ChecksumMismatch as exc:
        log.error("checksum mismatch: %s", exc)
        return EXIT_CHECKSUM


if __name__ == "__main__":
    sys.exit(main())
