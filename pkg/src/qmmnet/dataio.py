"""File formats and dataset plumbing.

Covers: extended-XYZ geometry files (Angstrom / eV at the boundary),
dataset manifests with deterministic parent-aware splitting, the
per-molecule QMM container (JSON header + six little-endian float64
matrices), the model checkpoint (JSON manifest + one binary blob,
byte-identical round trip), metrics / prediction CSVs, and the flat
TOML run-configuration file.
"""

from __future__ import annotations

import csv
import io
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field as dc_field, asdict, replace

import numpy as np

from . import network as nw
from .basis import build_basis, default_basis_table
from .constants import (
    ANGSTROM_TO_BOHR,
    BOHR_TO_ANGSTROM,
    ELEMENT_SYMBOLS,
    atomic_number,
)
from .errors import (
    ChecksumMismatch,
    InsufficientData,
    InvariantViolation,
    LayoutMismatch,
    ParseError,
)
from .scf import ENGINE_VERSION, MolecularSystem, QMMSet
from .training import TrainConfig

# ---------------------------------------------------------------------------
# Extended XYZ

_HEADER_INT_KEYS = ("charge", "multiplicity")
_HEADER_FLOAT_KEYS = ("dielectric",)
# every other key=value pair is treated as a float-valued label (eV)


def _parse_header_pairs(line, lineno):
    """Split 'k1=v1 k2="a b c"' into a dict; quotes protect spaces."""
    pairs = {}
    buf = line.strip()
    i = 0
    n = len(buf)
    while i < n:
        while i < n and buf[i].isspace():
            i += 1
        if i >= n:
            break
        eq = buf.find("=", i)
        if eq < 0:
            raise ParseError(f"malformed key=value pair {buf[i:].split()[0]!r}", line=lineno)
        key = buf[i:eq].strip()
        if not key:
            raise ParseError("empty key in header", line=lineno)
        j = eq + 1
        if j < n and buf[j] == '"':
            end = buf.find('"', j + 1)
            if end < 0:
                raise ParseError("unterminated quote in header", line=lineno)
            value = buf[j + 1 : end]
            i = end + 1
        else:
            end = j
            while end < n and not buf[end].isspace():
                end += 1
            value = buf[j:end]
            i = end
        pairs[key] = value
    return pairs


def parse_xyz(text):
    """Parse one extended-XYZ record.

    Returns (MolecularSystem, labels) where labels maps every float-valued
    header key (e.g. energy_ev, fmo_alpha_homo) to its value in eV.
    Coordinates are converted Angstrom -> bohr.  Raises ParseError with the
    offending line number; invalid charge/spin combinations raise
    InvariantViolation from the MolecularSystem constructor.
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("missing atom-count line", line=1)
    try:
        n_atoms = int(lines[0].strip())
    except ValueError:
        raise ParseError(f"atom count is not an integer: {lines[0].strip()!r}", line=1)
    if n_atoms < 1:
        raise ParseError(f"atom count {n_atoms} < 1", line=1)
    if len(lines) < 2 + n_atoms:
        raise ParseError(
            f"expected {n_atoms} atom rows, file ends early", line=len(lines)
        )
    pairs = _parse_header_pairs(lines[1], 2)

    charge = 0
    multiplicity = 1
    field_vec = None
    dielectric = None
    labels = {}
    for key, raw in pairs.items():
        try:
            if key in _HEADER_INT_KEYS:
                value = int(raw)
            elif key == "field":
                value = np.array([float(x) for x in raw.split()], dtype=np.float64)
                if value.shape != (3,):
                    raise ValueError
            else:
                value = float(raw)
        except ValueError:
            raise ParseError(f"bad value for key {key!r}: {raw!r}", line=2)
        if key == "charge":
            charge = value
        elif key == "multiplicity":
            multiplicity = value
        elif key == "field":
            field_vec = value
        elif key == "dielectric":
            dielectric = value
        else:
            labels[key] = value

    symbols = []
    coords = np.empty((n_atoms, 3))
    for k in range(n_atoms):
        lineno = 3 + k
        parts = lines[2 + k].split()
        if len(parts) < 4:
            raise ParseError(f"atom row needs 'symbol x y z', got {lines[2 + k]!r}", line=lineno)
        symbols.append(parts[0])
        try:
            coords[k] = [float(parts[1]), float(parts[2]), float(parts[3])]
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {lines[2 + k]!r}", line=lineno)
    numbers = tuple(atomic_number(s) for s in symbols)
    system = MolecularSystem(
        atomic_numbers=numbers,
        coordinates=coords * ANGSTROM_TO_BOHR,
        charge=charge,
        multiplicity=multiplicity,
        field=field_vec,
        dielectric=dielectric,
    )
    return system, labels


def serialize_xyz(system, labels=None):
    """Inverse of parse_xyz; coordinates emitted in Angstrom at full precision."""
    parts = [f"charge={system.charge}", f"multiplicity={system.multiplicity}"]
    if system.field is not None:
        parts.append('field="%.17g %.17g %.17g"' % tuple(system.field))
    if system.dielectric is not None:
        parts.append("dielectric=%.17g" % system.dielectric)
    for key in sorted(labels or {}):
        parts.append("%s=%.17g" % (key, labels[key]))
    out = [str(len(system.atomic_numbers)), " ".join(parts)]
    ang = system.coordinates * BOHR_TO_ANGSTROM
    for z, row in zip(system.atomic_numbers, ang):
        out.append("%s %.17g %.17g %.17g" % (ELEMENT_SYMBOLS[z], *row))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Dataset manifest and splitting


@dataclass
class ManifestRecord:
    geometry_file: str
    charge: int = 0
    multiplicity: int = 1
    field: tuple | None = None
    labels: dict = dc_field(default_factory=dict)  # name -> value, eV
    species: str = "neutral"
    split: str | None = None
    parent_id: str | None = None


@dataclass
class DatasetManifest:
    records: list

    def to_json(self):
        payload = [asdict(r) for r in self.records]
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        rows = json.loads(text)
        records = []
        for row in rows:
            if row.get("field") is not None:
                row["field"] = tuple(row["field"])
            records.append(ManifestRecord(**row))
        return cls(records)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())

    def subset(self, split):
        return [r for r in self.records if r.split == split]


def _group_records(records):
    """Group record indices by parent id; orphans are singleton groups."""
    groups = {}
    order = []
    for i, rec in enumerate(records):
        key = rec.parent_id if rec.parent_id is not None else f"__solo_{i}"
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(i)
    return [groups[k] for k in order]


_SPLIT_NAMES = ("train", "val", "test")


def split_dataset(manifest, fractions, seed=0, balance_by_species=False):
    """Assign train/val/test splits; deterministic for a fixed seed.

    fractions: (train, val, test) summing to at most 1.  Records sharing a
    parent id always land in the same split.  With balance_by_species, each
    species tag is apportioned across the splits separately (largest
    remainder, remainders rotated across species) so the splits hold equal
    per-species counts up to the dropped remainder.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, val, test)")
    if sum(fractions) > 1.0 + 1e-12:
        raise ValueError(f"fractions sum to {sum(fractions)} > 1")
    records = [replace(r) for r in manifest.records]
    if not records:
        return DatasetManifest(records)
    rng = np.random.default_rng(seed)
    groups = _group_records(records)

    def assign(group_list, start_rotation=0):
        """Apportion groups (weighted by size) to splits by largest remainder."""
        sizes = [len(g) for g in group_list]
        total = sum(sizes)
        quotas = [f * total for f in fractions]
        counts = [int(q) for q in quotas]
        remainder = [q - c for q, c in zip(quotas, counts)]
        spare = int(round(sum(fractions) * total)) - sum(counts)
        order_by_rem = sorted(range(3), key=lambda s: (-remainder[s], s))
        # rotate within runs of equal remainder so successive species spread
        # their spare slots across different splits
        rotated = []
        i = 0
        while i < len(order_by_rem):
            j = i
            while (
                j < len(order_by_rem)
                and remainder[order_by_rem[j]] == remainder[order_by_rem[i]]
            ):
                j += 1
            run = order_by_rem[i:j]
            k = start_rotation % len(run)
            rotated.extend(run[k:] + run[:k])
            i = j
        for k in range(spare):
            counts[rotated[k % 3]] += 1
        out = []
        cursor = 0
        for split_idx, want in enumerate(counts):
            taken = 0
            while cursor < len(group_list) and taken < want:
                out.append((group_list[cursor], _SPLIT_NAMES[split_idx]))
                taken += len(group_list[cursor])
                cursor += 1
        # leftovers (sum(fractions) < 1, or overshoot from group granularity)
        while cursor < len(group_list):
            out.append((group_list[cursor], None))
            cursor += 1
        return out

    if balance_by_species:
        by_species = {}
        for g in groups:
            tag = records[g[0]].species
            by_species.setdefault(tag, []).append(g)
        for rotation, tag in enumerate(sorted(by_species)):
            species_groups = by_species[tag]
            perm = rng.permutation(len(species_groups))
            shuffled = [species_groups[i] for i in perm]
            for group, split in assign(shuffled, start_rotation=rotation):
                for i in group:
                    records[i].split = split
    else:
        perm = rng.permutation(len(groups))
        shuffled = [groups[i] for i in perm]
        for group, split in assign(shuffled):
            for i in group:
                records[i].split = split
    if balance_by_species:
        counts = {name: 0 for name in _SPLIT_NAMES}
        for rec in records:
            if rec.split is not None:
                counts[rec.split] += 1
        for name, frac in zip(_SPLIT_NAMES, fractions):
            if frac > 0 and counts[name] == 0:
                raise InsufficientData(
                    f"balanced split impossible: the {name!r} split "
                    f"(fraction {frac}) received no records"
                )
    return DatasetManifest(records)


# ---------------------------------------------------------------------------
# QMM container

QMM_CONTAINER_MAGIC = "qmmnet-container-1"


def save_qmms(path, qmms, system):
    """Write one molecule's six matrices: one-line JSON header + binary body.

    The body holds the matrices in QMM_NAMES order as little-endian float64,
    row-major.
    """
    layout = qmms.layout
    header = {
        "format": QMM_CONTAINER_MAGIC,
        "n_ao": layout.n_ao,
        "layout": [list(entry) for entry in layout.ao_info],
        "atomic_numbers": list(system.atomic_numbers),
        "coordinates_bohr": [list(map(float, row)) for row in system.coordinates],
        "charge": system.charge,
        "multiplicity": system.multiplicity,
        "field": None if system.field is None else [float(x) for x in system.field],
        "engine_version": ENGINE_VERSION,
        "basis_checksum": layout.basis_checksum,
        "matrix_order": list(nw.QMM_NAMES),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        mats = qmms.matrices()
        for name in nw.QMM_NAMES:
            fh.write(np.ascontiguousarray(mats[name], dtype="<f8").tobytes())


def load_qmms(path, expect_checksum=None):
    """Read a QMM container; returns (QMMSet, MolecularSystem, header dict).

    When expect_checksum is given, a differing basis checksum in the header
    raises ChecksumMismatch.  The AO layout is rebuilt from the shipped
    basis table and must reproduce the header's layout table exactly.
    """
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ParseError(f"{path}: bad container header", line=1)
        if header.get("format") != QMM_CONTAINER_MAGIC:
            raise ParseError(f"{path}: not a QMM container", line=1)
        if expect_checksum is not None and header["basis_checksum"] != expect_checksum:
            raise ChecksumMismatch(
                f"{path}: basis checksum {header['basis_checksum'][:12]}... does "
                f"not match expected {expect_checksum[:12]}..."
            )
        n_ao = header["n_ao"]
        body = fh.read()
    need = 6 * n_ao * n_ao * 8
    if len(body) != need:
        raise ParseError(f"{path}: body holds {len(body)} bytes, expected {need}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    mats = {}
    for k, name in enumerate(header["matrix_order"]):
        mats[name] = flat[k * n_ao * n_ao : (k + 1) * n_ao * n_ao].reshape(n_ao, n_ao)
    system = MolecularSystem(
        atomic_numbers=tuple(header["atomic_numbers"]),
        coordinates=np.array(header["coordinates_bohr"], dtype=np.float64),
        charge=header["charge"],
        multiplicity=header["multiplicity"],
        field=None if header["field"] is None else np.array(header["field"]),
    )
    layout = build_basis(system.atomic_numbers, system.coordinates)
    if [list(e) for e in layout.ao_info] != header["layout"]:
        raise LayoutMismatch(
            f"{path}: stored AO layout does not match the current basis table"
        )
    if expect_checksum is None and layout.basis_checksum != header["basis_checksum"]:
        raise ChecksumMismatch(
            f"{path}: container was written with a different basis table"
        )
    qmms = QMMSet(layout=layout, **{k: mats[k] for k in nw.QMM_NAMES})
    return qmms, system, header


# ---------------------------------------------------------------------------
# Checkpoint

CHECKPOINT_MAGIC = "qmmnet-checkpoint-1"

_MODEL_CONFIG_FIELDS = (
    "hidden_dim",
    "n_message_layers",
    "n_decode_layers",
    "decode_schedule",
    "n_conv_channels",
    "n_attention_heads",
    "mlp_depth",
    "mlp_hidden",
    "attention_hidden",
    "activation",
    "n_radial_basis",
    "evnorm_epsilon",
    "attention_renorm",
    "physical_terms",
    "n_shell_slots",
    "rbf_cutoff",
    "coulomb_r0",
)


def save_checkpoint(path, params, training_step=0):
    """Persist a model: JSON manifest line + one little-endian float64 blob.

    The manifest records config, the tensor/buffer registries with shapes
    and float offsets into the blob, the engine version and basis checksum,
    and the training step.  Saving the result of load_checkpoint reproduces
    the file byte for byte.
    """
    config = params.config
    _, checksum = default_basis_table()
    tensors = []
    offset = 0
    for name, t in params.tensors.items():
        tensors.append({"name": name, "shape": list(t.data.shape), "offset": offset})
        offset += t.data.size
    buffers = []
    for name, b in params.buffers.items():
        buffers.append({"name": name, "shape": list(b.shape), "offset": offset})
        offset += b.size
    manifest = {
        "format": CHECKPOINT_MAGIC,
        "config": {k: getattr(config, k) for k in _MODEL_CONFIG_FIELDS},
        "elements": list(params.elements),
        "charges": list(params.charges),
        "engine_version": ENGINE_VERSION,
        "basis_checksum": checksum,
        "training_step": training_step,
        "n_floats": offset,
        "tensors": tensors,
        "buffers": buffers,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, t in params.tensors.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        for _, b in params.buffers.items():
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (ModelParams, manifest dict)."""
    from . import autodiff as ad

    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            manifest = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ParseError(f"{path}: bad checkpoint manifest", line=1)
        if manifest.get("format") != CHECKPOINT_MAGIC:
            raise ParseError(f"{path}: not a checkpoint file", line=1)
        body = fh.read()
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if flat.size != manifest["n_floats"]:
        raise ParseError(
            f"{path}: blob holds {flat.size} floats, expected {manifest['n_floats']}"
        )
    cfg_dict = dict(manifest["config"])
    cfg_dict["decode_schedule"] = tuple(cfg_dict["decode_schedule"])
    config = nw.ModelConfig(**cfg_dict)
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        arr = flat[entry["offset"] : entry["offset"] + size].reshape(shape).copy()
        tensors[entry["name"]] = ad.parameter(arr)
    buffers = {}
    for entry in manifest["buffers"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        buffers[entry["name"]] = (
            flat[entry["offset"] : entry["offset"] + size].reshape(shape).copy()
        )
    params = nw.ModelParams(
        config,
        tensors,
        elements=tuple(manifest["elements"]),
        charges=tuple(manifest["charges"]),
        buffers=buffers,
    )
    return params, manifest


# ---------------------------------------------------------------------------
# CSVs

METRICS_COLUMNS = (
    "epoch",
    "lr",
    "train_loss",
    "val_mae_meV",
    "val_mae_neutral",
    "val_mae_radical",
    "val_mae_cation",
    "val_mae_anion",
    "wallclock_s",
)

PREDICTIONS_COLUMNS = ("id", "delta_pred_ev", "total_pred_ev")

LOWLEVEL_COLUMNS = (
    "id",
    "converged",
    "energy_ev",
    "homo_alpha_ev",
    "lumo_alpha_ev",
    "homo_beta_ev",
    "lumo_beta_ev",
    "error",
)


def write_metrics_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k, "") for k in METRICS_COLUMNS})


def write_predictions_csv(path, rows):
    """rows: iterable of (id, delta_pred_ev, total_pred_ev)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_COLUMNS)
        for row in rows:
            writer.writerow(row)


def read_lowlevel_csv(path):
    """Sidecar written by featurize: id -> (energy_ev, converged, fmo dict)."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            converged = row["converged"] == "True"
            energy = float(row["energy_ev"]) if row["energy_ev"] else None
            fmo = {}
            for key in ("homo_alpha_ev", "lumo_alpha_ev", "homo_beta_ev", "lumo_beta_ev"):
                fmo[key] = float(row[key]) if row[key] else None
            out[row["id"]] = (energy, converged, fmo)
    return out


def write_lowlevel_csv(path, rows):
    """rows: dicts keyed by LOWLEVEL_COLUMNS."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOWLEVEL_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in LOWLEVEL_COLUMNS})


# ---------------------------------------------------------------------------
# Run configuration file (flat TOML: [model] and [train] sections)


def load_run_config(path):
    """Parse a run-configuration file into (ModelConfig, TrainConfig).

    Keys mirror the dataclass field names; unknown keys are rejected so
    typos fail loudly.
    """
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(f"{path}: {exc}")
    model_kwargs = dict(raw.get("model", {}))
    train_kwargs = dict(raw.get("train", {}))
    if "decode_schedule" in model_kwargs:
        model_kwargs["decode_schedule"] = tuple(model_kwargs["decode_schedule"])
    try:
        model = nw.ModelConfig(**model_kwargs)
    except TypeError as exc:
        raise ParseError(f"{path}: [model] {exc}")
    try:
        train = TrainConfig(**train_kwargs)
    except TypeError as exc:
        raise ParseError(f"{path}: [train] {exc}")
    return model, train


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def save_run_config(path, model_config, train_config):
    """Emit the flat TOML mirror of (ModelConfig, TrainConfig)."""
    lines = ["[model]"]
    for k in _MODEL_CONFIG_FIELDS:
        lines.append(f"{k} = {_toml_value(getattr(model_config, k))}")
    lines.append("")
    lines.append("[train]")
    for k in (
        "max_lr",
        "warmup_epochs",
        "cosine_epochs",
        "batch_size",
        "smooth_l1_delta",
        "seed",
        "deterministic",
        "target",
        "mode",
        "patience",
    ):
        lines.append(f"{k} = {_toml_value(getattr(train_config, k))}")
    if train_config.epochs is not None:
        lines.append(f"epochs = {train_config.epochs}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
