"""Delta-label construction, loss, optimizer, schedule, and train/evaluate loops.

Labels are handled in eV throughout.  Delta mode trains the network on
y_target - y_low, where y_low comes from the low-level engine; direct mode
trains on y_target with y_low = 0.  Training is deterministic for a fixed
seed: batching order, parameter iteration order, and gradient accumulation
order are all fixed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import network as nw
from .constants import CHEMICAL_ACCURACY_MEV
from .errors import MissingLowLevel, NonFiniteGradient, SingularDesign


@dataclass(frozen=True)
class TrainConfig:
    max_lr: float = 5e-4
    warmup_epochs: int = 100
    cosine_epochs: int = 200
    batch_size: int = 64
    smooth_l1_delta: float = 1.0
    seed: int = 0
    deterministic: bool = True
    target: str = "total_energy"  # total_energy | fmo_{alpha|beta}_{homo|lumo}
    mode: str = "delta"  # delta | direct
    epochs: int | None = None  # default: warmup + cosine horizon
    patience: int = 150  # early stopping, beyond the schedule horizon only

    def __post_init__(self):
        if self.mode not in ("delta", "direct"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def n_epochs(self):
        return self.epochs if self.epochs is not None else self.warmup_epochs + self.cosine_epochs


SPECIES_TAGS = ("neutral", "radical", "cation", "anion")


def species_tag(charge, multiplicity):
    if charge == 0:
        return "neutral" if multiplicity == 1 else "radical"
    return "cation" if charge > 0 else "anion"


@dataclass
class DeltaLabel:
    y_target: float  # eV
    y_low: float  # eV
    delta: float  # eV
    species: str

    def __post_init__(self):
        assert self.delta == self.y_target - self.y_low


def compute_delta_labels(targets, low_levels, species, mode="delta"):
    """Per-sample labels: delta = y_target - y_low, or y_target with y_low = 0.

    low_levels entries may be None (absent) or carry converged=False; both are
    fatal in delta mode.
    """
    labels = []
    for i, y in enumerate(targets):
        low = low_levels[i]
        if mode == "delta":
            if low is None:
                raise MissingLowLevel(f"sample {i}: no low-level result")
            y_low, converged = low
            if not converged:
                raise MissingLowLevel(f"sample {i}: low-level SCF did not converge")
        else:
            y_low = 0.0
        labels.append(
            DeltaLabel(y_target=y, y_low=y_low, delta=y - y_low, species=species[i])
        )
    return labels


def init_element_biases(element_counts, labels, elements):
    """Least-squares fit label ~ sum_Z count_Z * b_Z over the training set.

    element_counts: (n_samples, n_elements) matrix; returns (b_Z vector,
    singular flag).  A rank-deficient design falls back to a ridge solve
    (lambda = 1e-8) and is flagged via SingularDesign carried in the result.
    """
    a = np.asarray(element_counts, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if a.shape[0] < len(elements):
        raise SingularDesign(
            f"{a.shape[0]} samples cannot determine {len(elements)} element biases"
        )
    gram = a.T @ a
    rank = np.linalg.matrix_rank(gram)
    singular = rank < len(elements)
    if singular:
        gram = gram + 1e-8 * np.eye(len(elements))
    b = np.linalg.solve(gram, a.T @ y)
    return b, singular


def init_charge_shifts(charges, labels, element_counts, b_z):
    """b_Q = mean residual (label - sum b_Z) per charge state present."""
    a = np.asarray(element_counts, dtype=np.float64)
    resid = np.asarray(labels) - a @ b_z
    shifts = {}
    for q in sorted(set(charges)):
        mask = np.asarray(charges) == q
        shifts[q] = float(resid[mask].mean())
    return shifts


def smooth_l1(error, delta=1.0):
    """0.5 e^2/delta below |e| = delta, |e| - 0.5 delta above; C1-continuous."""
    e = abs(float(error))
    if e < delta:
        return 0.5 * e * e / delta
    return e - 0.5 * delta


def smooth_l1_tensor(pred, label, delta=1.0):
    """Differentiable smooth-L1 via the sqrt formulation would change the
    shape; instead branch on the current value (valid since the branch point
    is C1)."""
    e = pred - label
    if abs(e.data) < delta:
        return ad.square(e) * (0.5 / delta)
    return ad.absolute(e) - 0.5 * delta


def lr_schedule(epoch, config):
    """Linear warmup from 0 to max_lr, then half-cosine decay to 0."""
    if epoch < config.warmup_epochs:
        return config.max_lr * epoch / config.warmup_epochs
    t = epoch - config.warmup_epochs
    if t >= config.cosine_epochs:
        return 0.0
    return config.max_lr * 0.5 * (1.0 + math.cos(math.pi * t / config.cosine_epochs))


class AdamState:
    """First/second moment buffers per parameter tensor."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.tensors.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.tensors.items()}


def adam_step(params, grads, state, lr):
    """One Adam update; rejects non-finite gradients before touching params."""
    for name in params.names():
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    state.step += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in params.names():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params.tensors[name].data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _forward_sample(sample, config, params, target, training=False):
    head = "energy" if target == "total_energy" else "fmo"
    return nw.forward(sample.graph, config, params, head=head, training=training)


def snapshot_params(params):
    """Deep copy of learnable tensors and running-statistic buffers."""
    return {
        "tensors": {name: t.data.copy() for name, t in params.tensors.items()},
        "buffers": {name: b.copy() for name, b in params.buffers.items()},
    }


def restore_params(params, snapshot):
    """Load a snapshot produced by snapshot_params back into params."""
    for name, arr in snapshot["tensors"].items():
        params.tensors[name].data = arr.copy()
    for name, arr in snapshot["buffers"].items():
        params.buffers[name] = arr.copy()


@dataclass
class TrainSample:
    """One molecule prepared for training: graph plus its label."""

    graph: object
    label: DeltaLabel


def batch_gradients(batch, model_config, params, train_config):
    """Accumulated smooth-L1 gradients over a batch; returns (grads, loss)."""
    params.zero_grad()
    total = 0.0
    for sample in batch:
        pred = _forward_sample(
            sample, model_config, params, train_config.target, training=True
        )
        loss = smooth_l1_tensor(pred, sample.label.delta, train_config.smooth_l1_delta)
        ad.backward(loss)
        total += loss.item()
    n = len(batch)
    grads = {
        name: t.grad / n for name, t in params.tensors.items() if t.grad is not None
    }
    return grads, total / n


def train(model_config, params, train_set, val_set, train_config, log=None):
    """Mini-batch training with warmup+cosine schedule and best-val selection.

    Returns (best_snapshot, history): best_snapshot is a snapshot_params()
    dict for the lowest-validation-MAE epoch; history rows match the metrics
    CSV columns: epoch, lr, train_loss, val_mae_meV plus per-species MAEs
    and wall-clock seconds.
    """
    rng = np.random.default_rng(train_config.seed)
    state = AdamState(params)
    history = []
    best_val = math.inf
    best_snapshot = snapshot_params(params)
    best_epoch = 0
    n = len(train_set)
    for epoch in range(train_config.n_epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, train_config)
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, train_config.batch_size):
            batch = [train_set[i] for i in order[lo : lo + train_config.batch_size]]
            grads, loss = batch_gradients(batch, model_config, params, train_config)
            if lr > 0.0:
                adam_step(params, grads, state, lr)
            epoch_loss += loss
            n_batches += 1
        epoch_loss /= max(n_batches, 1)
        metrics = evaluate(model_config, params, val_set, train_config)
        val_mae = metrics["mae_meV"]
        if val_mae < best_val:
            best_val = val_mae
            best_snapshot = snapshot_params(params)
            best_epoch = epoch
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": epoch_loss,
            "val_mae_meV": val_mae,
            "val_mae_neutral": metrics["per_species"].get("neutral", float("nan")),
            "val_mae_radical": metrics["per_species"].get("radical", float("nan")),
            "val_mae_cation": metrics["per_species"].get("cation", float("nan")),
            "val_mae_anion": metrics["per_species"].get("anion", float("nan")),
            "wallclock_s": time.perf_counter() - t0,
        }
        history.append(row)
        if log is not None:
            log(row)
        horizon = train_config.warmup_epochs + train_config.cosine_epochs
        if epoch >= horizon and epoch - best_epoch > train_config.patience:
            break
    return best_snapshot, history


def evaluate(model_config, params, dataset, train_config):
    """MAE in meV, overall and per species, plus chemical-accuracy fraction."""
    errors = []
    tags = []
    for sample in dataset:
        pred = _forward_sample(sample, model_config, params, train_config.target)
        errors.append(abs(pred.item() - sample.label.delta) * 1000.0)  # meV
        tags.append(sample.label.species)
    errors = np.array(errors)
    per_species = {}
    for tag in SPECIES_TAGS:
        mask = np.array([t == tag for t in tags])
        if mask.any():
            per_species[tag] = float(errors[mask].mean())
    within = float(np.mean(errors < CHEMICAL_ACCURACY_MEV)) if len(errors) else 0.0
    return {
        "mae_meV": float(errors.mean()) if len(errors) else 0.0,
        "per_species": per_species,
        "fraction_within_chemical_accuracy": within,
        "n": len(errors),
    }


def predictions(model_config, params, dataset, train_config):
    """Per-sample (delta prediction, reconstructed total) pairs in eV."""
    out = []
    for sample in dataset:
        pred = _forward_sample(sample, model_config, params, train_config.target).item()
        out.append((pred, pred + sample.label.y_low))
    return out
