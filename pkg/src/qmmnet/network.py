"""SE(3)-equivariant orbital message-passing network.

The forward pass consumes the six quantum-mechanical matrices (QMMs) of a
molecule: diagonal reduction embeds block-diagonals into per-atom irreps
features, block-wise convolutions over off-diagonal QMM blocks build
messages, multi-head attention aggregates them, and point-wise interaction
modules (Clebsch-Gordan tensor coupling with equivariant normalization)
update the node states.  Two pooling heads produce the scalar predictions:
a summed energy head with element and charge biases, and a globally
attended frontier-orbital head.

All learnable state lives in ModelParams (a flat, ordered name -> Tensor
registry) so checkpoints and the optimizer can treat parameters uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .constants import HARTREE_TO_EV
from .errors import (
    DegenerateAttention,
    LayoutMismatch,
    UnknownChargeState,
)
from .so3 import IrrepsSpec, cg_real
from .basis import MAX_L, three_index_overlap

N_AUX_CHANNELS = 2  # auxiliary radial functions per l (even-tempered pair)

DEFAULT_ELEMENTS = (1, 6, 7, 8)
DEFAULT_CHARGES = (-1, 0, 1)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults give ~2.1M learnable parameters."""

    hidden_dim: int = 256
    n_message_layers: int = 4
    n_decode_layers: int = 4
    decode_schedule: tuple = (0, 0, 0, 4)
    n_conv_channels: int = 8
    n_attention_heads: int = 8
    mlp_depth: int = 2
    mlp_hidden: int = 176
    attention_hidden: int = 64
    activation: str = "swish"
    n_radial_basis: int = 16
    evnorm_epsilon: float = 0.1
    attention_renorm: str = "off"  # off | node_norm | layer_norm
    physical_terms: str = "off"  # off | electrostatic
    n_shell_slots: int = 2
    rbf_cutoff: float = 10.0  # bohr
    coulomb_r0: float = 1.0  # bohr, erf damping length

    def __post_init__(self):
        if len(self.decode_schedule) != self.n_message_layers:
            raise ValueError("decode_schedule length must equal n_message_layers")
        if sum(self.decode_schedule) != self.n_decode_layers:
            raise ValueError("sum(decode_schedule) must equal n_decode_layers")
        if self.activation != "swish":
            raise ValueError("only the swish activation is supported")
        if self.attention_renorm not in ("off", "node_norm", "layer_norm"):
            raise ValueError(f"unknown attention_renorm {self.attention_renorm!r}")
        if self.physical_terms not in ("off", "electrostatic"):
            raise ValueError(f"unknown physical_terms {self.physical_terms!r}")

    @property
    def irreps(self):
        return IrrepsSpec.scaled(self.hidden_dim)

    def scaled_mlp_hidden(self):
        return self.mlp_hidden


def _segments(config):
    return config.irreps.segments()


# ---------------------------------------------------------------------------
# Parameters


def _fan_in_init(rng, shape, fan_in):
    bound = math.sqrt(1.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


QMM_NAMES = ("f_alpha", "f_beta", "p_alpha", "p_beta", "overlap", "h_core")


class ModelParams:
    """Ordered registry of learnable tensors plus the bias lookup tables.

    Non-learnable running statistics (the EvNorm mu/sigma buffers) live in
    .buffers as plain ndarrays: checkpoints persist them, the optimizer
    never touches them.
    """

    def __init__(
        self,
        config,
        tensors,
        elements=DEFAULT_ELEMENTS,
        charges=DEFAULT_CHARGES,
        buffers=None,
    ):
        self.config = config
        self.tensors = tensors  # dict name -> autodiff Tensor, insertion-ordered
        self.buffers = buffers if buffers is not None else {}
        self.elements = tuple(elements)
        self.charges = tuple(charges)

    @classmethod
    def init(cls, config, seed=0, elements=DEFAULT_ELEMENTS, charges=DEFAULT_CHARGES):
        rng = np.random.default_rng(seed)
        t = {}
        buf = {}
        segs = _segments(config)
        hid = config.irreps.total_channels
        n_slots = config.n_shell_slots
        nC = config.n_conv_channels
        nH = config.n_attention_heads

        def p(name, arr):
            t[name] = ad.parameter(arr)

        # diagonal-reduction embeddings, independent per QMM
        ch_plus = {l: n for (l, par, n) in segs if par == 1}
        for mat in QMM_NAMES:
            for l in range(MAX_L + 1):
                if l in ch_plus:
                    p(
                        f"embed.{mat}.l{l}",
                        _fan_in_init(rng, (ch_plus[l], N_AUX_CHANNELS), N_AUX_CHANNELS),
                    )
        x_dim = 2 * hid + nC + config.n_radial_basis
        for layer in range(config.n_message_layers):
            for mat in QMM_NAMES:
                for l in range(MAX_L + 1):
                    if l in ch_plus:
                        p(
                            f"msg{layer}.match.{mat}.l{l}",
                            _fan_in_init(rng, (nC, n_slots, ch_plus[l]), ch_plus[l]),
                        )
            for l in range(MAX_L + 1):
                if l in ch_plus:
                    fan = nC * nH * n_slots
                    p(f"msg{layer}.rev.l{l}", _fan_in_init(rng, (ch_plus[l], fan), fan))
            p(f"msg{layer}.att.W1", _fan_in_init(rng, (config.attention_hidden, x_dim), x_dim))
            p(f"msg{layer}.att.b1", np.zeros(config.attention_hidden))
            if config.attention_renorm == "layer_norm":
                p(f"msg{layer}.att.gain", np.ones(config.attention_hidden))
                p(f"msg{layer}.att.bias", np.zeros(config.attention_hidden))
            p(
                f"msg{layer}.att.W2",
                _fan_in_init(rng, (nH, config.attention_hidden), config.attention_hidden),
            )
            p(f"msg{layer}.att.b2", np.zeros(nH))
        modules = [f"msg{i}.pw" for i in range(config.n_message_layers)]
        modules += [f"dec{i}.pw" for i in range(config.n_decode_layers)]
        for mod in modules:
            cls._init_pointwise(p, buf, rng, config, segs, hid, mod)
        p("pool.W_o", np.zeros(hid))
        p("pool.W_a", np.zeros(hid))
        p("pool.b_Z", np.zeros(len(elements)))
        p("pool.b_Q", np.zeros(len(charges)))
        if config.physical_terms == "electrostatic":
            p("pool.W_q", np.zeros(hid))
        return cls(config, t, elements, charges, buffers=buf)

    @staticmethod
    def _init_pointwise(p, buf, rng, config, segs, hid, mod):
        mh = config.mlp_hidden
        for ev in ("ev1", "ev2"):
            # running norm statistics: momentum-averaged over training
            # batches, held fixed at evaluation
            buf[f"{mod}.{ev}.mu"] = np.zeros(hid)
            buf[f"{mod}.{ev}.sigma"] = np.ones(hid)
            p(f"{mod}.{ev}.beta", np.ones(hid))
        for mlp in ("mlp1", "mlp2"):
            dims = [hid] + [mh] * (config.mlp_depth - 1) + [hid]
            for k in range(config.mlp_depth):
                din, dout = dims[k], dims[k + 1]
                last = mlp == "mlp2" and k == config.mlp_depth - 1
                w = np.zeros((dout, din)) if last else _fan_in_init(rng, (dout, din), din)
                p(f"{mod}.{mlp}.W{k}", w)
                p(f"{mod}.{mlp}.b{k}", np.zeros(dout))
        for (l, par, n) in segs:
            tag = f"l{l}p{'+' if par == 1 else '-'}"
            p(f"{mod}.win.{tag}", _fan_in_init(rng, (n, n), n))
            p(f"{mod}.wout.{tag}", _fan_in_init(rng, (n, n), n))

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def names(self):
        return list(self.tensors)

    def n_parameters(self):
        return sum(t.data.size for t in self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def element_bias_index(self, z):
        return self.elements.index(z)

    def charge_index(self, q):
        try:
            return self.charges.index(q)
        except ValueError:
            raise UnknownChargeState(f"no trained charge shift for Q={q}") from None


# ---------------------------------------------------------------------------
# Molecule graph: constant (non-learnable) features extracted from a QMMSet


@dataclass
class MoleculeGraph:
    """Per-molecule constants consumed by the forward pass."""

    atomic_numbers: tuple
    charge: int
    coordinates: np.ndarray  # (n_atoms, 3) bohr
    reduced: dict  # mat name -> list per atom of {l: (N_AUX, 2l+1)}
    blocks: dict  # mat name -> full (n_ao, n_ao) ndarray
    atom_ranges: list  # (lo, hi) per atom
    shell_map: list  # per atom: list of (n, l, rel_lo) in AO order
    n_ao: int

    @property
    def n_atoms(self):
        return len(self.atomic_numbers)


def build_graph(qmms, system):
    """Extract the network's constant inputs from a QMMSet.

    Performs the diagonal reduction's raw contraction
    h_{A,nlm} = sum_{mu,nu} O^{mu,nu}_{AA} Qtilde^{mu,nu}_{A,nlm}
    for each of the six matrices.
    """
    layout = qmms.layout
    qtilde = three_index_overlap(layout)
    if len(qtilde) != len(layout.atomic_numbers):
        raise LayoutMismatch("three-index overlap atom count disagrees with layout")
    mats = dict(qmms.matrices())
    n_ao = layout.n_ao
    for name, m in mats.items():
        if m.shape != (n_ao, n_ao):
            raise LayoutMismatch(f"{name} has shape {m.shape}, expected {(n_ao, n_ao)}")
    reduced = {name: [] for name in mats}
    for atom in range(len(layout.atomic_numbers)):
        sl = layout.atom_slice(atom)
        for name, m in mats.items():
            block = m[sl, sl]
            per_l = {}
            for l, q in qtilde[atom].items():
                if q.shape[-1] != block.shape[0]:
                    raise LayoutMismatch(
                        f"auxiliary projector block for atom {atom} does not match layout"
                    )
                per_l[l] = np.einsum("uv,nkuv->nk", block, q)
            reduced[name].append(per_l)
    shell_map = []
    for atom in range(len(layout.atomic_numbers)):
        lo, hi = layout.atom_ranges[atom]
        entries = []
        i = lo
        while i < hi:
            a, n, l, m = layout.ao_info[i]
            entries.append((n, l, i - lo))
            i += 2 * l + 1
        shell_map.append(entries)
    return MoleculeGraph(
        atomic_numbers=tuple(layout.atomic_numbers),
        charge=system.charge if system is not None else 0,
        coordinates=np.array(layout.coordinates),
        reduced=reduced,
        blocks=mats,
        atom_ranges=list(layout.atom_ranges),
        shell_map=shell_map,
        n_ao=n_ao,
    )


# ---------------------------------------------------------------------------
# Irreps features as dicts (l, p) -> Tensor (n_atoms, n_channels, 2l+1)


def feat_zeros(config, n_atoms):
    return {
        (l, p): ad.Tensor(np.zeros((n_atoms, n, 2 * l + 1)))
        for (l, p, n) in _segments(config)
    }


def feat_invariants(h, config):
    """Concatenated rotation-invariant channel contents, (n_atoms, hidden)."""
    eps = config.evnorm_epsilon
    parts = []
    for (l, p, n) in _segments(config):
        seg = h[(l, p)]
        norm = ad.sqrt(ad.tsum(ad.square(seg), axis=2) + eps * eps) - eps
        parts.append(norm)
    return ad.concatenate(parts, axis=1)


def rotate_feature_tensors(h, rep):
    """Apply Wigner blocks to a feature dict (oracle utility, no gradients)."""
    out = {}
    for (l, p), seg in h.items():
        d = rep.block(l)
        out[(l, p)] = ad.Tensor(np.einsum("acm,km->ack", seg.data, d))
    return out


# ---------------------------------------------------------------------------
# Diagonal reduction -> initial node state


def diagonal_reduce(graph, config, params):
    """Initial hidden state h^0 from the six reduced QMM embeddings."""
    n_atoms = graph.n_atoms
    h = feat_zeros(config, n_atoms)
    ch_plus = {l: n for (l, p, n) in _segments(config) if p == 1}
    for l in ch_plus:
        if l > MAX_L:
            continue
        per_mat = []
        for mat in QMM_NAMES:
            w = params[f"embed.{mat}.l{l}"]
            rows = []
            for atom in range(n_atoms):
                raw = graph.reduced[mat][atom].get(l)
                if raw is None:
                    rows.append(np.zeros((N_AUX_CHANNELS, 2 * l + 1)))
                else:
                    rows.append(raw)
            stackd = ad.Tensor(np.stack(rows))  # (n_atoms, N_AUX, 2l+1)
            per_mat.append(ad.einsum("cn,ank->ack", w, stackd))
        total = per_mat[0]
        for extra in per_mat[1:]:
            total = total + extra
        h[(l, 1)] = h[(l, 1)] + total
    return h


# ---------------------------------------------------------------------------
# Matching, messages, attention, reverse matching


def match(h, graph, config, params, layer, mat):
    """Per-atom matched AO vectors rho(h): list of (n_conv, nao_A) tensors."""
    out = []
    for atom in range(graph.n_atoms):
        cols = []
        for (n, l, _rel) in graph.shell_map[atom]:
            w = params[f"msg{layer}.match.{mat}.l{l}"]  # (nC, slots, ch)
            wn = w[:, n, :]
            seg = h[(l, 1)][atom]  # (ch, 2l+1)
            cols.append(ad.matmul(wn, seg))  # (nC, 2l+1)
        out.append(ad.concatenate(cols, axis=1))
    return out


def block_message(block, matched_sender):
    """m_{AB,nu} = sum_mu rho(h_A)_mu O^{mu,nu}_{AB} for one QMM block."""
    return ad.matmul(matched_sender, ad.Tensor(block))


def _rbf(r, config):
    centers = np.linspace(0.0, config.rbf_cutoff, config.n_radial_basis)
    width = centers[1] - centers[0]
    return np.exp(-(((r - centers) / width) ** 2))


def _attention_logits(x, config, params, layer):
    """alpha = act(Linear(act(Norm(Linear(x))))) per head, (n_pairs, n_heads)."""
    w1 = params[f"msg{layer}.att.W1"]
    b1 = params[f"msg{layer}.att.b1"]
    v = ad.einsum("nd,hd->nh", x, w1) + b1
    if config.attention_renorm == "node_norm":
        mean = ad.tsum(v, axis=1, keepdims=True) / v.shape[1]
        cent = v - mean
        var = ad.tsum(ad.square(cent), axis=1, keepdims=True) / v.shape[1]
        v = cent / ad.sqrt(var + 1e-5)
    elif config.attention_renorm == "layer_norm":
        mean = ad.tsum(v, axis=1, keepdims=True) / v.shape[1]
        cent = v - mean
        var = ad.tsum(ad.square(cent), axis=1, keepdims=True) / v.shape[1]
        v = cent / ad.sqrt(var + 1e-5)
        v = v * params[f"msg{layer}.att.gain"] + params[f"msg{layer}.att.bias"]
    v = ad.swish(v)
    w2 = params[f"msg{layer}.att.W2"]
    b2 = params[f"msg{layer}.att.b2"]
    return ad.swish(ad.einsum("nh,jh->nj", v, w2) + b2)


def message_pass(h, graph, config, params, layer):
    """One message-passing round: returns the reverse-matched feature g."""
    n_atoms = graph.n_atoms
    eps = config.evnorm_epsilon
    nC = config.n_conv_channels
    nH = config.n_attention_heads
    if n_atoms == 1:
        return feat_zeros(config, n_atoms)

    matched = {mat: match(h, graph, config, params, layer, mat) for mat in QMM_NAMES}

    pairs = [(a, b) for a in range(n_atoms) for b in range(n_atoms) if a != b]
    # messages m_{BA}: sender B, receiver A, summed over the six matrices
    messages = {}
    for (a, b) in pairs:
        # message from b to a lives on a's AOs
        lo_b, hi_b = graph.atom_ranges[b]
        lo_a, hi_a = graph.atom_ranges[a]
        total = None
        for mat in QMM_NAMES:
            block = graph.blocks[mat][lo_b:hi_b, lo_a:hi_a]
            m = block_message(block, matched[mat][b])
            total = m if total is None else total + m
        messages[(b, a)] = total  # (nC, nao_a)

    inv_h = feat_invariants(h, config)  # (n_atoms, hidden)
    xs = []
    for (a, b) in pairs:
        m = messages[(b, a)]
        mnorm = ad.sqrt(ad.tsum(ad.square(m), axis=1) + eps * eps) - eps
        r = np.linalg.norm(graph.coordinates[a] - graph.coordinates[b])
        xs.append(
            ad.concatenate(
                [inv_h[a], inv_h[b], mnorm, ad.Tensor(_rbf(r, config))], axis=0
            )
        )
    x = ad.stack(xs, axis=0)
    alpha = _attention_logits(x, config, params, layer)  # (n_pairs, nH)

    agg = [None] * n_atoms
    for idx, (a, b) in enumerate(pairs):
        m = messages[(b, a)]
        contrib = ad.einsum("j,iv->jiv", alpha[idx], m)
        contrib = ad.reshape(contrib, (nH * nC, m.shape[1]))
        agg[a] = contrib if agg[a] is None else agg[a] + contrib

    ch_plus = {l: n for (l, p, n) in _segments(config) if p == 1}
    g = feat_zeros(config, n_atoms)
    per_l_rows = {l: [] for l in ch_plus if l <= MAX_L}
    for atom in range(n_atoms):
        slots = {}
        for (n, l, rel) in graph.shell_map[atom]:
            slots[(n, l)] = rel
        for l in per_l_rows:
            pieces = []
            for n in range(config.n_shell_slots):
                rel = slots.get((n, l))
                if rel is None or agg[atom] is None:
                    pieces.append(ad.Tensor(np.zeros((nH * nC, 2 * l + 1))))
                else:
                    pieces.append(agg[atom][:, rel : rel + 2 * l + 1])
            per_l_rows[l].append(ad.concatenate(pieces, axis=0))
    for l, rows in per_l_rows.items():
        stacked = ad.stack(rows, axis=0)  # (n_atoms, nH*nC*slots, 2l+1)
        w = params[f"msg{layer}.rev.l{l}"]
        g[(l, 1)] = g[(l, 1)] + ad.einsum("cf,afk->ack", w, stacked)
    return g


# ---------------------------------------------------------------------------
# Point-wise interaction


EVNORM_MOMENTUM = 0.99
_SIGMA_FLOOR = 1e-3


def _evnorm(h, config, params, mod, which, training=False):
    """EvNorm: returns (hbar (n_atoms, hidden), hhat feature dict).

    The norm statistics mu/sigma are non-learnable running averages over
    the molecules seen during training (momentum 0.99); at evaluation they
    are frozen.  Gradients never flow through the statistics.
    """
    eps = config.evnorm_epsilon
    segs = _segments(config)
    mu = params.buffers[f"{mod}.{which}.mu"]
    sigma = params.buffers[f"{mod}.{which}.sigma"]
    beta = params[f"{mod}.{which}.beta"]
    offset = 0
    hbar_parts = []
    hhat = {}
    for (l, p, n) in segs:
        seg = h[(l, p)]
        content = ad.sqrt(ad.tsum(ad.square(seg), axis=2) + eps * eps) - eps
        if training:
            batch_mu = content.data.mean(axis=0)
            batch_sg = content.data.std(axis=0)
            sl = slice(offset, offset + n)
            mu[sl] = EVNORM_MOMENTUM * mu[sl] + (1.0 - EVNORM_MOMENTUM) * batch_mu
            sigma[sl] = EVNORM_MOMENTUM * sigma[sl] + (1.0 - EVNORM_MOMENTUM) * batch_sg
        mu_s = mu[offset : offset + n]
        sg_s = np.maximum(sigma[offset : offset + n], _SIGMA_FLOOR)
        bt_s = beta[offset : offset + n]
        hbar_parts.append((content - mu_s) / sg_s)
        denom = content + 1.0 / bt_s + eps  # (n_atoms, n)
        hhat[(l, p)] = seg / ad.reshape(denom, (seg.shape[0], n, 1))
        offset += n
    return ad.concatenate(hbar_parts, axis=1), hhat


def _mlp(x, config, params, mod, which):
    out = x
    for k in range(config.mlp_depth):
        w = params[f"{mod}.{which}.W{k}"]
        b = params[f"{mod}.{which}.b{k}"]
        out = ad.einsum("nd,hd->nh", out, w) + b
        if k < config.mlp_depth - 1:
            out = ad.swish(out)
    return out


def _gate(mlp_out, config):
    """Split an (n_atoms, hidden) gate vector back into per-segment slices."""
    gates = {}
    offset = 0
    for (l, p, n) in _segments(config):
        gates[(l, p)] = mlp_out[:, offset : offset + n]
        offset += n
    return gates


@lru_cache(maxsize=None)
def _cg_pathways(config):
    segs = _segments(config)
    keys = [(l, p) for (l, p, _n) in segs]
    chan = {(l, p): n for (l, p, n) in segs}
    paths = []
    for (l1, p1) in keys:
        for (l2, p2) in keys:
            for (l, p) in keys:
                if not abs(l1 - l2) <= l <= l1 + l2:
                    continue
                if p1 * p2 * p != (-1) ** (l1 + l2 + l):
                    continue
                k = min(chan[(l1, p1)], chan[(l2, p2)], chan[(l, p)])
                paths.append((l1, p1, l2, p2, l, p, k))
    return paths


def pointwise_interaction(h, g, config, params, mod, training=False):
    """h' = phi(h, g): EvNorm, gating, CG coupling, EvNorm, residual update."""
    segs = _segments(config)
    chan = {(l, p): n for (l, p, n) in segs}
    hbar, hhat = _evnorm(h, config, params, mod, "ev1", training=training)
    gates1 = _gate(_mlp(hbar, config, params, mod, "mlp1"), config)
    f = {}
    for (l, p, n) in segs:
        tag = f"l{l}p{'+' if p == 1 else '-'}"
        mixed = ad.einsum("acm,cd->adm", hhat[(l, p)], params[f"{mod}.win.{tag}"])
        f[(l, p)] = mixed * ad.reshape(gates1[(l, p)], (mixed.shape[0], n, 1))
    q = {key: g[key] for key in g}
    for (l1, p1, l2, p2, l, p, k) in _cg_pathways(config):
        c = cg_real(l1, l2, l)
        term = ad.einsum(
            "acm,acn,mnk->ack",
            f[(l1, p1)][:, :k, :],
            g[(l2, p2)][:, :k, :],
            ad.Tensor(c),
        )
        n_out = chan[(l, p)]
        if k < n_out:
            pad = ad.Tensor(np.zeros((term.shape[0], n_out - k, 2 * l + 1)))
            term = ad.concatenate([term, pad], axis=1)
        q[(l, p)] = q[(l, p)] + term
    qbar, qhat = _evnorm(q, config, params, mod, "ev2", training=training)
    gates2 = _gate(_mlp(qbar, config, params, mod, "mlp2"), config)
    out = {}
    for (l, p, n) in segs:
        tag = f"l{l}p{'+' if p == 1 else '-'}"
        mixed = ad.einsum("acm,cd->adm", qhat[(l, p)], params[f"{mod}.wout.{tag}"])
        out[(l, p)] = h[(l, p)] + mixed * ad.reshape(
            gates2[(l, p)], (mixed.shape[0], n, 1)
        )
    return out


def decode_step(h, config, params, mod, training=False):
    """Atom-wise decoding: h' = phi(h, h)."""
    return pointwise_interaction(h, h, config, params, mod, training=training)


# ---------------------------------------------------------------------------
# Pooling heads


def _head_invariants(h_final, config):
    return feat_invariants(h_final, config)


def pool_energy(h_final, graph, config, params):
    """Summed energy head with element biases and the molecular charge shift."""
    inv = _head_invariants(h_final, config)  # (n_atoms, hidden)
    w_o = params["pool.W_o"]
    atom_e = ad.einsum("ah,h->a", inv, w_o)
    b_z = params["pool.b_Z"]
    z_idx = np.array([params.element_bias_index(z) for z in graph.atomic_numbers])
    atom_e = atom_e + b_z[z_idx]
    q_idx = params.charge_index(graph.charge)
    total = ad.tsum(atom_e) + params["pool.b_Q"][q_idx]
    if config.physical_terms == "electrostatic":
        total = total + _electrostatic_term(inv, graph, config, params)
    return total


def pool_fmo(h_final, graph, config, params):
    """Globally attended frontier-orbital head; weights form a probability vector."""
    inv = _head_invariants(h_final, config)
    w_a = params["pool.W_a"]
    raw = ad.softplus(ad.einsum("ah,h->a", inv, w_a))
    denom = ad.tsum(raw)
    if denom.data <= 0.0:
        raise DegenerateAttention("attention normalization denominator is non-positive")
    a = raw / denom
    w_o = params["pool.W_o"]
    b_z = params["pool.b_Z"]
    z_idx = np.array([params.element_bias_index(z) for z in graph.atomic_numbers])
    atom_e = ad.einsum("ah,h->a", inv, w_o) + b_z[z_idx]
    return ad.tsum(a * atom_e)


def _electrostatic_term(inv, graph, config, params):
    """Charge-constrained damped Coulomb correction.

    Predicted per-atom charges are mean-subtracted so they sum to zero,
    then combined pairwise with an erf-damped 1/r kernel.  Output in eV.
    """
    n = graph.n_atoms
    q_raw = ad.einsum("ah,h->a", inv, params["pool.W_q"])
    dq = q_raw - ad.tsum(q_raw) / n
    if n == 1:
        return ad.tsum(dq * 0.0)
    kernel = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            r = np.linalg.norm(graph.coordinates[a] - graph.coordinates[b])
            kernel[a, b] = kernel[b, a] = math.erf(r / config.coulomb_r0) / r
    pair = ad.einsum("a,b,ab->", dq, dq, ad.Tensor(kernel))
    return pair * (0.5 * HARTREE_TO_EV)


def charge_projected(q_raw):
    """Mean-subtract raw per-atom charges so the deltas sum to zero (ndarray)."""
    q_raw = np.asarray(q_raw, dtype=np.float64)
    return q_raw - q_raw.mean()


# ---------------------------------------------------------------------------
# Full forward pass


def forward_features(graph, config, params, training=False):
    """Run reduction, message passing and decoding; returns the final state."""
    h = diagonal_reduce(graph, config, params)
    dec = 0
    for t in range(config.n_message_layers):
        g = message_pass(h, graph, config, params, t)
        h = pointwise_interaction(h, g, config, params, f"msg{t}.pw", training=training)
        for _ in range(config.decode_schedule[t]):
            h = decode_step(h, config, params, f"dec{dec}.pw", training=training)
            dec += 1
    return h


def forward(graph, config, params, head="energy", training=False):
    """End-to-end prediction (eV): 'energy' or 'fmo' head."""
    h = forward_features(graph, config, params, training=training)
    if head == "energy":
        return pool_energy(h, graph, config, params)
    if head == "fmo":
        return pool_fmo(h, graph, config, params)
    raise ValueError(f"unknown head {head!r}")
