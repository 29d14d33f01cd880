"""Twin-encoder score network.

Two distance-featurized invariant message-passing encoders (one for the clean
conditioner, one for the noisy input) produce node features f0 and ft. A
row-wise MLP fuses [Emd(t) | f0 | ft] into 3D node features, an edge MLP of
[Emd(t) | E0 | Et] produces a weighted adjacency W, and a dense residual GCN
over (nodes, W) yields the latent representation. Three heads decode it:

* 3D head: invariant scalars tensorized with per-node equivariant frames,
  zero-CoM projected -> SE(3)-equivariant position score;
* 2D head: multi-head attention maps, pairwise node features, and the raw
  per-edge channels -> per-edge MLP, symmetrized -> invariant bond score;
* H head: row-wise MLP -> invariant atom-feature score.

A separate projection head maps the mean-pooled latent to a unit-norm
embedding for the contrastive objective. Everything is built from the
autodiff primitives so the whole model trains with reverse mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .frames import molecule_frames
from .molgraph import N_BOND_CATEGORIES, feature_width


@dataclass(frozen=True)
class NetworkConfig:
    latent: int = 128          # L, node feature width
    rounds: int = 3            # message-passing rounds per encoder
    n_rbf: int = 16
    cutoff: float = 5.0
    gcn_layers: int = 3
    heads: int = 4
    head_dim: int = 32
    d_time: int = 64           # Fourier embedding width (even)
    d_contrast: int = 64       # projection head output width
    hidden: int = 64           # head MLP hidden width
    edge_hidden: int = 32
    share_encoders: bool = False

    @property
    def h_width(self):
        return feature_width()

    @property
    def e_width(self):
        return N_BOND_CATEGORIES


@dataclass(frozen=True)
class LatentRepresentation:
    node_h: Tensor   # (n, L) invariant node features
    pooled: Tensor   # (L,) mean-pooled graph embedding


def fourier_frequencies(d_time):
    """Fixed geometric frequency ladder for the time embedding."""
    n_freq = d_time // 2
    return np.geomspace(1.0, 128.0, n_freq)


def fourier_embed(t, d_time):
    """[sin(2 pi f_k t), cos(2 pi f_k t)] over the fixed frequency ladder."""
    freqs = fourier_frequencies(d_time)
    phase = 2.0 * np.pi * freqs * t
    return np.concatenate([np.sin(phase), np.cos(phase)])


# -- parameters ----------------------------------------------------------

def _dense_init(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)


def init_params(cfg, rng):
    """Named parameter map; shapes are fixed by the config."""
    p = {}

    def dense(name, fan_in, fan_out):
        p[f"{name}.w"] = _dense_init(rng, fan_in, fan_out)
        p[f"{name}.b"] = np.zeros(fan_out)

    branches = ("enc_clean",) if cfg.share_encoders else ("enc_clean", "enc_noisy")
    for branch in branches:
        p[f"{branch}.embed"] = _dense_init(rng, cfg.h_width, cfg.latent)
        for k in range(cfg.rounds):
            p[f"{branch}.r{k}.filter"] = _dense_init(rng, cfg.n_rbf, cfg.latent)
            p[f"{branch}.r{k}.msg"] = _dense_init(rng, cfg.latent, cfg.latent)
            dense(f"{branch}.r{k}.upd", 2 * cfg.latent, cfg.latent)

    dense("fuse.l1", cfg.d_time + 2 * cfg.latent, cfg.latent)
    dense("fuse.l2", cfg.latent, cfg.latent)
    dense("edge.l1", cfg.d_time + 2 * cfg.e_width, cfg.edge_hidden)
    dense("edge.l2", cfg.edge_hidden, 1)
    for layer in range(cfg.gcn_layers):
        dense(f"gcn.l{layer}", cfg.latent, cfg.latent)
    for head in range(cfg.heads):
        p[f"att.h{head}.q"] = _dense_init(rng, cfg.latent, cfg.head_dim)
        p[f"att.h{head}.k"] = _dense_init(rng, cfg.latent, cfg.head_dim)
    dense("head2d.l1", cfg.heads + 2 * cfg.latent + 2 * cfg.e_width, cfg.edge_hidden)
    dense("head2d.l2", cfg.edge_hidden, cfg.e_width)
    dense("head3d.l1", cfg.latent, cfg.hidden)
    dense("head3d.l2", cfg.hidden, 3)
    dense("headh.l1", cfg.latent, cfg.hidden)
    dense("headh.l2", cfg.hidden, cfg.h_width)
    dense("proj.l1", cfg.latent, cfg.hidden)
    dense("proj.l2", cfg.hidden, cfg.d_contrast)

    return {name: Tensor(v, requires_grad=True) for name, v in p.items()}


def detach_params(params):
    """Gradient-free view of the parameters (shared buffers) for inference."""
    return {k: Tensor(v.data) for k, v in params.items()}


def _mlp2(x, params, prefix, act=ad.silu):
    h = act(ad.add(ad.matmul(x, params[f"{prefix}.l1.w"]), params[f"{prefix}.l1.b"]))
    return ad.add(ad.matmul(h, params[f"{prefix}.l2.w"]), params[f"{prefix}.l2.b"])


# -- encoder -------------------------------------------------------------

def _rbf_features(positions, cfg):
    """Smooth radial basis expansion of pairwise distances within the cutoff."""
    n = positions.shape[0]
    d = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
    centers = np.linspace(0.0, cfg.cutoff, cfg.n_rbf)
    gamma = (cfg.n_rbf / cfg.cutoff) ** 2
    rbf = np.exp(-gamma * (d[:, :, None] - centers[None, None, :]) ** 2)
    envelope = 0.5 * (np.cos(np.pi * np.clip(d / cfg.cutoff, 0.0, 1.0)) + 1.0)
    np.fill_diagonal(envelope, 0.0)
    return (rbf * envelope[:, :, None]).reshape(n * n, cfg.n_rbf)


def encode(tensors, params, cfg, branch):
    """Invariant node features from distance-featurized message passing."""
    if cfg.share_encoders:
        branch = "enc_clean"
    n = tensors.n
    rbf = Tensor(_rbf_features(tensors.P, cfg))  # (n*n, n_rbf) constant
    h = ad.matmul(Tensor(tensors.H), params[f"{branch}.embed"])
    for k in range(cfg.rounds):
        filt = ad.reshape(ad.matmul(rbf, params[f"{branch}.r{k}.filter"]),
                          (n, n, cfg.latent))
        x = ad.matmul(h, params[f"{branch}.r{k}.msg"])
        msgs = ad.sum_(ad.mul(filt, ad.reshape(x, (1, n, cfg.latent))), axis=1)
        upd = ad.concat([h, msgs], axis=1)
        h = ad.add(h, ad.silu(ad.add(ad.matmul(upd, params[f"{branch}.r{k}.upd.w"]),
                                     params[f"{branch}.r{k}.upd.b"])))
    return h


# -- fusion --------------------------------------------------------------

def fuse(f0, ft, emb, params, cfg):
    """Row-wise MLP of [Emd(t) | f0 | ft] -> 3D node representation."""
    if f0.shape[0] != ft.shape[0]:
        raise ad.ShapeError(f"fuse: branch sizes differ ({f0.shape[0]} vs {ft.shape[0]})")
    n = f0.shape[0]
    emb_rows = ad.broadcast(ad.reshape(Tensor(emb), (1, cfg.d_time)), (n, cfg.d_time))
    return _mlp2(ad.concat([emb_rows, f0, ft], axis=1), params, "fuse")


def edge_condition(e0, et, emb, params, cfg):
    """Weighted adjacency from the per-edge MLP of [Emd(t) | E0 | Et].

    Symmetrized by averaging with the transpose; zero diagonal.
    """
    if e0.shape != et.shape:
        raise ad.ShapeError(f"edge_condition: shapes differ ({e0.shape} vs {et.shape})")
    n = e0.shape[0]
    flat = np.concatenate([
        np.broadcast_to(emb, (n * n, cfg.d_time)),
        e0.reshape(n * n, cfg.e_width),
        et.reshape(n * n, cfg.e_width),
    ], axis=1)
    w = ad.reshape(_mlp2(Tensor(flat), params, "edge"), (n, n))
    w = ad.mul(ad.add(w, ad.transpose(w)), Tensor(0.5 * (1.0 - np.eye(n))))
    return w


def fuse_gcn(node, w, params, cfg):
    """Dense residual GCN: h <- h + silu(norm(W) h theta + b), then mean pool.

    norm(W) is the symmetric degree normalization with degrees from |W| (+1
    self weight) so it stays defined for signed adjacencies.
    """
    n = node.shape[0]
    deg = ad.add(ad.sum_(ad.abs_(w), axis=1), Tensor(np.ones(n)))
    dinv = ad.div(Tensor(1.0), ad.sqrt(deg))
    w_norm = ad.mul(ad.mul(w, ad.reshape(dinv, (n, 1))), ad.reshape(dinv, (1, n)))
    h = node
    for layer in range(cfg.gcn_layers):
        mixed = ad.matmul(ad.matmul(w_norm, h), params[f"gcn.l{layer}.w"])
        h = ad.add(h, ad.silu(ad.add(mixed, params[f"gcn.l{layer}.b"])))
    return LatentRepresentation(node_h=h, pooled=ad.mean(h, axis=0))


# -- heads ---------------------------------------------------------------

def score_3d(latent, node_frames, params):
    """Equivariant position score: per-node MLP coefficients tensorized with
    that node's frame, projected to the zero-CoM subspace."""
    coeffs = _mlp2(latent.node_h, params, "head3d")  # (n, 3) invariant scalars
    n = coeffs.shape[0]
    basis = np.stack([f.matrix for f in node_frames])  # (n, 3, 3) rows e1..e3
    parts = []
    for k in range(3):
        ck = ad.broadcast(coeffs[:, k:k + 1], (n, 3))
        parts.append(ad.mul(ck, Tensor(basis[:, k, :])))
    field = ad.add(ad.add(parts[0], parts[1]), parts[2])
    com = ad.broadcast(ad.reshape(ad.mean(field, axis=0), (1, 3)), (n, 3))
    return ad.sub(field, com)


def score_2d(latent, params, cfg, e0=None, et=None):
    """Invariant edge score: multi-head attention maps, symmetric pairwise
    node features, and the raw per-edge channels of the conditioner and noisy
    edge tensors -> per-edge MLP, symmetric with zero diagonal."""
    h = latent.node_h
    n = h.shape[0]
    if e0 is None:
        e0 = np.zeros((n, n, cfg.e_width))
    if et is None:
        et = np.zeros((n, n, cfg.e_width))
    scale = 1.0 / np.sqrt(cfg.head_dim)
    maps = []
    for head in range(cfg.heads):
        q = ad.matmul(h, params[f"att.h{head}.q"])
        k = ad.matmul(h, params[f"att.h{head}.k"])
        att = ad.softmax(ad.mul(ad.matmul(q, ad.transpose(k)), Tensor(scale)), axis=-1)
        maps.append(ad.reshape(att, (n * n, 1)))
    hi = ad.reshape(h, (n, 1, cfg.latent))
    hj = ad.reshape(h, (1, n, cfg.latent))
    pair_sum = ad.reshape(ad.add(ad.broadcast(hi, (n, n, cfg.latent)),
                                 ad.broadcast(hj, (n, n, cfg.latent))),
                          (n * n, cfg.latent))
    pair_prod = ad.reshape(ad.mul(hi, hj), (n * n, cfg.latent))
    raw = Tensor(np.concatenate([
        np.asarray(e0, dtype=np.float64).reshape(n * n, cfg.e_width),
        np.asarray(et, dtype=np.float64).reshape(n * n, cfg.e_width),
    ], axis=1))
    stacked = ad.concat(maps + [pair_sum, pair_prod, raw], axis=1)
    edge = _mlp2(stacked, params, "head2d")           # (n*n, e)
    mirror = np.arange(n * n).reshape(n, n).T.reshape(n * n)
    sym = ad.mul(ad.add(edge, edge[mirror]), Tensor(0.5 * (1.0 - np.eye(n)).reshape(n * n, 1)))
    return ad.reshape(sym, (n, n, cfg.e_width))


def score_h(latent, params):
    """Invariant atom-feature score (row-wise MLP on the latent)."""
    return _mlp2(latent.node_h, params, "headh")


def project(latent, params, cfg):
    """Contrastive projection: 2-layer MLP on the pooled latent, unit norm."""
    x = ad.reshape(latent.pooled, (1, cfg.latent))
    out = _mlp2(x, params, "proj")
    norm = ad.sqrt(ad.add(ad.sum_(ad.square(out)), Tensor(1e-12)))
    return ad.reshape(ad.div(out, ad.broadcast(ad.reshape(norm, (1, 1)),
                                               (1, cfg.d_contrast))), (cfg.d_contrast,))


# -- full forward --------------------------------------------------------

def forward(params, cfg, x0, xt, t, with_heads=True, scale=None):
    """Run the full pipeline on one (clean, noisy, time) triple.

    Returns a dict with the latent representation, the unit-norm projection,
    and (when ``with_heads``) the three score heads evaluated on ``xt``.
    Frames for the 3D head are built from the noisy positions. ``scale`` maps
    component names to scalars multiplying the head outputs; passing 1/beta(t)
    turns the O(1) head outputs into a noise-prediction parametrization of the
    score, which keeps the heads well-conditioned near t = 0.
    """
    emb = fourier_embed(t, cfg.d_time)
    f0 = encode(x0, params, cfg, "enc_clean")
    ft = encode(xt, params, cfg, "enc_noisy")
    node = fuse(f0, ft, emb, params, cfg)
    w = edge_condition(x0.E, xt.E, emb, params, cfg)
    latent = fuse_gcn(node, w, params, cfg)
    out = {"latent": latent, "projection": project(latent, params, cfg)}
    if with_heads:
        node_frames = molecule_frames(xt.P, cutoff=cfg.cutoff)
        out["score_P"] = score_3d(latent, node_frames, params)
        out["score_E"] = score_2d(latent, params, cfg, x0.E, xt.E)
        out["score_H"] = score_h(latent, params)
        if scale is not None:
            for comp in ("P", "H", "E"):
                out[f"score_{comp}"] = ad.mul(out[f"score_{comp}"],
                                              Tensor(float(scale[comp])))
    return out
