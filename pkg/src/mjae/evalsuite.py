"""Verification harness and downstream metrics.

Symmetry reports (rotation / permutation / reflection residuals of the three
heads and the embedding), the analytic 1D Gaussian score-recovery toy, desk
generation metrics (validity, uniqueness, categorical total variation), and
the frozen-embedding ridge-regression probe.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .frames import molecule_frames
from .molgraph import (DenseTensors, ELEMENTS, N_BOND_CATEGORIES, permute,
                       to_dense, validate_valence)
from .network import _mlp2, detach_params, forward, fourier_embed
from .schedule import alpha_beta
from .training import adam_step, init_adam_state


def random_rotation(rng):
    """Haar-ish random proper rotation via QR with positive diagonal."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@dataclass(frozen=True)
class SymmetryReport:
    rotation_equivariance_3d: float
    rotation_invariance_2d: float
    rotation_invariance_h: float
    rotation_invariance_embedding: float
    permutation_residual: float
    reflection_coefficient_residual: float
    reflection_axis_pattern_ok: bool
    per_molecule: list

    def as_dict(self):
        return asdict(self)


def _heads(params, cfg, dense, t):
    out = forward(params, cfg, dense, dense, t)
    return {k: out[k].data for k in ("score_P", "score_E", "score_H")} | {
        "projection": out["projection"].data}


def _rotate(dense, r):
    return DenseTensors(H=dense.H, E=dense.E, P=dense.P @ r.T)


def symmetry_report(params, net_cfg, probe_set, n_rotations=20,
                    n_permutations=20, n_reflections=5, t=0.5, seed=0):
    """Max symmetry residuals of the full model over a probe set.

    Equivariance / invariance is architectural, so a random-init model should
    already pass; residuals are float round-off only.
    """
    params = detach_params(params)
    rng = np.random.default_rng(seed)
    per_molecule = []
    rot3d = rot2d = roth = rotemb = permres = reflres = 0.0
    pattern_ok = True
    for graph in probe_set:
        dense = to_dense(graph)
        base = _heads(params, net_cfg, dense, t)
        mol = {"n": graph.n}

        worst3d = worst2d = worsth = worstemb = 0.0
        for _ in range(n_rotations):
            r = random_rotation(rng)
            got = _heads(params, net_cfg, _rotate(dense, r), t)
            worst3d = max(worst3d, np.abs(got["score_P"] - base["score_P"] @ r.T).max())
            worst2d = max(worst2d, np.abs(got["score_E"] - base["score_E"]).max())
            worsth = max(worsth, np.abs(got["score_H"] - base["score_H"]).max())
            worstemb = max(worstemb, np.abs(got["projection"] - base["projection"]).max())
        mol["rotation_3d"] = worst3d
        mol["rotation_2d"] = worst2d

        worstperm = 0.0
        for _ in range(n_permutations):
            perm = rng.permutation(graph.n)
            got = _heads(params, net_cfg, to_dense(permute(graph, perm)), t)
            worstperm = max(
                worstperm,
                np.abs(got["score_P"] - base["score_P"][perm]).max(),
                np.abs(got["score_H"] - base["score_H"][perm]).max(),
                np.abs(got["score_E"] - base["score_E"][np.ix_(perm, perm)]).max(),
                np.abs(got["projection"] - base["projection"]).max(),
            )
        mol["permutation"] = worstperm

        worstrefl, ok = _reflection_check(params, net_cfg, dense, t, n_reflections)
        mol["reflection"] = worstrefl
        per_molecule.append(mol)

        rot3d = max(rot3d, worst3d)
        rot2d = max(rot2d, worst2d)
        roth = max(roth, worsth)
        rotemb = max(rotemb, worstemb)
        permres = max(permres, worstperm)
        reflres = max(reflres, worstrefl)
        pattern_ok = pattern_ok and ok

    return SymmetryReport(
        rotation_equivariance_3d=float(rot3d),
        rotation_invariance_2d=float(rot2d),
        rotation_invariance_h=float(roth),
        rotation_invariance_embedding=float(rotemb),
        permutation_residual=float(permres),
        reflection_coefficient_residual=float(reflres),
        reflection_axis_pattern_ok=bool(pattern_ok),
        per_molecule=per_molecule,
    )


def _reflection_check(params, net_cfg, dense, t, n_reflections):
    """Point reflection P -> -P: the frame axes map (e1, e2, e3) ->
    (-e1, e2, -e3) while the invariant coefficients are unchanged, so the e2
    component of the 3D score survives the reflection and e1/e3 flip."""
    base_frames = molecule_frames(dense.P, cutoff=net_cfg.cutoff)
    refl = DenseTensors(H=dense.H, E=dense.E, P=-dense.P)
    refl_frames = molecule_frames(refl.P, cutoff=net_cfg.cutoff)
    worst_axes = 0.0
    for fb, fr in zip(base_frames, refl_frames):
        worst_axes = max(worst_axes,
                         np.abs(fr.e1 + fb.e1).max(),
                         np.abs(fr.e2 - fb.e2).max(),
                         np.abs(fr.e3 + fb.e3).max())
    base_out = forward(params, net_cfg, dense, dense, t)
    got = _heads(params, net_cfg, refl, t)
    coeffs = _mlp2(base_out["latent"].node_h, params, "head3d").data  # invariant
    # predicted reflected field: e1/e3 components flip, e2 survives
    raw = np.stack([-c[0] * f.e1 + c[1] * f.e2 - c[2] * f.e3
                    for c, f in zip(coeffs, base_frames)])
    predicted = raw - raw.mean(axis=0, keepdims=True)
    worst = max(worst_axes, np.abs(got["score_P"] - predicted).max())
    # negative control: a plain sign flip would miss the surviving e2 part
    plain = np.abs(got["score_P"] + base_out["score_P"].data).max()
    e2_mag = np.abs(coeffs[:, 1]).max()
    pattern_ok = bool(plain > 1e-8 or e2_mag < 1e-10)
    return float(worst), pattern_ok


# -- analytic Gaussian score toy -----------------------------------------

def gaussian_marginal_score(x, t, mu, sigma, schedule):
    """Closed-form marginal score of N(mu, sigma^2) data under the schedule."""
    a, b = alpha_beta(schedule, t)
    var = a * a * sigma * sigma + b * b
    return -(x - a * mu) / var


def gaussian_score_toy(schedule, mu=1.0, sigma=1.0, hidden=64, d_time=16,
                       train_steps=4000, batch=512, lr=2e-3, seed=0,
                       eval_times=(0.1, 0.5, 0.9), t_min=1e-3):
    """Train a small MLP score net on 1D Gaussian data and compare against the
    analytic marginal score on the grid x in mu +/- 2 std(t).

    Returns (max normalized error over the eval times, per-time dict); the
    error at each t is max|pred - true| / max|true| over the grid.
    """
    rng = np.random.default_rng(seed)
    params = {
        "w1": Tensor(rng.standard_normal((1 + d_time, hidden)) / np.sqrt(1 + d_time),
                     requires_grad=True),
        "b1": Tensor(np.zeros(hidden), requires_grad=True),
        "w2": Tensor(rng.standard_normal((hidden, hidden)) / np.sqrt(hidden),
                     requires_grad=True),
        "b2": Tensor(np.zeros(hidden), requires_grad=True),
        "w3": Tensor(np.zeros((hidden, 1)), requires_grad=True),
        "b3": Tensor(np.zeros(1), requires_grad=True),
    }
    state = init_adam_state(params)

    def net(x, t_arr):
        emb = np.stack([fourier_embed(t, d_time) for t in t_arr])
        inp = Tensor(np.concatenate([x[:, None], emb], axis=1))
        h = ad.silu(ad.add(ad.matmul(inp, params["w1"]), params["b1"]))
        h = ad.silu(ad.add(ad.matmul(h, params["w2"]), params["b2"]))
        return ad.add(ad.matmul(h, params["w3"]), params["b3"])

    for step in range(train_steps):
        x0 = mu + sigma * rng.standard_normal(batch)
        t_arr = t_min + (1.0 - t_min) * rng.uniform(size=batch)
        ab = np.array([alpha_beta(schedule, t) for t in t_arr])
        z = rng.standard_normal(batch)
        xt = ab[:, 0] * x0 + ab[:, 1] * z
        target = (-z / ab[:, 1])[:, None]
        weight = (ab[:, 1] ** 2)[:, None]
        pred = net(xt, t_arr)
        diff = ad.sub(pred, Tensor(target))
        loss = ad.mean(ad.mul(Tensor(weight), ad.square(diff)))
        ad.backward(loss)
        grads = {k: p.grad for k, p in params.items()}
        for p in params.values():
            p.grad = None
        # cosine decay tames the Monte Carlo wander of the late steps
        cur_lr = lr * (0.1 + 0.45 * (1.0 + np.cos(np.pi * step / train_steps)))
        adam_step(params, grads, state, cur_lr)

    per_time = {}
    for t in eval_times:
        a, b = alpha_beta(schedule, t)
        std = np.sqrt(a * a * sigma * sigma + b * b)
        grid = np.linspace(a * mu - 2 * std, a * mu + 2 * std, 81)
        truth = gaussian_marginal_score(grid, t, mu, sigma, schedule)
        pred = net(grid, np.full(grid.shape, t)).data[:, 0]
        per_time[t] = float(np.abs(pred - truth).max() / np.abs(truth).max())
    return max(per_time.values()), per_time


# -- generation metrics --------------------------------------------------

def canonical_hash(graph):
    """Cheap permutation-invariant hash: sorted atom descriptors plus sorted
    typed-edge list. Sound on small desk corpora, not full canonization."""
    atoms = sorted(
        (int(graph.atom_types[i]), int(graph.charges[i]),
         tuple(sorted(int(b) for b in graph.bonds[i] if b)))
        for i in range(graph.n))
    edges = sorted(
        (min(int(graph.atom_types[i]), int(graph.atom_types[j])),
         max(int(graph.atom_types[i]), int(graph.atom_types[j])),
         int(graph.bonds[i, j]))
        for i in range(graph.n) for j in range(i + 1, graph.n)
        if graph.bonds[i, j])
    blob = json.dumps([atoms, edges]).encode()
    return hashlib.sha256(blob).hexdigest()


def _atom_frequencies(graphs):
    counts = np.zeros(len(ELEMENTS))
    for g in graphs:
        for a in g.atom_types:
            counts[a] += 1
    return counts / counts.sum()


def _bond_frequencies(graphs):
    counts = np.zeros(N_BOND_CATEGORIES)
    for g in graphs:
        iu = np.triu_indices(g.n, k=1)
        for b in g.bonds[iu]:
            counts[b] += 1
    return counts / counts.sum()


def total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def generation_metrics(samples, reference):
    """Validity, uniqueness, and categorical total-variation distances."""
    if not samples or not reference:
        raise ValueError("empty sample or reference set")
    validity = float(np.mean([validate_valence(g)[0] for g in samples]))
    unique = len({canonical_hash(g) for g in samples}) / len(samples)
    return {
        "validity": validity,
        "unique": float(unique),
        "atom_tv": total_variation(_atom_frequencies(samples), _atom_frequencies(reference)),
        "bond_tv": total_variation(_bond_frequencies(samples), _bond_frequencies(reference)),
        "n_samples": len(samples),
    }


# -- linear probe --------------------------------------------------------

def radius_of_gyration(graph):
    """Deterministic geometric label: rms distance from the center of mass."""
    return float(np.sqrt((graph.positions ** 2).sum(axis=1).mean()))


def pooled_embeddings(params, net_cfg, graphs, t=0.5):
    """Frozen mean-pooled latent per molecule (self-paired, fixed time)."""
    params = detach_params(params)
    rows = []
    for g in graphs:
        dense = to_dense(g)
        out = forward(params, net_cfg, dense, dense, t, with_heads=False)
        rows.append(out["latent"].pooled.data)
    return np.stack(rows)


def ridge_probe_mse(features, labels, seeds, ridge=1e-3, test_frac=0.2):
    """Closed-form ridge regression probe MSE, averaged over split seeds."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.std() < 1e-12:
        raise ValueError("degenerate constant labels")
    n = len(labels)
    n_test = max(1, int(round(test_frac * n)))
    mses = []
    for seed in seeds:
        order = np.random.default_rng(seed).permutation(n)
        test, train = order[:n_test], order[n_test:]
        x_tr, y_tr = features[train], labels[train]
        x_mu, y_mu = x_tr.mean(axis=0), y_tr.mean()
        xc = x_tr - x_mu
        w = np.linalg.solve(xc.T @ xc + ridge * np.eye(xc.shape[1]), xc.T @ (y_tr - y_mu))
        pred = (features[test] - x_mu) @ w + y_mu
        mses.append(float(((pred - labels[test]) ** 2).mean()))
    return float(np.mean(mses))


def linear_probe(params, net_cfg, graphs, labels, seeds=(0, 1, 2, 3, 4)):
    """Probe MSE of the given model's frozen embeddings on the labeled set."""
    feats = pooled_embeddings(params, net_cfg, graphs)
    return ridge_probe_mse(feats, labels, seeds)
