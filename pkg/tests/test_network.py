import numpy as np
import pytest

from conftest import random_molecule, small_net_config, toy_corpus
from mjae import autodiff as ad
from mjae.autodiff import Tensor
from mjae.evalsuite import random_rotation
from mjae.molgraph import DenseTensors, ELEMENT_INDEX, make_graph, permute, to_dense
from mjae.network import (LatentRepresentation, NetworkConfig, detach_params,
                          edge_condition, encode, forward, fourier_embed,
                          fourier_frequencies, fuse, fuse_gcn, init_params,
                          project, score_2d, score_3d, score_h)
from mjae.frames import molecule_frames


@pytest.fixture
def cfg():
    return small_net_config()


@pytest.fixture
def params(cfg):
    return init_params(cfg, np.random.default_rng(0))


def _dense(rng, n_heavy=2):
    return to_dense(random_molecule(rng, n_heavy))


# -- time embedding -------------------------------------------------------

def test_fourier_t0():
    emb = fourier_embed(0.0, 16)
    assert np.all(emb[:8] == 0.0)
    assert np.all(emb[8:] == 1.0)


def test_fourier_lipschitz():
    d = 16
    c = 2.0 * np.pi * fourier_frequencies(d).max() * np.sqrt(d)
    grid = np.linspace(0.0, 1.0, 400)
    embs = np.stack([fourier_embed(t, d) for t in grid])
    for i in range(0, 400, 37):
        for j in range(i + 1, 400, 53):
            dist = np.linalg.norm(embs[i] - embs[j])
            assert dist <= c * abs(grid[i] - grid[j]) + 1e-12


def test_fourier_no_collisions_on_grid():
    grid = np.linspace(1e-3, 1.0, 1000)
    embs = np.stack([fourier_embed(t, 16) for t in grid])
    # adjacent points are the closest pair for a smooth embedding
    diffs = np.linalg.norm(np.diff(embs, axis=0), axis=1)
    assert diffs.min() > 0.0
    sample = embs[::50]
    d2 = ((sample[:, None, :] - sample[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    assert d2.min() > 0.0


# -- encoder --------------------------------------------------------------

def test_encode_rigid_motion_invariance(cfg, params, rng):
    dense = _dense(rng)
    base = encode(dense, params, cfg, "enc_clean").data
    for _ in range(5):
        r = random_rotation(rng)
        moved = DenseTensors(H=dense.H, E=dense.E, P=dense.P @ r.T + rng.standard_normal(3))
        got = encode(moved, params, cfg, "enc_clean").data
        assert np.abs(got - base).max() < 1e-5


def test_encode_permutation_equivariance(cfg, params, rng):
    g = random_molecule(rng, 2)
    perm = rng.permutation(g.n)
    base = encode(to_dense(g), params, cfg, "enc_clean").data
    got = encode(to_dense(permute(g, perm)), params, cfg, "enc_clean").data
    assert np.abs(got - base[perm]).max() < 1e-9


def test_encode_symmetric_molecule_identical_features(cfg, params):
    # linear CO2: the two oxygens have identical neighborhoods
    types = [ELEMENT_INDEX["C"], ELEMENT_INDEX["O"], ELEMENT_INDEX["O"]]
    bonds = np.zeros((3, 3), dtype=int)
    bonds[0, 1] = bonds[1, 0] = 2
    bonds[0, 2] = bonds[2, 0] = 2
    pos = [[0.0, 0, 0], [1.16, 0, 0], [-1.16, 0, 0]]
    g = make_graph(types, [0, 0, 0], bonds, pos)
    f = encode(to_dense(g), params, cfg, "enc_clean").data
    assert np.abs(f[1] - f[2]).max() < 1e-6


def test_shared_encoder_config(rng):
    cfg = NetworkConfig(latent=8, rounds=1, n_rbf=4, gcn_layers=1, heads=1,
                        head_dim=4, d_time=4, d_contrast=4, hidden=8,
                        edge_hidden=4, share_encoders=True)
    params = init_params(cfg, rng)
    assert not any(k.startswith("enc_noisy") for k in params)
    dense = _dense(np.random.default_rng(1))
    a = encode(dense, params, cfg, "enc_clean").data
    b = encode(dense, params, cfg, "enc_noisy").data
    assert np.array_equal(a, b)


# -- fusion ---------------------------------------------------------------

def test_fuse_zero_weights(cfg, params, rng):
    dense = _dense(rng)
    f = encode(dense, params, cfg, "enc_clean")
    zeroed = {k: Tensor(np.zeros_like(v.data)) for k, v in params.items()}
    out = fuse(f, f, fourier_embed(0.3, cfg.d_time), zeroed, cfg)
    assert np.all(out.data == 0.0)


def test_fuse_sensitive_to_clean_branch(cfg, params, rng):
    dense = _dense(rng)
    f0 = encode(dense, params, cfg, "enc_clean")
    ft = encode(dense, params, cfg, "enc_noisy")
    emb = fourier_embed(0.3, cfg.d_time)
    base = fuse(f0, ft, emb, params, cfg).data
    shuffled = Tensor(f0.data[::-1].copy())
    other = fuse(shuffled, ft, emb, params, cfg).data
    assert np.abs(base - other).max() > 0.0


def test_fuse_size_mismatch(cfg, params):
    a = Tensor(np.zeros((3, cfg.latent)))
    b = Tensor(np.zeros((4, cfg.latent)))
    with pytest.raises(ad.ShapeError, match="fuse"):
        fuse(a, b, fourier_embed(0.1, cfg.d_time), params, cfg)


def test_edge_condition_symmetry_and_permutation(cfg, params, rng):
    g = random_molecule(rng, 2)
    dense = to_dense(g)
    emb = fourier_embed(0.4, cfg.d_time)
    w = edge_condition(dense.E, dense.E, emb, params, cfg).data
    assert np.array_equal(w, w.T)
    assert np.all(np.diag(w) == 0.0)
    perm = rng.permutation(g.n)
    pe = to_dense(permute(g, perm)).E
    wp = edge_condition(pe, pe, emb, params, cfg).data
    assert np.abs(wp - w[np.ix_(perm, perm)]).max() < 1e-9


def test_edge_condition_zero_weights(cfg, params, rng):
    dense = _dense(rng)
    zeroed = {k: Tensor(np.zeros_like(v.data)) for k, v in params.items()}
    w = edge_condition(dense.E, dense.E, fourier_embed(0.2, cfg.d_time), zeroed, cfg)
    assert np.all(w.data == 0.0)


def test_fuse_gcn_zero_adjacency_residual_path(cfg, params, rng):
    n = 4
    node = Tensor(rng.standard_normal((n, cfg.latent)))
    w = Tensor(np.zeros((n, n)))
    latent = fuse_gcn(node, w, params, cfg)
    # W = 0: each layer adds silu(bias) rows only
    expect = node.data.copy()
    for layer in range(cfg.gcn_layers):
        b = params[f"gcn.l{layer}.b"].data
        expect = expect + b / (1.0 + np.exp(-b))
    assert np.abs(latent.node_h.data - expect).max() < 1e-12
    assert np.abs(latent.pooled.data - latent.node_h.data.mean(axis=0)).max() < 1e-12


def test_fuse_gcn_closed_form_single_layer(rng):
    cfg = NetworkConfig(latent=6, rounds=1, n_rbf=4, gcn_layers=1, heads=1,
                        head_dim=4, d_time=4, d_contrast=4, hidden=8, edge_hidden=4)
    params = init_params(cfg, rng)
    n = 5
    h = rng.standard_normal((n, cfg.latent))
    w = rng.standard_normal((n, n))
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 0.0)
    got = fuse_gcn(Tensor(h), Tensor(w), params, cfg).node_h.data
    # independent numpy replication
    deg = np.abs(w).sum(axis=1) + 1.0
    dinv = 1.0 / np.sqrt(deg)
    wn = w * dinv[:, None] * dinv[None, :]
    pre = wn @ h @ params["gcn.l0.w"].data + params["gcn.l0.b"].data
    expect = h + pre / (1.0 + np.exp(-pre))
    assert np.abs(got - expect).max() < 1e-10


# -- heads ----------------------------------------------------------------

def _latent(cfg, params, dense, t=0.5):
    out = forward(params, cfg, dense, dense, t, with_heads=False)
    return out["latent"]


def test_score_3d_zero_head_weights(cfg, params, rng):
    dense = _dense(rng)
    latent = _latent(cfg, params, dense)
    frames = molecule_frames(dense.P, cutoff=cfg.cutoff)
    zeroed = dict(params)
    for k in ("head3d.l1.w", "head3d.l1.b", "head3d.l2.w", "head3d.l2.b"):
        zeroed[k] = Tensor(np.zeros_like(params[k].data))
    assert np.all(score_3d(latent, frames, zeroed).data == 0.0)


def test_score_3d_zero_com(cfg, params, rng):
    dense = _dense(rng)
    latent = _latent(cfg, params, dense)
    frames = molecule_frames(dense.P, cutoff=cfg.cutoff)
    field = score_3d(latent, frames, params).data
    assert np.abs(field.mean(axis=0)).max() < 1e-12


def test_score_2d_symmetric_zero_diag(cfg, params, rng):
    dense = _dense(rng)
    latent = _latent(cfg, params, dense)
    out = score_2d(latent, params, cfg).data
    assert np.array_equal(out, np.swapaxes(out, 0, 1))
    n = out.shape[0]
    assert np.all(out[np.arange(n), np.arange(n)] == 0.0)


def test_score_h_zero_weights(cfg, params, rng):
    dense = _dense(rng)
    latent = _latent(cfg, params, dense)
    zeroed = dict(params)
    for k in ("headh.l1.w", "headh.l1.b", "headh.l2.w", "headh.l2.b"):
        zeroed[k] = Tensor(np.zeros_like(params[k].data))
    assert np.all(score_h(latent, zeroed).data == 0.0)


def test_project_unit_norm(cfg, params, rng):
    dense = _dense(rng)
    latent = _latent(cfg, params, dense)
    emb = project(latent, params, cfg).data
    assert abs(np.linalg.norm(emb) - 1.0) < 1e-6


def test_project_distinct_molecules(cfg, params):
    embs = []
    for g in toy_corpus(count=10, seed=5):
        latent = _latent(cfg, params, to_dense(g))
        embs.append(project(latent, params, cfg).data)
    embs = np.stack(embs)
    d2 = ((embs[:, None, :] - embs[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    assert d2.min() > 0.0


# -- full forward ---------------------------------------------------------

def test_forward_symmetries(cfg, params, rng):
    dense = _dense(rng, n_heavy=3)
    base = forward(params, cfg, dense, dense, 0.5)
    for _ in range(5):
        r = random_rotation(rng)
        moved = DenseTensors(H=dense.H, E=dense.E, P=dense.P @ r.T)
        got = forward(params, cfg, moved, moved, 0.5)
        assert np.abs(got["score_P"].data - base["score_P"].data @ r.T).max() < 1e-4
        assert np.abs(got["score_E"].data - base["score_E"].data).max() < 1e-5
        assert np.abs(got["score_H"].data - base["score_H"].data).max() < 1e-5
        assert np.abs(got["projection"].data - base["projection"].data).max() < 1e-5


def test_forward_gradients_flow_to_all_heads(cfg, params, rng):
    dense = _dense(rng)
    out = forward(params, cfg, dense, dense, 0.5)
    loss = ad.add(ad.sum_(ad.square(out["score_P"])),
                  ad.add(ad.sum_(ad.square(out["score_E"])),
                         ad.add(ad.sum_(ad.square(out["score_H"])),
                                ad.sum_(ad.square(out["projection"])))))
    ad.backward(loss)
    touched = [k for k, p in params.items() if p.grad is not None
               and np.abs(p.grad).max() > 0]
    for prefix in ("enc_clean", "enc_noisy", "fuse", "edge", "gcn", "att",
                   "head2d", "head3d", "headh", "proj"):
        assert any(k.startswith(prefix) for k in touched), prefix


def test_detach_params(cfg, params):
    frozen = detach_params(params)
    assert all(not v.requires_grad for v in frozen.values())
    assert all(frozen[k].data is params[k].data for k in params)
