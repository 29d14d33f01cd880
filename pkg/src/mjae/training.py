"""Optimizer, training loop, and checkpoint round-trip.

The loop is the combined objective end to end: sample a batch, draw one time
per molecule, perturb, run the twin-branch forward, take the weighted
score-matching + contrastive loss, reverse-mode backward, clipped Adam step.
Everything is driven by one root seed so a (seed, dataset, config) triple
fully determines the loss history.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import loss as losses
from .molgraph import to_dense
from .network import NetworkConfig, forward, init_params
from .schedule import NoiseSchedule, alpha_beta
from .trajectory import perturb_continuous, sample_time

CHECKPOINT_MAGIC = b"MJAECKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated, or mismatched checkpoint file."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 0.01
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    t_min: float = 1e-3
    tau0: float = 0.5
    weighting: str = "beta2"
    lr_schedule: str = "constant"   # "constant" or "cosine"
    grad_clip: float = 10.0
    checkpoint_interval: int = 0   # epochs between checkpoints; 0 = only final
    self_cond_prob: float = 0.0    # fraction of steps conditioning on x_t itself
    divergence_limit: float = 1e6

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (contrastive negatives)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")


def build_schedules(cfg):
    """Identical schedule for all three components (distinct ones permitted)."""
    return {"P": cfg.schedule, "H": cfg.schedule, "E": cfg.schedule}


# -- optimizer -----------------------------------------------------------

def init_adam_state(params):
    return {
        "step": 0,
        "m": {k: np.zeros_like(v.data) for k, v in params.items()},
        "v": {k: np.zeros_like(v.data) for k, v in params.items()},
    }


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard bias-corrected Adam update, in place.

    A non-finite gradient rejects the whole step (params and state untouched)
    with a diagnostic naming the tensor.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"adam_step: non-finite gradient for {name!r}; step rejected")
    state["step"] += 1
    t = state["step"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = state["m"][name] = beta1 * state["m"][name] + (1.0 - beta1) * g
        v = state["v"][name] = beta2 * state["v"][name] + (1.0 - beta2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        params[name].data -= update
    return params, state


def clip_gradients(grads, max_norm):
    """Scale all gradients so the global norm is at most ``max_norm``."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


# -- training loop -------------------------------------------------------

def training_step(params, net_cfg, cfg, schedules, batch, rngs):
    """One optimizer-ready pass over a batch of DenseTensors.

    Returns (loss report, gradient map). ``rngs`` supplies one independent
    stream per molecule so results do not depend on scheduling order.
    """
    sc_terms = []
    breakdowns = []
    anchors = []
    positives = []
    times = []
    for x0, rng in zip(batch, rngs):
        t = sample_time(rng, cfg.t_min)
        times.append(t)
        sample = perturb_continuous(x0, t, rng, schedules)
        cond = sample.xt if rng.uniform() < cfg.self_cond_prob else x0
        scale = {c: 1.0 / alpha_beta(schedules[c], t)[1] for c in ("P", "H", "E")}
        out = forward(params, net_cfg, cond, sample.xt, t, scale=scale)
        weights = losses.time_weight(schedules, t, cfg.weighting)
        pred = {"P": out["score_P"], "H": out["score_H"], "E": out["score_E"]}
        term, breakdown = losses.score_matching_loss(pred, sample.score_target, weights)
        sc_terms.append(term)
        breakdowns.append(breakdown)
        positives.append(out["projection"])
        anchor = forward(params, net_cfg, cond, x0, t, with_heads=False)
        anchors.append(anchor["projection"])

    l_sc = sc_terms[0]
    for term in sc_terms[1:]:
        l_sc = ad.add(l_sc, term)
    l_sc = ad.div(l_sc, ad.Tensor(float(len(batch))))
    tau = losses.anneal_tau(cfg.tau0, schedules, float(np.mean(times)))
    l_co = losses.contrastive_loss(anchors, positives, tau)
    total = losses.combine(l_sc, l_co, cfg.lambda1, cfg.lambda2)
    report = losses.total_loss(l_sc, l_co, cfg.lambda1, cfg.lambda2,
                               _mean_breakdown(breakdowns))
    ad.backward(total)
    grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    for p in params.values():
        p.grad = None
    return report, grads


def _mean_breakdown(breakdowns):
    keys = breakdowns[0].keys()
    return {k: float(np.mean([b[k] for b in breakdowns])) for k in keys}


def train(dataset, cfg, net_cfg=None, params=None, on_epoch=None):
    """Train on a list of MoleculeGraph; returns (params, epoch history).

    History entries carry the epoch means of the total/score/contrastive
    losses. Divergence (total loss beyond the configured limit) aborts.
    """
    if not dataset:
        raise ValueError("empty dataset")
    net_cfg = net_cfg or NetworkConfig()
    dense = [to_dense(g) for g in dataset]
    root = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(net_cfg, root)
    state = init_adam_state(params)
    schedules = build_schedules(cfg)
    history = []
    steps_per_epoch = max(1, len(dense) // cfg.batch_size)
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 1000 + epoch]).permutation(len(dense))
        reports = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            batch = [dense[i] for i in idx]
            rngs = [np.random.default_rng([cfg.seed, epoch, start, int(i)]) for i in idx]
            report, grads = training_step(params, net_cfg, cfg, schedules, batch, rngs)
            if report.total > cfg.divergence_limit:
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: total loss {report.total:g}")
            grads, _ = clip_gradients(grads, cfg.grad_clip)
            if cfg.lr_schedule == "cosine":
                frac = min(1.0, state["step"] / total_steps)
                cur_lr = cfg.lr * (0.1 + 0.45 * (1.0 + np.cos(np.pi * frac)))
            else:
                cur_lr = cfg.lr
            try:
                adam_step(params, grads, state, cur_lr, cfg.beta1, cfg.beta2, cfg.eps)
            except ValueError:
                continue  # rejected step; parameters unchanged
            reports.append(report)
        history.append({
            "epoch": epoch,
            "total": float(np.mean([r.total for r in reports])),
            "l_sc": float(np.mean([r.l_sc for r in reports])),
            "l_co": float(np.mean([r.l_co for r in reports])),
        })
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return params, history


# -- checkpoints ---------------------------------------------------------

def save_checkpoint(params, state, path, meta=None):
    """Binary checkpoint: magic, version, JSON header, raw little-endian buffers."""
    tensors = {f"param/{k}": v.data for k, v in params.items()}
    tensors.update({f"adam_m/{k}": v for k, v in state["m"].items()})
    tensors.update({f"adam_v/{k}": v for k, v in state["v"].items()})
    entries = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": "float64", "offset": offset})
        offset += arr.nbytes
    header = json.dumps({"tensors": entries, "adam_step": state["step"],
                         "meta": meta or {}}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (params, adam state, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20 or blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", blob[12:20])
    try:
        header = json.loads(blob[20:20 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from e
    body = blob[20 + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"])) * 8 if entry["shape"] else 8
        raw = body[entry["offset"]:entry["offset"] + size]
        if len(raw) != size:
            raise CheckpointError(f"truncated checkpoint at tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
    params = {k[len("param/"):]: ad.Tensor(v, requires_grad=True)
              for k, v in tensors.items() if k.startswith("param/")}
    state = {
        "step": header["adam_step"],
        "m": {k[len("adam_m/"):]: v for k, v in tensors.items() if k.startswith("adam_m/")},
        "v": {k[len("adam_v/"):]: v for k, v in tensors.items() if k.startswith("adam_v/")},
    }
    return params, state, header.get("meta", {})


def check_shapes(params, net_cfg, rng=None):
    """Validate loaded parameters against a config; names the first mismatch."""
    reference = init_params(net_cfg, np.random.default_rng(0))
    for name, ref in reference.items():
        if name not in params:
            raise CheckpointError(f"checkpoint missing tensor {name!r}")
        if params[name].shape != ref.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {params[name].shape}, "
                f"config expects {ref.shape}")
    extra = set(params) - set(reference)
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensors {sorted(extra)}")
