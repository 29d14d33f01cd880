"""Training objectives: denoising score matching, trajectory-contrastive
regularization, their weighted combination, the optional cold-branch losses,
and the finite-state gradient-decomposition verifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .schedule import alpha_beta

COMPONENTS = ("P", "H", "E")


@dataclass(frozen=True)
class LossReport:
    l_sc: float
    l_co: float
    total: float
    per_component: dict  # P/H/E breakdown of the score-matching term


def time_weight(schedules, t, weighting="beta2"):
    """Per-component loss weights; "beta2" is the likelihood weighting
    beta(t)^2 that keeps per-time magnitudes comparable."""
    if weighting == "uniform":
        return {c: 1.0 for c in COMPONENTS}
    if weighting != "beta2":
        raise ValueError(f"unknown weighting {weighting!r}")
    return {c: alpha_beta(schedules[c], t)[1] ** 2 for c in COMPONENTS}


def score_matching_loss(pred, target, weights):
    """Weighted MSE between predicted and conditional scores, summed over
    components. ``pred`` maps component -> Tensor, ``target`` maps component
    -> array, ``weights`` maps component -> scalar. Returns (scalar Tensor,
    per-component float dict)."""
    total = None
    breakdown = {}
    for comp in COMPONENTS:
        p = pred[comp]
        tgt = np.asarray(target[comp])
        if p.shape != tgt.shape:
            raise ad.ShapeError(
                f"score_matching_loss[{comp}]: pred {p.shape} vs target {tgt.shape}")
        term = ad.mul(ad.mean(ad.square(ad.sub(p, Tensor(tgt)))), Tensor(weights[comp]))
        breakdown[comp] = float(term.data)
        total = term if total is None else ad.add(total, term)
    return total, breakdown


def contrastive_loss(anchors, positives, tau):
    """In-batch InfoNCE on squared embedding distances.

    ``anchors``/``positives`` are lists of unit-norm embedding Tensors for
    x0 and the matching x_t. Similarity is -||a_i - p_j||^2 / tau^2; each
    anchor is contrasted against its own positive and the other positives.
    """
    b = len(anchors)
    if b < 2:
        raise ValueError("contrastive loss needs batch size >= 2 for negatives")
    if len(positives) != b:
        raise ad.ShapeError(f"contrastive_loss: {b} anchors vs {len(positives)} positives")
    d = anchors[0].shape[0]
    a = ad.concat([ad.reshape(x, (1, d)) for x in anchors], axis=0)
    p = ad.concat([ad.reshape(x, (1, d)) for x in positives], axis=0)
    # ||a_i - p_j||^2 = |a_i|^2 + |p_j|^2 - 2 a_i . p_j
    a2 = ad.reshape(ad.sum_(ad.square(a), axis=1), (b, 1))
    p2 = ad.reshape(ad.sum_(ad.square(p), axis=1), (1, b))
    cross = ad.matmul(a, ad.transpose(p))
    dist2 = ad.add(ad.sub(ad.broadcast(a2, (b, b)), ad.mul(Tensor(2.0), cross)),
                   ad.broadcast(p2, (b, b)))
    logits = ad.mul(dist2, Tensor(-1.0 / (tau * tau)))
    probs = ad.softmax(logits, axis=-1)
    diag = ad.reshape(probs, (b * b,))[np.arange(b) * (b + 1)]
    return ad.mul(Tensor(-1.0), ad.mean(ad.log(diag)))


def anneal_tau(tau0, schedules, t):
    """Monotone temperature annealing tau(t) = tau0 * (0.5 + beta(t))."""
    return tau0 * (0.5 + alpha_beta(schedules["P"], t)[1])


def total_loss(l_sc, l_co, lambda1=1.0, lambda2=0.01, per_component=None):
    """Weighted sum lambda1 * l_sc + lambda2 * l_co as a LossReport."""
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be non-negative")
    sc = float(l_sc.data) if isinstance(l_sc, Tensor) else float(l_sc)
    co = float(l_co.data) if isinstance(l_co, Tensor) else float(l_co)
    if not (np.isfinite(sc) and np.isfinite(co)):
        raise ValueError("non-finite loss term")
    return LossReport(l_sc=sc, l_co=co, total=lambda1 * sc + lambda2 * co,
                      per_component=dict(per_component or {}))


def combine(l_sc, l_co, lambda1, lambda2):
    """Tape-aware combination used inside the training step."""
    return ad.add(ad.mul(Tensor(lambda1), l_sc), ad.mul(Tensor(lambda2), l_co))


def restoration_loss(restored, x0):
    """Cold-branch L1 restoration loss, averaged over all entries."""
    total = 0.0
    count = 0
    terms = []
    for comp, clean in (("P", x0.P), ("H", x0.H), ("E", x0.E)):
        r = restored[comp]
        if r.shape != clean.shape:
            raise ad.ShapeError(f"restoration_loss[{comp}]: {r.shape} vs {clean.shape}")
        terms.append(ad.sum_(ad.abs_(ad.sub(r, Tensor(clean)))))
        count += clean.size
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    return ad.div(total, Tensor(float(count)))


def soft_score_matching_loss(pred, residual, alpha, cold=False):
    """Reparameterized objective ||alpha(t) (pred - residual)||^2 (mean).

    Only valid for the closed-form Gaussian trajectory; rejects cold
    trajectories where x_t - x0 has no such parameterization.
    """
    if cold:
        raise ValueError("soft score matching requires the closed-form trajectory")
    residual = np.asarray(residual)
    if pred.shape != residual.shape:
        raise ad.ShapeError(f"soft_score_matching_loss: {pred.shape} vs {residual.shape}")
    diff = ad.sub(pred, Tensor(residual))
    return ad.mean(ad.square(ad.mul(Tensor(alpha), diff)))


def verify_decomposition(theta, x0_idx, xt_idx):
    """Joint-likelihood gradient decomposition check on a finite-state toy.

    ``theta`` parameterizes a joint table p(x0, xt) = softmax(theta) over
    n0 x nt states. For the observed pair, returns (grad of log p(x0, xt),
    grad of log q(x0) + grad of log f(xt | x0), max abs residual); the two
    gradients agree identically by the chain rule log p = log q + log f.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 2:
        raise ValueError("theta must be a 2-D table")
    flat = theta.reshape(-1)
    shifted = flat - flat.max()
    p = np.exp(shifted) / np.exp(shifted).sum()
    p = p.reshape(theta.shape)
    if not np.all(np.isfinite(p)):
        raise ValueError("non-normalizable table")

    # d log p(x0, xt) / d theta_ab = 1[(a,b)=(x0,xt)] - p_ab
    grad_joint = -p.copy()
    grad_joint[x0_idx, xt_idx] += 1.0

    q = p.sum(axis=1)                       # marginal over xt
    # d log q(x0) / d theta_ab = 1[a=x0] p_ab / q_x0 - p_ab
    grad_marginal = -p.copy()
    grad_marginal[x0_idx, :] += p[x0_idx, :] / q[x0_idx]

    # d log f(xt|x0) / d theta_ab = 1[(a,b)=(x0,xt)] - 1[a=x0] p_ab / q_x0
    grad_conditional = np.zeros_like(p)
    grad_conditional[x0_idx, :] -= p[x0_idx, :] / q[x0_idx]
    grad_conditional[x0_idx, xt_idx] += 1.0

    residual = np.abs(grad_joint - (grad_marginal + grad_conditional)).max()
    return grad_joint, grad_marginal + grad_conditional, residual
