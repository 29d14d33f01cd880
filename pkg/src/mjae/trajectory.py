"""Forward trajectory augmentation.

Continuous branch: closed-form joint Gaussian perturbation of (P, H, E) with
per-component schedules, plus the conditional score targets -z / beta(t).
Position noise is projected onto the zero center-of-mass subspace and edge
noise is symmetrized, so perturbed states stay inside the same gauge and
symmetry class as the data.

Discrete branch: absorbing-state and uniform-transition Markov chains on
categorical tokens, and the cold 3D alternative that mixes the frame-projected
ground-truth conformer with a uniformly sampled frame-projected rough
conformer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import global_frame, molecule_frames
from .molgraph import DenseTensors
from .schedule import alpha_beta

T_MIN = 1e-3


@dataclass(frozen=True)
class TrajectorySample:
    """One forward-perturbed molecule with its conditional score targets."""

    x0: DenseTensors
    xt: DenseTensors
    t: float
    noise: dict          # per-component injected Gaussian noise (P/H/E)
    score_target: dict   # per-component -z / beta(t)


@dataclass(frozen=True)
class ConformerBank:
    """Rough conformers for one molecule, stored frame-projected and centered."""

    conformers: tuple    # tuple of (n, 3) arrays, each F_i^-1-projected
    energies: tuple

    def __post_init__(self):
        if len(self.conformers) == 0:
            raise ValueError("conformer bank is empty")


def project_zero_com(z):
    """Project per-atom 3-vectors onto the zero center-of-mass subspace."""
    return z - z.mean(axis=0, keepdims=True)


def symmetrize_edge_noise(z):
    """Mirror the strict upper triangle and zero the diagonal of (n, n, e) noise."""
    n = z.shape[0]
    upper = np.triu(np.ones((n, n)), k=1)[:, :, None]
    sym = z * upper + np.swapaxes(z, 0, 1) * np.swapaxes(upper, 0, 1)
    return sym


def perturb_continuous(x0, t, rng, schedules):
    """Closed-form forward perturbation x_t = alpha(t) x0 + beta(t) z per component.

    ``schedules`` maps component names "P"/"H"/"E" to NoiseSchedule objects.
    Rejects t where beta(t) = 0 (undefined score target); with the default
    VP schedules this means t must be positive.
    """
    coeffs = {}
    for comp in ("P", "H", "E"):
        a, b = alpha_beta(schedules[comp], t)
        if b <= 0.0:
            raise ValueError(f"beta(t)=0 for component {comp} at t={t}: "
                             "score target undefined")
        coeffs[comp] = (a, b)

    z_p = project_zero_com(rng.standard_normal(x0.P.shape))
    z_h = rng.standard_normal(x0.H.shape)
    z_e = symmetrize_edge_noise(rng.standard_normal(x0.E.shape))
    noise = {"P": z_p, "H": z_h, "E": z_e}

    xt = DenseTensors(
        P=coeffs["P"][0] * x0.P + coeffs["P"][1] * z_p,
        H=coeffs["H"][0] * x0.H + coeffs["H"][1] * z_h,
        E=coeffs["E"][0] * x0.E + coeffs["E"][1] * z_e,
    )
    score_target = {c: -noise[c] / coeffs[c][1] for c in noise}
    return TrajectorySample(x0=x0, xt=xt, t=t, noise=noise, score_target=score_target)


def sample_time(rng, t_min=T_MIN):
    """Draw t ~ Uniform(t_min, 1]; t_min avoids the beta -> 0 blow-up."""
    return t_min + (1.0 - t_min) * rng.uniform()


def perturb_absorbing(tokens, t_step, mask_betas, rng):
    """Absorbing-state chain: each token flips to the mask state independently.

    The mask state is an implicit extra vocabulary slot (index = max token
    vocabulary). After ``t_step`` steps with per-step flip rates ``mask_betas``
    the total mask probability is 1 - prod(1 - beta_k); masked stays masked.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    mask_betas = np.asarray(mask_betas, dtype=np.float64)
    if t_step > len(mask_betas):
        raise ValueError(f"t_step {t_step} exceeds schedule length {len(mask_betas)}")
    mask_state = int(tokens.max(initial=0)) + 1
    out = tokens.copy()
    for k in range(t_step):
        flips = rng.uniform(size=out.shape) < mask_betas[k]
        out[flips] = mask_state
    return out


def perturb_uniform(tokens, t_step, alphas, rng, n_classes):
    """Uniform-transition chain Q_k = alpha_k I + (1 - alpha_k) 11^T / d.

    Each step keeps a token with probability alpha_k, else resamples it
    uniformly over the ``n_classes`` states; the limiting law is uniform.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    alphas = np.asarray(alphas, dtype=np.float64)
    if t_step > len(alphas):
        raise ValueError(f"t_step {t_step} exceeds schedule length {len(alphas)}")
    out = tokens.copy()
    for k in range(t_step):
        resample = rng.uniform(size=out.shape) >= alphas[k]
        out[resample] = rng.integers(0, n_classes, size=int(resample.sum()))
    return out


def uniform_transition_matrix(alphas, t_step, n_classes):
    """Exact t-step transition matrix prod_k Q_k for the uniform chain."""
    q = np.eye(n_classes)
    ones = np.ones((n_classes, n_classes)) / n_classes
    for k in range(t_step):
        q = q @ (alphas[k] * np.eye(n_classes) + (1.0 - alphas[k]) * ones)
    return q


def make_conformer_bank(p0, rng, noise_levels=(0.1, 0.3, 0.6)):
    """Desk-scale stand-in for force-field conformers: ground truth plus
    fixed-noise perturbations, each zero-centered and projected by the inverse
    of its own global frame (making the stored shapes pose-free)."""
    conformers = []
    energies = []
    for level in noise_levels:
        p = p0 + level * rng.standard_normal(p0.shape)
        p = p - p.mean(axis=0, keepdims=True)
        conformers.append(_frame_project(p))
        energies.append(float(level))
    return ConformerBank(conformers=tuple(conformers), energies=tuple(energies))


def _frame_project(p):
    """Express positions in their own global-frame coordinates (pose removal)."""
    f = global_frame(molecule_frames(p))
    return p @ f.matrix.T


def perturb_cold_3d(p0, bank, t, rng, schedule):
    """Cold 3D perturbation: alpha(t) * (frame-projected ground truth) plus
    beta(t) * (uniformly sampled stored conformer). SE(3)-invariant because
    both terms live in frame-projected coordinates."""
    p0 = np.asarray(p0, dtype=np.float64)
    a, b = alpha_beta(schedule, t)
    pick = rng.integers(0, len(bank.conformers))
    return a * _frame_project(p0 - p0.mean(axis=0, keepdims=True)) + b * bank.conformers[pick]
