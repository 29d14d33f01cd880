"""Joint 2D-topology / 3D-geometry diffusion-trajectory pretraining for
molecules: forward trajectory augmentation, a twin-encoder score network with
equivariant and invariant heads, combined score-matching + contrastive
training, reverse-SDE generation, and an evaluation/probe suite."""

__version__ = "0.1.0"
