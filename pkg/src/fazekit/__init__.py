"""Few-shot adaptive gaze estimation on a rotation-equivariant latent space."""

__version__ = "0.1.0"
