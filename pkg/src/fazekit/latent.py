"""The disentangled latent code and the rotations acting on it.

Gaze and head sub-codes are ``3 x F`` matrices whose columns are 3D vectors,
so a rotation acts on them by left multiplication. Every function here accepts
numpy arrays or torch tensors and broadcasts over leading batch axes.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidArgumentError

ZERO_ROW_EPS = 1e-8


@dataclass
class LatentCode:
    appearance: object  # (..., F_a)
    gaze: object  # (..., 3, F_g)
    head: object  # (..., 3, F_h)

    @property
    def dims(self):
        return self.appearance.shape[-1], self.gaze.shape[-1], self.head.shape[-1]

    def flatten(self):
        """Concatenate into one vector per sample (the decoder's input)."""
        lead = self.appearance.shape[:-1]
        parts = [self.appearance, self.gaze.reshape(*lead, -1), self.head.reshape(*lead, -1)]
        if isinstance(self.appearance, torch.Tensor):
            return torch.cat(parts, dim=-1)
        return np.concatenate(parts, axis=-1)

    @classmethod
    def unflatten(cls, flat, f_a, f_g, f_h):
        lead = flat.shape[:-1]
        if flat.shape[-1] != f_a + 3 * f_g + 3 * f_h:
            raise InvalidArgumentError(f"flat code of length {flat.shape[-1]} does not match dims {(f_a, f_g, f_h)}")
        a = flat[..., :f_a]
        g = flat[..., f_a:f_a + 3 * f_g].reshape(*lead, 3, f_g)
        h = flat[..., f_a + 3 * f_g:].reshape(*lead, 3, f_h)
        return cls(a, g, h)


def _transpose(r):
    return r.transpose(-1, -2) if isinstance(r, torch.Tensor) else np.swapaxes(r, -1, -2)


def rotate_code(z, r_gaze, r_head):
    """Rotate the gaze and head sub-codes; appearance passes through."""
    return LatentCode(z.appearance, r_gaze @ z.gaze, r_head @ z.head)


def frontalize_gaze_code(z_gaze, r_gaze):
    """Undo a sample's own gaze rotation: ``R^T z``."""
    return _transpose(r_gaze) @ z_gaze


def normalize_gaze_code(z_gaze, along="rows"):
    """Scale a ``3 x F_g`` code to unit l2 norms.

    ``along="rows"`` gives 3 norms, one per row taken over the F_g entries.
    ``along="columns"`` gives F_g norms, one per 3D column. Norms below 1e-8
    are left alone.
    """
    if along == "rows":
        axis = -1
    elif along == "columns":
        axis = -2
    else:
        raise InvalidArgumentError(f"along must be 'rows' or 'columns', got {along!r}")
    if isinstance(z_gaze, torch.Tensor):
        norm = torch.linalg.vector_norm(z_gaze, dim=axis, keepdim=True)
        norm = torch.where(norm < ZERO_ROW_EPS, torch.ones_like(norm), norm)
    else:
        z_gaze = np.asarray(z_gaze, dtype=np.float64)
        norm = np.linalg.norm(z_gaze, axis=axis, keepdims=True)
        norm = np.where(norm < ZERO_ROW_EPS, 1.0, norm)
    return z_gaze / norm
