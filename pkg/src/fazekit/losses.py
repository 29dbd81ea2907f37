"""Training losses for the disentangling encoder-decoder.

All losses are differentiable torch functions returning radians (angular
terms) or mean absolute pixel error (reconstruction).
"""

import warnings

import torch

from .errors import InvalidArgumentError
from .geometry import COS_CLAMP
from .latent import frontalize_gaze_code


def _tensor(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def recon_l1(target, predicted):
    """Mean absolute pixel difference."""
    target, predicted = _tensor(target), _tensor(predicted)
    if target.shape != predicted.shape:
        raise InvalidArgumentError(f"image shapes differ: {tuple(target.shape)} vs {tuple(predicted.shape)}")
    return (predicted - target).abs().mean()


def _clamped_arccos(cos):
    return torch.acos(torch.clamp(cos, -1.0 + COS_CLAMP, 1.0 - COS_CLAMP))


def angular_error(predicted, target):
    """Per-vector angle between ``predicted`` and ``target`` along the last axis."""
    predicted, target = _tensor(predicted), _tensor(target)
    np_ = torch.linalg.vector_norm(predicted, dim=-1)
    nt = torch.linalg.vector_norm(target, dim=-1)
    if bool((np_ == 0).any()) or bool((nt == 0).any()):
        raise InvalidArgumentError("angular error is undefined for zero vectors")
    cos = (predicted * target).sum(-1) / (np_ * nt)
    return _clamped_arccos(cos)


def gaze_angular_loss(predicted, target):
    """Mean angular gaze error over a batch (or the error of a single pair)."""
    return angular_error(predicted, target).mean()


def mean_columnwise_angular_distance(a, b):
    """Average over columns of the angle between matching 3D columns of ``a`` and ``b``.

    Inputs are ``(..., 3, F)`` and broadcast against each other.
    """
    a, b = _tensor(a), _tensor(b)
    na = torch.linalg.vector_norm(a, dim=-2)
    nb = torch.linalg.vector_norm(b, dim=-2)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise InvalidArgumentError("column-wise angular distance is undefined for zero columns")
    cos = (a * b).sum(-2) / (na * nb)
    return _clamped_arccos(cos).mean(-1)


def pairwise_code_distances(z_gaze, r_gaze):
    """``(B, B)`` matrix of distances between frontalized gaze codes."""
    f = frontalize_gaze_code(_tensor(z_gaze), _tensor(r_gaze).to(_tensor(z_gaze).dtype))
    return mean_columnwise_angular_distance(f.unsqueeze(1), f.unsqueeze(0))


def _ids(ids, device):
    return torch.as_tensor(ids, device=device).reshape(-1)


def _masked_hardest(dist, mask, largest=True):
    """Per-anchor max (or min) of ``dist`` over ``mask``; first index wins ties."""
    fill = float("-inf") if largest else float("inf")
    masked = dist.masked_fill(~mask, fill)
    if largest:
        idx = masked.max(dim=1).indices
    else:
        idx = masked.min(dim=1).indices
    return dist.gather(1, idx.unsqueeze(1)).squeeze(1)


def _batch_hard_consistency(dist, mask):
    has_partner = mask.any(dim=1)
    if not bool(has_partner.any()):
        return dist.new_zeros(())
    hardest = _masked_hardest(dist, mask)
    return hardest[has_partner].mean()


def embedding_consistency_loss(z_gaze, r_gaze, ids):
    """Batch-hard intra-person consistency of frontalized gaze codes.

    For every sample with at least one same-identity partner, take the largest
    distance to such a partner; average those maxima. Samples without a
    partner are skipped.
    """
    dist = pairwise_code_distances(z_gaze, r_gaze)
    ids = _ids(ids, dist.device)
    eye = torch.eye(len(ids), dtype=torch.bool, device=dist.device)
    same = (ids.unsqueeze(0) == ids.unsqueeze(1)) & ~eye
    return _batch_hard_consistency(dist, same)


def person_independent_ec_loss(z_gaze, r_gaze, ids=None):
    """Like :func:`embedding_consistency_loss` but every other sample is a partner."""
    dist = pairwise_code_distances(z_gaze, r_gaze)
    n = dist.shape[0]
    others = ~torch.eye(n, dtype=torch.bool, device=dist.device)
    return _batch_hard_consistency(dist, others)


def triplet_ec_loss(z_gaze, r_gaze, ids, margin=0.2):
    """Batch-hard triplet loss on frontalized gaze codes.

    Anchors need both a same-identity and a different-identity sample. If no
    anchor qualifies the loss is zero and a ``RuntimeWarning`` is issued.
    """
    dist = pairwise_code_distances(z_gaze, r_gaze)
    ids = _ids(ids, dist.device)
    eye = torch.eye(len(ids), dtype=torch.bool, device=dist.device)
    same_id = ids.unsqueeze(0) == ids.unsqueeze(1)
    pos = same_id & ~eye
    neg = ~same_id
    valid = pos.any(dim=1) & neg.any(dim=1)
    if not bool(valid.any()):
        warnings.warn("triplet loss: batch has no valid triplet", RuntimeWarning, stacklevel=2)
        return dist.new_zeros(())
    hardest_pos = _masked_hardest(dist, pos, largest=True)
    hardest_neg = _masked_hardest(dist, neg, largest=False)
    hinge = torch.relu(hardest_pos - hardest_neg + margin)
    return hinge[valid].mean()


EC_VARIANTS = {
    "person": embedding_consistency_loss,
    "independent": person_independent_ec_loss,
    "triplet": triplet_ec_loss,
}
