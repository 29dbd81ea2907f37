"""Comparison methods: polynomial point-of-regard correction and differential gaze.

Both work on the same latent gaze codes as the meta-learned estimator.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import InvalidArgumentError, NoIntersectionError, NumericalError
from .latent import normalize_gaze_code

log = logging.getLogger(__name__)

# gaze origin used for point-of-regard conversion, mm in normalized camera space
DEFAULT_ORIGIN = np.array([0.0, 0.0, 600.0])

_DEGREE_TERMS = {0: 1, 1: 3, 2: 6, 3: 10}
RIDGE = 1e-6


def por_from_gaze(origin, direction):
    """Intersection of the ray ``origin + t * direction`` (t > 0) with the plane z = 0."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    dz = direction[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origin[..., 2] / dz
    if np.any(dz == 0) or np.any(~np.isfinite(t)) or np.any(t <= 0):
        raise NoIntersectionError("gaze ray is parallel to or points away from the z = 0 plane")
    return origin[..., :2] + t[..., None] * direction[..., :2]


def por_of_gaze_vector(g, origin=DEFAULT_ORIGIN):
    """Screen point looked at for gaze vectors in the frontal-axis convention.

    Gaze vectors point away from the camera (+z is frontal), so the ray toward
    the screen plane runs along ``-g``.
    """
    return por_from_gaze(origin, -np.asarray(g, dtype=np.float64))


def gaze_vector_of_por(por, origin=DEFAULT_ORIGIN):
    """Inverse of :func:`por_of_gaze_vector`."""
    por = np.asarray(por, dtype=np.float64)
    point = np.concatenate([por, np.zeros(por.shape[:-1] + (1,))], axis=-1)
    d = point - origin
    return -d / np.linalg.norm(d, axis=-1, keepdims=True)


def poly_terms(xy, degree=3):
    """Monomials ``1, x, y, x^2, xy, y^2, x^3, x^2 y, x y^2, y^3`` up to ``degree``."""
    xy = np.asarray(xy, dtype=np.float64)
    x, y = xy[..., 0], xy[..., 1]
    one = np.ones_like(x)
    cols = [one, x, y, x * x, x * y, y * y, x**3, x * x * y, x * y * y, y**3]
    return np.stack(cols[:_DEGREE_TERMS[degree]], axis=-1)


@dataclass
class Poly3Corrector:
    coef_x: np.ndarray  # 10 coefficients, unused high-order terms are zero
    coef_y: np.ndarray
    degree: int = 3
    scale: float = 1.0  # inputs are divided by this before evaluation
    residual: float = 0.0  # RMS fit residual, same units as the targets
    regularized: bool = False

    def __post_init__(self):
        self.coef_x = np.asarray(self.coef_x, dtype=np.float64)
        self.coef_y = np.asarray(self.coef_y, dtype=np.float64)
        if self.coef_x.shape != (10,) or self.coef_y.shape != (10,):
            raise InvalidArgumentError("a cubic corrector has exactly 10 coefficients per axis")


def fit_poly3(observed, targets):
    """Least-squares cubic correction from observed to target points.

    The polynomial models the residual ``target - observed``, so a corrected
    point is ``p + poly(p)``: a single sample gives a pure translation and
    identical inputs give the zero polynomial.

    With fewer than 10 samples the degree drops (3 -> 2 -> 1 -> 0) until the
    number of coefficients fits. A rank-deficient design is solved with a
    small ridge term and flagged as ``regularized``.
    """
    observed = np.asarray(observed, dtype=np.float64).reshape(-1, 2)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    n = len(observed)
    if n < 1 or len(targets) != n:
        raise InvalidArgumentError("need matching, non-empty observed and target point lists")
    degree = max(d for d, m in _DEGREE_TERMS.items() if m <= n)
    scale = float(np.max(np.abs(observed)))
    scale = scale if scale > 0 else 1.0
    A = poly_terms(observed / scale, degree)
    regularized = np.linalg.matrix_rank(A) < A.shape[1]
    if regularized:
        log.warning("degenerate calibration design (degree %d, %d samples); using ridge %.0e", degree, n, RIDGE)
        coef = np.linalg.solve(A.T @ A + RIDGE * np.eye(A.shape[1]), A.T @ (targets - observed))
    else:
        coef = np.linalg.lstsq(A, targets - observed, rcond=None)[0]
    resid = observed + A @ coef - targets
    full = np.zeros((10, 2))
    full[:len(coef)] = coef
    return Poly3Corrector(full[:, 0], full[:, 1], degree, scale,
                          float(np.sqrt(np.mean(np.sum(resid**2, axis=-1)))), bool(regularized))


def apply_poly3(c, por):
    por = np.asarray(por, dtype=np.float64)
    t = poly_terms(por / c.scale, 3)
    return por + np.stack([t @ c.coef_x, t @ c.coef_y], axis=-1)


class DifferentialNet(nn.Module):
    """Pairwise net: (query code, reference code) -> (d_pitch, d_yaw) = query - reference."""

    def __init__(self, f_gaze=2, hidden=64, normalize_along="rows"):
        super().__init__()
        d = 2 * 3 * f_gaze
        self.normalize_along = normalize_along
        self.fc1 = nn.Linear(d, hidden)
        self.fc2 = nn.Linear(hidden, 2)
        nn.init.normal_(self.fc1.weight, std=1 / math.sqrt(d))
        nn.init.normal_(self.fc2.weight, std=1 / math.sqrt(hidden))
        nn.init.zeros_(self.fc1.bias)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, query, reference):
        q = normalize_gaze_code(query, self.normalize_along).flatten(-2)
        r = normalize_gaze_code(reference, self.normalize_along).flatten(-2)
        return self.fc2(F.selu(self.fc1(torch.cat([q, r], dim=-1))))


@dataclass
class DifferentialConfig:
    steps: int = 3000
    batch_size: int = 256
    lr: float = 1e-3
    hidden: int = 64


@torch.no_grad()
def differential_predict(net, ref_codes, ref_angles, query_codes):
    """Average of ``y_ref + delta(query, ref)`` over all references.

    Returns ``(Q, 2)`` pitch/yaw angles for ``(Q, 3, F_g)`` query codes (or a
    single pair for a single ``(3, F_g)`` query).
    """
    ref_codes = torch.as_tensor(np.asarray(ref_codes), dtype=torch.float32)
    ref_angles = np.asarray(ref_angles, dtype=np.float64).reshape(-1, 2)
    if len(ref_codes) == 0:
        raise InvalidArgumentError("differential prediction needs at least one reference")
    q = torch.as_tensor(np.asarray(query_codes), dtype=torch.float32)
    single = q.dim() == 2
    if single:
        q = q[None]
    nq, nr = len(q), len(ref_codes)
    delta = net(q[:, None].expand(nq, nr, *q.shape[1:]), ref_codes[None].expand(nq, nr, *ref_codes.shape[1:]))
    est = (ref_angles[None] + delta.double().numpy()).mean(axis=1)
    return est[0] if single else est


def train_differential(codes, angles, ids, config=DifferentialConfig(), seed=0, f_gaze=None,
                       normalize_along="rows"):
    """Fit a :class:`DifferentialNet` on random same-person pairs.

    Returns ``(net, losses)`` where ``losses`` holds the mean absolute
    difference error (radians) of every 100 steps.
    """
    codes = np.asarray(codes, dtype=np.float32)
    angles = np.asarray(angles, dtype=np.float64)
    ids = np.asarray(ids)
    groups = [np.flatnonzero(ids == p) for p in np.unique(ids)]
    groups = [g for g in groups if len(g) >= 2]
    if not groups:
        raise InvalidArgumentError("differential training needs same-person pairs")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net = DifferentialNet(codes.shape[-1] if f_gaze is None else f_gaze, config.hidden, normalize_along)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    z = torch.as_tensor(codes)
    y = torch.as_tensor(angles, dtype=torch.float32)
    losses, window = [], []
    for step in range(config.steps):
        which = rng.integers(len(groups), size=config.batch_size)
        a = np.array([rng.choice(groups[w]) for w in which])
        b = np.array([rng.choice(groups[w]) for w in which])
        pred = net(z[b], z[a])
        loss = (pred - (y[b] - y[a])).abs().mean()
        if not torch.isfinite(loss):
            raise NumericalError(f"non-finite differential loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        window.append(loss.item())
        if len(window) == 100 or step == config.steps - 1:
            losses.append(float(np.mean(window)))
            window = []
    net.eval()
    return net, losses
