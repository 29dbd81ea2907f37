"""Procedural synthetic people and a stylized two-eye renderer.

Each person has a fixed appearance and a small anatomical offset: the eyeball
shown in the image points along ``R(gaze) @ R(offset) @ (0, 0, 1)`` while the
label records the true ``gaze``. Relative rotations between two samples of the
same person are therefore exact, but a person-independent estimator is off by
that person's offset.

The renderer is analytic (soft-edged ellipses and a smooth per-person skin
texture) and vectorized over samples.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InvalidArgumentError
from .geometry import euler_to_rotation, FRONTAL_AXIS

DEG = np.pi / 180.0

_EDGE_SOFTNESS = 0.5  # px, width of the logistic edge of every shape
_N_TEXTURE_WAVES = 6


@dataclass(frozen=True)
class RenderConfig:
    width: int = 64
    height: int = 16
    max_gaze_deg: float = 25.0
    max_head_deg: float = 20.0


@dataclass(frozen=True)
class SyntheticPerson:
    identifier: int
    iris_radius_frac: float  # iris radius as a fraction of aperture half-height
    aperture_half_width: float  # fraction of patch width
    aperture_half_height: float  # fraction of patch height
    aperture_exponent: float  # eyelid curvature, higher is rounder
    brightness: float
    contrast: float
    texture_seed: int
    offset: tuple = field(default=(0.0, 0.0))  # (pitch, yaw) radians

    def to_dict(self):
        d = asdict(self)
        d["offset"] = list(self.offset)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["offset"] = tuple(d["offset"])
        return cls(**d)


def sample_person(seed, identifier, min_offset_deg=2.0, max_offset_deg=5.0):
    """Draw the person ``identifier`` of the population defined by ``seed``.

    The anatomical offset has a uniformly random direction and a magnitude
    uniform in ``[min_offset_deg, max_offset_deg]``.
    """
    rng = np.random.default_rng([int(seed), int(identifier)])
    direction = rng.uniform(0.0, 2.0 * np.pi)
    magnitude = rng.uniform(min_offset_deg, max_offset_deg) * DEG
    return SyntheticPerson(
        identifier=int(identifier),
        iris_radius_frac=float(rng.uniform(0.70, 0.90)),
        aperture_half_width=float(rng.uniform(0.125, 0.150)),
        aperture_half_height=float(rng.uniform(0.26, 0.32)),
        aperture_exponent=float(rng.uniform(0.6, 1.0)),
        brightness=float(rng.uniform(0.40, 0.70)),
        contrast=float(rng.uniform(0.7, 1.0)),
        texture_seed=int(rng.integers(0, 2**31 - 1)),
        offset=(float(magnitude * np.sin(direction)), float(magnitude * np.cos(direction))),
    )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _skin_texture(person, u, v):
    rng = np.random.default_rng(person.texture_seed)
    freq = rng.uniform(0.05, 0.6, size=(_N_TEXTURE_WAVES, 2))
    phase = rng.uniform(0, 2 * np.pi, size=_N_TEXTURE_WAVES)
    amp = rng.uniform(0.01, 0.04, size=_N_TEXTURE_WAVES)
    out = np.zeros(np.broadcast(u, v).shape)
    for f, p, a in zip(freq, phase, amp):
        out += a * np.sin(f[0] * u + f[1] * v + p)
    return out


def _check_range(angles, limit_deg, what):
    if not np.all(np.isfinite(angles)):
        raise InvalidArgumentError(f"{what} angles must be finite")
    if np.any(np.abs(angles) > limit_deg * DEG + 1e-12):
        raise InvalidArgumentError(f"{what} angles exceed +/-{limit_deg} degrees")


def render(person, gaze, head, config=RenderConfig()):
    """Render one ``(height, width)`` image, or a stack for ``(N, 2)`` angle arrays."""
    gaze = np.asarray(gaze, dtype=np.float64)
    head = np.asarray(head, dtype=np.float64)
    single = gaze.ndim == 1
    gaze, head = np.atleast_2d(gaze), np.atleast_2d(head)
    _check_range(gaze, config.max_gaze_deg, "gaze")
    _check_range(head, config.max_head_deg, "head")
    if gaze.shape != head.shape:
        raise InvalidArgumentError("gaze and head arrays must have the same shape")

    W, H = config.width, config.height
    u = np.arange(W, dtype=np.float64)[None, None, :] + 0.5
    v = np.arange(H, dtype=np.float64)[None, :, None] + 0.5

    apparent = euler_to_rotation(gaze) @ euler_to_rotation(person.offset) @ FRONTAL_AXIS
    head_dir = euler_to_rotation(head) @ FRONTAL_AXIS
    hx = head_dir[:, 0][:, None, None]
    hy = head_dir[:, 1][:, None, None]
    gx = apparent[:, 0][:, None, None]
    gy = apparent[:, 1][:, None, None]

    shift_x = 0.12 * W * hx
    shift_y = 0.30 * H * hy
    aw = person.aperture_half_width * W
    ah = person.aperture_half_height * H * (1.0 - 0.25 * np.abs(hy))
    # iris travel per unit of the apparent gaze direction, kept inside the aperture
    travel_x = 1.3 * aw
    travel_y = 1.2 * ah
    iris_r = person.iris_radius_frac * ah
    cy = 0.5 * H + shift_y

    skin = person.brightness * (1.0 + 0.25 * hx * (u - 0.5 * W) / (0.5 * W))
    skin = skin + _skin_texture(person, u - shift_x, v - shift_y)
    sclera = np.minimum(person.brightness + 0.35 * person.contrast, 0.95)
    iris_level = sclera - 0.55 * person.contrast
    pupil_level = 0.05

    img = np.broadcast_to(skin, (len(gaze), H, W)).copy()
    for side in (-1.0, 1.0):
        # the eye nearer the camera looks a little wider
        half_w = aw * (1.0 + 0.2 * side * hx)
        cx = 0.5 * W + side * 0.25 * W * np.sqrt(1.0 - hx**2) + shift_x
        t = np.clip((u - cx) / half_w, -1.0, 1.0)
        # the upper lid follows vertical gaze; gy > 0 looks down
        dv = v - cy
        lid = np.where(dv < 0, 1.0 - 0.4 * gy, 1.0) * ah * (1.0 - t**2) ** person.aperture_exponent
        aperture = _sigmoid((lid - np.abs(dv)) / _EDGE_SOFTNESS) * _sigmoid(
            (half_w - np.abs(u - cx)) / _EDGE_SOFTNESS)

        brow = _sigmoid((0.8 - np.abs(v - (cy - 1.6 * ah))) / _EDGE_SOFTNESS) * _sigmoid(
            (1.1 * half_w - np.abs(u - cx)) / _EDGE_SOFTNESS)

        ix = cx + travel_x * gx
        iy = cy + travel_y * gy
        rx = iris_r * np.sqrt(np.maximum(1.0 - gx**2, 1e-6))
        ry = iris_r * np.sqrt(np.maximum(1.0 - gy**2, 1e-6))
        rho = np.sqrt(((u - ix) / rx) ** 2 + ((v - iy) / ry) ** 2)
        iris = _sigmoid((1.0 - rho) * iris_r / _EDGE_SOFTNESS)
        pupil = _sigmoid((0.45 - rho) * iris_r / _EDGE_SOFTNESS)

        eye = sclera * (1.0 - iris) + iris * (iris_level * (1.0 - pupil) + pupil_level * pupil)
        img = img * (1.0 - brow) + brow * 0.5 * img
        img = img * (1.0 - aperture) + aperture * eye

    img = np.clip(img, 0.0, 1.0)
    return img[0] if single else img


@dataclass
class Dataset:
    """Images with gaze/head labels and person identities, stored sample-major."""

    images: np.ndarray  # (N, H, W) float32 in [0, 1]
    gaze: np.ndarray  # (N, 2) pitch/yaw radians
    head: np.ndarray  # (N, 2)
    person_ids: np.ndarray  # (N,) int
    persons: list  # SyntheticPerson per identifier, or plain dicts

    @property
    def width(self):
        return self.images.shape[2]

    @property
    def height(self):
        return self.images.shape[1]

    def __len__(self):
        return len(self.person_ids)

    def identifiers(self):
        return sorted(set(int(i) for i in self.person_ids))

    def indices_of(self, person_id):
        return np.flatnonzero(self.person_ids == person_id)

    def subset(self, person_ids):
        keep = set(int(p) for p in person_ids)
        mask = np.isin(self.person_ids, list(keep))
        persons = [p for p in self.persons if _person_id(p) in keep]
        return Dataset(self.images[mask], self.gaze[mask], self.head[mask], self.person_ids[mask], persons)


def _person_id(p):
    return p.identifier if isinstance(p, SyntheticPerson) else int(p["identifier"])


def make_dataset(n_persons, samples_per_person, seed, config=RenderConfig(), label_noise_deg=0.0,
                 first_identifier=0, path=None):
    """Generate ``n_persons * samples_per_person`` labelled renders.

    Gaze and head angles are uniform over the configured ranges. With
    ``label_noise_deg > 0`` Gaussian noise is added to the stored gaze labels
    only. When ``path`` is given the dataset is also written there.
    """
    if n_persons < 1 or samples_per_person < 1:
        raise InvalidArgumentError("person and sample counts must be >= 1")
    images, gazes, heads, ids, persons = [], [], [], [], []
    for pid in range(first_identifier, first_identifier + n_persons):
        person = sample_person(seed, pid)
        rng = np.random.default_rng([int(seed), pid, 1])
        g = rng.uniform(-1, 1, size=(samples_per_person, 2)) * config.max_gaze_deg * DEG
        h = rng.uniform(-1, 1, size=(samples_per_person, 2)) * config.max_head_deg * DEG
        images.append(render(person, g, h, config).astype(np.float32))
        if label_noise_deg > 0:
            g = g + rng.normal(0.0, label_noise_deg * DEG, size=g.shape)
        gazes.append(g)
        heads.append(h)
        ids.append(np.full(samples_per_person, pid, dtype=np.int64))
        persons.append(person)
    ds = Dataset(np.concatenate(images), np.concatenate(gazes), np.concatenate(heads),
                 np.concatenate(ids), persons)
    if path is not None:
        from .harness.containers import write_dataset
        write_dataset(path, ds)
    return ds


def make_task(codes, gaze_vectors, k, l, seed, person_id=None):
    """Split one person's samples into disjoint calibration (k) and validation (l) sets."""
    from .metalearn import PersonTask

    n = len(codes)
    if k < 1 or l < 1:
        raise InvalidArgumentError("k and l must be >= 1")
    if k + l > n:
        raise InvalidArgumentError(f"person has {n} samples, need k + l = {k + l}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.permutation(n)[:k + l]
    c, v = idx[:k], idx[k:]
    return PersonTask(codes[c], gaze_vectors[c], codes[v], gaze_vectors[v], c, v, person_id)
