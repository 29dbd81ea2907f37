"""Disentangling transforming encoder-decoder (DT-ED) and its training loop.

The encoder maps an eye-region patch to a :class:`~fazekit.latent.LatentCode`;
the decoder maps a code back to a patch. During training the gaze and head
sub-codes of sample ``a`` are rotated by the ground-truth relative rotations
to sample ``b`` of the same person, and the decoder has to reproduce ``b``.
"""

import logging
import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import InvalidArgumentError, ConfigError, NumericalError
from .geometry import euler_to_rotation, gaze_vector_from_euler
from .latent import LatentCode, rotate_code, normalize_gaze_code
from .losses import recon_l1, gaze_angular_loss, EC_VARIANTS

log = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01


@dataclass
class DtedArch:
    width: int = 64
    height: int = 16
    f_app: int = 64
    f_gaze: int = 2
    f_head: int = 16
    channels: tuple = (16, 32, 64)
    gaze_hidden: int = 64
    normalize_along: str = "rows"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        scale = 2 ** len(self.channels)
        if self.width % scale or self.height % scale:
            raise ConfigError(f"patch {self.width}x{self.height} is not divisible by {scale} "
                              f"for {len(self.channels)} downsampling stages")

    @property
    def latent_size(self):
        return self.f_app + 3 * self.f_gaze + 3 * self.f_head

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class TrainingSchedule:
    lambda_recon: float = 1.0
    lambda_ec: float = 2.0
    lambda_gaze: float = 0.1
    ec_ramp_budget: int = 20_000  # samples
    ec_variant: str = "person"  # person | independent | triplet
    triplet_margin: float = 0.2
    rotate_codes: bool = True  # False gives a plain autoencoder
    base_lr: float = 5e-4
    warmup_budget: int = 20_000  # samples
    weight_decay: float = 1e-4
    epochs: int = 50
    batch_size: int = 32

    def lambda_ec_at(self, samples_seen):
        if self.ec_ramp_budget <= 0:
            return self.lambda_ec
        return self.lambda_ec * min(1.0, samples_seen / self.ec_ramp_budget)

    def lr_at(self, samples_seen):
        if self.warmup_budget <= 0:
            return self.base_lr
        return self.base_lr * min(1.0, (samples_seen + self.batch_size) / self.warmup_budget)


def mlp_apply(params, z_gaze, normalize_along="rows"):
    """Gaze MLP as a pure function of ``params`` (``w1, b1, w2, b2``).

    ``z_gaze`` is ``(..., 3, F_g)``. Params may carry an extra leading axis to
    evaluate several estimators at once, in which case ``z_gaze`` must carry
    the same leading axis. Returns unit 3-vectors.
    """
    x = normalize_gaze_code(z_gaze, along=normalize_along).flatten(-2)
    h = F.selu(x @ params["w1"].transpose(-1, -2) + params["b1"].unsqueeze(-2))
    out = h @ params["w2"].transpose(-1, -2) + params["b2"].unsqueeze(-2)
    return out / torch.linalg.vector_norm(out, dim=-1, keepdim=True)


class GazeMLP(nn.Module):
    """One hidden SELU layer mapping a gaze sub-code to a unit gaze vector."""

    def __init__(self, f_gaze=2, hidden=64, normalize_along="rows"):
        super().__init__()
        d = 3 * f_gaze
        self.normalize_along = normalize_along
        # lecun-normal (fan-in) init suits SELU
        self.w1 = nn.Parameter(torch.randn(hidden, d) / math.sqrt(d))
        self.b1 = nn.Parameter(torch.zeros(hidden))
        self.w2 = nn.Parameter(torch.randn(3, hidden) / math.sqrt(hidden))
        self.b2 = nn.Parameter(torch.zeros(3))

    def params(self):
        return {k: v for k, v in self.named_parameters()}

    def forward(self, z_gaze):
        single = z_gaze.dim() == 2
        if single:
            z_gaze = z_gaze.unsqueeze(0)
        out = mlp_apply(self.params(), z_gaze, self.normalize_along)
        return out[0] if single else out


def _conv(cin, cout, stride):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


class DTED(nn.Module):
    def __init__(self, arch=DtedArch()):
        super().__init__()
        self.arch = arch
        ch = arch.channels
        n = len(ch)
        self.bottom = (ch[-1], arch.height // 2**n, arch.width // 2**n)

        enc = [_conv(1, ch[0], 1), nn.LeakyReLU(LEAKY_SLOPE)]
        prev = ch[0]
        for c in ch:
            enc += [_conv(prev, c, 2), nn.LeakyReLU(LEAKY_SLOPE)]
            prev = c
        self.encoder_conv = nn.Sequential(*enc)
        self.encoder_fc = nn.Linear(int(np.prod(self.bottom)), arch.latent_size)

        self.decoder_fc = nn.Linear(arch.latent_size, int(np.prod(self.bottom)))
        dec = []
        for c in reversed(ch[:-1]):
            dec += [nn.ConvTranspose2d(prev, c, 4, stride=2, padding=1), nn.LeakyReLU(LEAKY_SLOPE)]
            prev = c
        dec += [nn.ConvTranspose2d(prev, ch[0], 4, stride=2, padding=1), nn.LeakyReLU(LEAKY_SLOPE),
                _conv(ch[0], 1, 1)]
        self.decoder_conv = nn.Sequential(*dec)

        self.gaze_mlp = GazeMLP(arch.f_gaze, arch.gaze_hidden, arch.normalize_along)
        self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                nn.init.kaiming_normal_(m.weight, a=LEAKY_SLOPE, nonlinearity="leaky_relu")
                nn.init.zeros_(m.bias)

    def _check_images(self, x):
        a = self.arch
        if x.shape[-2:] != (a.height, a.width):
            raise ConfigError(f"expected {a.height}x{a.width} patches, got {tuple(x.shape[-2:])}")

    def encode(self, x):
        """``(B, H, W)`` or ``(B, 1, H, W)`` patches to a batched LatentCode."""
        self._check_images(x)
        if x.dim() == 3:
            x = x.unsqueeze(1)
        h = self.encoder_conv(x).flatten(1)
        flat = self.encoder_fc(h)
        a = self.arch
        return LatentCode.unflatten(flat, a.f_app, a.f_gaze, a.f_head)

    def decode(self, z):
        """Batched LatentCode to ``(B, H, W)`` patches in [0, 1]."""
        a = self.arch
        if z.dims != (a.f_app, a.f_gaze, a.f_head):
            raise ConfigError(f"latent dims {z.dims} do not match {(a.f_app, a.f_gaze, a.f_head)}")
        h = F.leaky_relu(self.decoder_fc(z.flatten()), LEAKY_SLOPE)
        h = h.view(-1, *self.bottom)
        return torch.sigmoid(self.decoder_conv(h)).squeeze(1)

    def predict_gaze(self, z_gaze):
        return self.gaze_mlp(z_gaze)

    def n_parameters(self):
        return sum(p.numel() for p in self.parameters())


@dataclass
class PairBatch:
    """B samples where ``partner[i]`` indexes the same-person sample paired with ``i``."""

    images: torch.Tensor  # (B, H, W)
    r_gaze: torch.Tensor  # (B, 3, 3)
    r_head: torch.Tensor  # (B, 3, 3)
    gaze: torch.Tensor  # (B, 3) unit vectors
    ids: torch.Tensor  # (B,)
    partner: torch.Tensor  # (B,)


def make_pair_batch(images, gaze_angles, head_angles, ids, pairs, dtype=torch.float32):
    """Build a :class:`PairBatch` from sample-index pairs ``[(a, b), ...]``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    idx = pairs.reshape(-1)  # a0, b0, a1, b1, ...
    if np.any(ids[pairs[:, 0]] != ids[pairs[:, 1]]):
        raise InvalidArgumentError("pair members must share a person identity")
    partner = np.arange(len(idx)) ^ 1
    t = lambda a: torch.as_tensor(np.asarray(a), dtype=dtype)
    return PairBatch(
        images=t(images[idx]),
        r_gaze=t(euler_to_rotation(gaze_angles[idx])),
        r_head=t(euler_to_rotation(head_angles[idx])),
        gaze=t(gaze_vector_from_euler(gaze_angles[idx])),
        ids=torch.as_tensor(ids[idx]),
        partner=torch.as_tensor(partner),
    )


def dted_losses(model, batch, sched, samples_seen=None):
    """Loss terms for one pair batch. Returns ``(total, {recon, ec, gaze, lambda_ec})``."""
    if not torch.equal(batch.ids, batch.ids[batch.partner]):
        raise InvalidArgumentError("pair members must share a person identity")
    z = model.encode(batch.images)
    if sched.rotate_codes:
        p = batch.partner
        r_g = batch.r_gaze[p] @ batch.r_gaze.transpose(-1, -2)
        r_h = batch.r_head[p] @ batch.r_head.transpose(-1, -2)
        x_hat = model.decode(rotate_code(z, r_g, r_h))
        recon = recon_l1(batch.images[p], x_hat)
    else:
        recon = recon_l1(batch.images, model.decode(z))

    lam_ec = sched.lambda_ec if samples_seen is None else sched.lambda_ec_at(samples_seen)
    if sched.lambda_ec > 0:
        if sched.ec_variant == "triplet":
            ec = EC_VARIANTS["triplet"](z.gaze, batch.r_gaze, batch.ids, sched.triplet_margin)
        else:
            ec = EC_VARIANTS[sched.ec_variant](z.gaze, batch.r_gaze, batch.ids)
    else:
        ec = recon.new_zeros(())
    gaze = gaze_angular_loss(model.predict_gaze(z.gaze), batch.gaze)

    total = sched.lambda_recon * recon + lam_ec * ec + sched.lambda_gaze * gaze
    return total, {"recon": recon, "ec": ec, "gaze": gaze, "lambda_ec": lam_ec}


def dted_train_step(model, optimizer, batch, sched, samples_seen):
    """One optimizer step. Returns the float loss components."""
    for group in optimizer.param_groups:
        group["lr"] = sched.lr_at(samples_seen)
    optimizer.zero_grad()
    total, parts = dted_losses(model, batch, sched, samples_seen)
    if not torch.isfinite(total):
        raise NumericalError(f"non-finite DT-ED loss after {samples_seen} samples")
    total.backward()
    optimizer.step()
    return {"total": total.item(), **{k: float(parts[k].detach()) for k in ("recon", "ec", "gaze")}}


def epoch_pairs(ids, rng, pairs_per_batch):
    """Batches of same-person index pairs covering each person's samples once.

    Each batch draws its pairs from distinct persons while enough persons
    still have unused pairs.
    """
    queues = {}
    for pid in np.unique(ids):
        members = rng.permutation(np.flatnonzero(ids == pid))
        n = len(members) // 2 * 2
        if n:
            queues[int(pid)] = list(members[:n].reshape(-1, 2))
    batches = []
    while queues:
        live = sorted(queues)
        chosen = rng.choice(live, size=min(pairs_per_batch, len(live)), replace=False)
        batch = []
        for pid in chosen:
            batch.append(queues[int(pid)].pop())
            if not queues[int(pid)]:
                del queues[int(pid)]
        batches.append(np.stack(batch))
    return batches


def train_dted(dataset, sched=TrainingSchedule(), arch=None, seed=0, on_epoch=None):
    """Train a DT-ED on ``dataset``. Returns ``(model, per-epoch loss log)``."""
    if arch is None:
        arch = DtedArch(width=dataset.width, height=dataset.height)
    ids = np.asarray(dataset.person_ids)
    counts = np.unique(ids, return_counts=True)[1]
    if not np.any(counts >= 2):
        raise InvalidArgumentError("dataset has no person with two samples; cannot form pairs")

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = DTED(arch)
    optimizer = torch.optim.Adam(model.parameters(), lr=sched.base_lr, weight_decay=sched.weight_decay)
    images = np.asarray(dataset.images, dtype=np.float32)

    history = []
    seen = 0
    for epoch in range(sched.epochs):
        sums = {"total": 0.0, "recon": 0.0, "ec": 0.0, "gaze": 0.0}
        batches = epoch_pairs(ids, rng, max(1, sched.batch_size // 2))
        model.train()
        for pairs in batches:
            batch = make_pair_batch(images, dataset.gaze, dataset.head, ids, pairs)
            parts = dted_train_step(model, optimizer, batch, sched, seen)
            seen += len(batch.ids)
            for key in sums:
                sums[key] += parts[key]
        row = {"epoch": epoch, **{k: v / len(batches) for k, v in sums.items()},
               "lambda_ec": sched.lambda_ec_at(seen)}
        history.append(row)
        log.info("dted epoch %d total %.4f recon %.4f ec %.4f gaze %.4f", epoch, row["total"],
                 row["recon"], row["ec"], row["gaze"])
        if on_epoch is not None:
            on_epoch(row)
    model.eval()
    return model, history


@torch.no_grad()
def encode_images(model, images, batch_size=512):
    """Encode a stack of patches; returns a LatentCode of numpy arrays."""
    parts = []
    for start in range(0, len(images), batch_size):
        x = torch.as_tensor(np.asarray(images[start:start + batch_size]), dtype=torch.float32)
        parts.append(model.encode(x))
    cat = lambda xs: torch.cat(xs).numpy()
    return LatentCode(cat([p.appearance for p in parts]), cat([p.gaze for p in parts]),
                      cat([p.head for p in parts]))


@torch.no_grad()
def redirect(model, image, gaze_from, head_from, gaze_to, head_to):
    """Re-render ``image`` with new gaze/head angles by rotating its latent code.

    ``gaze_to``/``head_to`` may be ``(N, 2)`` arrays; returns ``(N, H, W)``.
    """
    gaze_to = np.atleast_2d(gaze_to)
    head_to = np.atleast_2d(head_to)
    x = torch.as_tensor(np.asarray(image)[None], dtype=torch.float32)
    z = model.encode(x)
    r_g = torch.as_tensor(euler_to_rotation(gaze_to) @ euler_to_rotation(gaze_from).T, dtype=torch.float32)
    r_h = torch.as_tensor(euler_to_rotation(head_to) @ euler_to_rotation(head_from).T, dtype=torch.float32)
    n = len(gaze_to)
    z = LatentCode(z.appearance.expand(n, -1), z.gaze.expand(n, -1, -1), z.head.expand(n, -1, -1))
    return model.decode(rotate_code(z, r_g, r_h)).numpy()
