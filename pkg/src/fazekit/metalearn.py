"""MAML meta-training of the gaze estimator and few-shot personalization.

Estimator weights are plain dicts of tensors (``w1, b1, w2, b2``) evaluated
with :func:`fazekit.network.mlp_apply`, so the inner loop can be
differentiated through without touching module state.

The MAML core (:func:`inner_adapt`, :func:`meta_gradient`) takes arbitrary
loss closures and is not specific to gaze.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import InvalidArgumentError, NumericalError
from .losses import angular_error
from .network import mlp_apply

log = logging.getLogger(__name__)


@dataclass
class PersonTask:
    """Disjoint calibration and validation samples of one person."""

    calib_codes: np.ndarray  # (k, 3, F_g)
    calib_gaze: np.ndarray  # (k, 3)
    valid_codes: np.ndarray  # (l, 3, F_g)
    valid_gaze: np.ndarray  # (l, 3)
    calib_index: np.ndarray = None
    valid_index: np.ndarray = None
    person_id: int = None

    @property
    def k(self):
        return len(self.calib_codes)


@dataclass
class MetaConfig:
    inner_lr: float = 1e-5  # alpha, also used for final adaptation
    inner_steps: int = 5
    outer_lr: float = 1e-3  # eta
    k: int = 9
    l: int = 100
    meta_iterations: int = 1000
    final_steps: int = 1000
    second_order: bool = True
    tasks_per_step: int = 1
    adam_betas: tuple = field(default=(0.9, 0.999))
    adam_eps: float = 1e-8
    normalize_along: str = "rows"
    validate_every: int = 0  # 0 disables meta-validation
    patience: int = 0  # early stopping in validation rounds; 0 disables


def clone_params(params, requires_grad=False, dtype=None):
    out = {}
    for k, v in params.items():
        t = v.detach().clone()
        if dtype is not None:
            t = t.to(dtype)
        out[k] = t.requires_grad_(requires_grad)
    return out


def _t(x, dtype):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x), dtype=dtype)


def task_loss(params, codes, gaze, normalize_along="rows"):
    """Mean angular error (radians) of the estimator on ``(codes, gaze)`` samples."""
    dtype = params["w1"].dtype
    codes, gaze = _t(codes, dtype), _t(gaze, dtype)
    if codes.shape[-3] == 0:
        raise InvalidArgumentError("task loss needs at least one sample")
    return angular_error(mlp_apply(params, codes, normalize_along), gaze).mean(-1)


def inner_adapt(params, loss_fn, lr, steps, create_graph=False):
    """``steps`` full-batch gradient-descent steps ``p <- p - lr * grad loss_fn(p)``.

    With ``create_graph=True`` the result stays differentiable with respect to
    the incoming ``params`` (second-order MAML). Otherwise inner gradients are
    treated as constants.
    """
    names = list(params)
    current = dict(params)
    for _ in range(steps):
        loss = loss_fn(current)
        grads = torch.autograd.grad(loss, [current[n] for n in names], create_graph=create_graph,
                                    allow_unused=True)
        current = {n: current[n] if g is None else current[n] - lr * (g if create_graph else g.detach())
                   for n, g in zip(names, grads)}
    return current


def meta_gradient(params, calib_loss_fn, valid_loss_fn, lr, steps, second_order=True):
    """Gradient of ``valid_loss_fn(inner_adapt(params))`` with respect to ``params``.

    ``params`` must be leaf tensors requiring grad. Returns ``(loss, grads)``.
    """
    names = list(params)
    if second_order:
        adapted = inner_adapt(params, calib_loss_fn, lr, steps, create_graph=True)
        loss = valid_loss_fn(adapted)
        grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    else:
        # first-order: d(adapted)/d(params) taken as the identity
        adapted = inner_adapt(params, calib_loss_fn, lr, steps, create_graph=False)
        adapted = {n: v.detach().requires_grad_(True) for n, v in adapted.items()}
        loss = valid_loss_fn(adapted)
        grads = torch.autograd.grad(loss, [adapted[n] for n in names], allow_unused=True)
    grads = {n: torch.zeros_like(params[n]) if g is None else g for n, g in zip(names, grads)}
    return loss.detach(), grads


def _task_closures(task, cfg, dtype):
    cc, cg = _t(task.calib_codes, dtype), _t(task.calib_gaze, dtype)
    vc, vg = _t(task.valid_codes, dtype), _t(task.valid_gaze, dtype)
    calib = lambda p: task_loss(p, cc, cg, cfg.normalize_along)
    valid = lambda p: task_loss(p, vc, vg, cfg.normalize_along)
    return calib, valid


def make_optimizer(params, cfg):
    return torch.optim.Adam(list(params.values()), lr=cfg.outer_lr, betas=tuple(cfg.adam_betas),
                            eps=cfg.adam_eps)


def outer_step(params, tasks, cfg, optimizer):
    """One meta-update of ``params`` (in place) from one task or a list of tasks.

    Returns the mean post-adaptation validation loss.
    """
    if isinstance(tasks, PersonTask):
        tasks = [tasks]
    dtype = params["w1"].dtype
    total = {n: torch.zeros_like(v) for n, v in params.items()}
    losses = []
    for task in tasks:
        calib, valid = _task_closures(task, cfg, dtype)
        loss, grads = meta_gradient(params, calib, valid, cfg.inner_lr, cfg.inner_steps, cfg.second_order)
        losses.append(float(loss))
        for n in total:
            total[n] += grads[n] / len(tasks)
    optimizer.zero_grad()
    for n, p in params.items():
        p.grad = total[n]
    optimizer.step()
    return float(np.mean(losses))


def adapted_validation_loss(params, tasks, cfg, steps=None):
    """Mean validation loss after adapting to each task's calibration set."""
    out = []
    for task in tasks:
        adapted = personalize(params, task.calib_codes, task.calib_gaze, cfg,
                              steps=cfg.inner_steps if steps is None else steps)
        with torch.no_grad():
            out.append(float(task_loss(adapted, task.valid_codes, task.valid_gaze, cfg.normalize_along)))
    return float(np.mean(out))


def meta_train(persons, cfg, seed, init_params, exclude_ids=(), validation_tasks=None, on_log=None):
    """Meta-train estimator weights on per-person ``(codes, gaze_vectors)`` data.

    ``persons`` maps person id to a ``(codes, gaze)`` pair. Persons with fewer
    than ``k + l`` samples are skipped with a warning; any id in
    ``exclude_ids`` (evaluation persons) raises. Returns detached weights and
    the log of ``(iteration, train_loss, validation_loss)`` rows.
    """
    from .synthdata import make_task

    overlap = set(int(p) for p in persons) & set(int(p) for p in exclude_ids)
    if overlap:
        raise InvalidArgumentError(f"meta-training persons overlap evaluation persons: {sorted(overlap)}")
    eligible = []
    for pid in sorted(persons):
        if len(persons[pid][0]) < cfg.k + cfg.l:
            warnings.warn(f"person {pid} has fewer than k + l = {cfg.k + cfg.l} samples; skipped")
        else:
            eligible.append(pid)
    params = clone_params(init_params, requires_grad=True)
    history = []
    if cfg.meta_iterations <= 0:
        return clone_params(params), history
    if not eligible:
        raise InvalidArgumentError("no person has enough samples for meta-training")

    rng = np.random.default_rng(seed)
    optimizer = make_optimizer(params, cfg)
    best, best_params, stale = np.inf, None, 0
    running = []
    for it in range(cfg.meta_iterations):
        tasks = []
        for _ in range(cfg.tasks_per_step):
            pid = eligible[rng.integers(len(eligible))]
            codes, gaze = persons[pid]
            tasks.append(make_task(codes, gaze, cfg.k, cfg.l, rng, person_id=pid))
        loss = outer_step(params, tasks, cfg, optimizer)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite meta-training loss at iteration {it}")
        running.append(loss)
        last = it == cfg.meta_iterations - 1
        if cfg.validate_every and ((it + 1) % cfg.validate_every == 0 or last):
            val = adapted_validation_loss(params, validation_tasks, cfg) if validation_tasks else float("nan")
            row = (it + 1, float(np.mean(running)), val)
            running = []
            history.append(row)
            log.info("meta iter %d train %.4f val %.4f", *row)
            if on_log is not None:
                on_log(row)
            if validation_tasks and cfg.patience:
                if val < best:
                    best, best_params, stale = val, clone_params(params), 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        log.info("meta-validation stopped improving; early stop at %d", it + 1)
                        return best_params, history
    return clone_params(params), history


def personalize(theta, calib_codes, calib_gaze, cfg, steps=None, lr=None):
    """Gradient descent on the calibration loss starting from ``theta``.

    Several people can be adapted at once by passing ``calib_codes`` of shape
    ``(P, k, 3, F_g)`` and ``calib_gaze`` of shape ``(P, k, 3)``; the returned
    weights then carry a leading axis of size P. Only the given calibration
    samples are used.
    """
    steps = cfg.final_steps if steps is None else steps
    lr = cfg.inner_lr if lr is None else lr
    dtype = theta["w1"].dtype
    codes, gaze = _t(calib_codes, dtype), _t(calib_gaze, dtype)
    batched = codes.dim() == 4
    params = clone_params(theta)
    if batched:
        params = {n: v.unsqueeze(0).repeat(codes.shape[0], *([1] * v.dim())) for n, v in params.items()}
    if steps <= 0 or lr == 0:
        return params
    params = {n: v.requires_grad_(True) for n, v in params.items()}
    names = list(params)
    for _ in range(steps):
        loss = task_loss(params, codes, gaze, cfg.normalize_along).sum()
        grads = torch.autograd.grad(loss, [params[n] for n in names])
        with torch.no_grad():
            for n, g in zip(names, grads):
                params[n] -= lr * g
    return clone_params(params)


def finetune_baseline(theta_pi, calib_codes, calib_gaze, steps, rate, normalize_along="rows"):
    """Plain fine-tuning of person-independent weights; same mechanics as :func:`personalize`."""
    cfg = MetaConfig(normalize_along=normalize_along)
    return personalize(theta_pi, calib_codes, calib_gaze, cfg, steps=steps, lr=rate)


@torch.no_grad()
def predict(params, codes, normalize_along="rows"):
    dtype = params["w1"].dtype
    return mlp_apply(params, _t(codes, dtype), normalize_along).numpy()
