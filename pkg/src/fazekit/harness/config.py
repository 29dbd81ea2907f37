"""Experiment configuration: an INI-style file with typed keys.

Sections and keys mirror the dataclasses below; every key is optional and
falls back to the dataclass default. Example::

    [data]
    n_train_persons = 20
    samples_per_person = 200

    [dted]
    epochs = 30
    channels = 8, 16, 32

    [meta]
    meta_iterations = 2000

    [eval]
    methods = faze, finetune
    k_values = 0, 1, 3, 9

``seed`` in any section can be overridden for all sections at once with
:meth:`ExperimentConfig.with_seed`.
"""

import configparser
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..metalearn import MetaConfig
from ..network import DtedArch, TrainingSchedule
from ..baselines import DifferentialConfig


@dataclass
class DataSection:
    seed: int = 0
    n_train_persons: int = 20
    n_test_persons: int = 5
    samples_per_person: int = 200
    width: int = 64
    height: int = 16
    max_gaze_deg: float = 25.0
    max_head_deg: float = 20.0
    label_noise_deg: float = 0.0
    # first calibration_pool samples of a test person are the calibration pool,
    # the remaining ones are the fixed validation split
    calibration_pool: int = 100


@dataclass
class DtedSection:
    seed: int = 0
    # architecture
    f_app: int = 64
    f_gaze: int = 2
    f_head: int = 16
    channels: tuple = (8, 16, 32)
    gaze_hidden: int = 64
    normalize_along: str = "rows"
    # schedule
    lambda_recon: float = 1.0
    lambda_ec: float = 2.0
    lambda_gaze: float = 0.1
    ec_ramp_budget: int = 20_000
    ec_variant: str = "person"
    triplet_margin: float = 0.2
    rotate_codes: bool = True
    base_lr: float = 5e-4
    warmup_budget: int = 20_000
    weight_decay: float = 1e-4
    epochs: int = 50
    batch_size: int = 32

    def arch(self, width, height):
        return DtedArch(width=width, height=height, f_app=self.f_app, f_gaze=self.f_gaze, f_head=self.f_head,
                        channels=self.channels, gaze_hidden=self.gaze_hidden,
                        normalize_along=self.normalize_along)

    def schedule(self):
        names = {f.name for f in dataclasses.fields(TrainingSchedule)}
        return TrainingSchedule(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})


@dataclass
class MetaSection:
    seed: int = 0
    inner_lr: float = 1e-5
    inner_steps: int = 5
    outer_lr: float = 1e-3
    l: int = 100
    meta_iterations: int = 2000
    final_steps: int = 1000
    second_order: bool = True
    tasks_per_step: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def meta_config(self, k, normalize_along="rows"):
        return MetaConfig(inner_lr=self.inner_lr, inner_steps=self.inner_steps, outer_lr=self.outer_lr,
                          k=k, l=self.l, meta_iterations=self.meta_iterations, final_steps=self.final_steps,
                          second_order=self.second_order, tasks_per_step=self.tasks_per_step,
                          adam_betas=(self.adam_beta1, self.adam_beta2), adam_eps=self.adam_eps,
                          normalize_along=normalize_along)


@dataclass
class EvalSection:
    seed: int = 0
    methods: tuple = ("faze", "finetune")
    k_values: tuple = (0, 1, 3, 9)
    trials: int = 10
    # fine-tuning baseline; 0 means "same as meta.final_steps / meta.inner_lr"
    finetune_steps: int = 0
    finetune_lr: float = 0.0
    differential_steps: int = 3000
    differential_lr: float = 1e-3
    plot: bool = False
    # DT-ED variants run by the ablate stage (see experiment.ABLATIONS)
    ablations: tuple = ("full", "recon_gaze", "recon_only")

    def differential(self):
        return DifferentialConfig(steps=self.differential_steps, lr=self.differential_lr)


SECTIONS = {"data": DataSection, "dted": DtedSection, "meta": MetaSection, "eval": EvalSection}


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    dted: DtedSection = field(default_factory=DtedSection)
    meta: MetaSection = field(default_factory=MetaSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self):
        return {name: _plain(dataclasses.asdict(getattr(self, name))) for name in SECTIONS}

    def section_hash(self, *names):
        d = self.to_dict()
        blob = json.dumps({n: d[n] for n in names}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def config_hash(self):
        return self.section_hash(*SECTIONS)

    def with_seed(self, seed):
        return ExperimentConfig(**{n: dataclasses.replace(getattr(self, n), seed=int(seed)) for n in SECTIONS})

    def replace(self, **sections):
        """Copy with some keys changed, e.g. ``replace(dted={"lambda_ec": 0})``."""
        out = {n: getattr(self, n) for n in SECTIONS}
        for name, changes in sections.items():
            out[name] = dataclasses.replace(out[name], **_coerce_all(SECTIONS[name], changes))
        return ExperimentConfig(**out)

    def dumps(self):
        lines = []
        for name, values in self.to_dict().items():
            lines.append(f"[{name}]")
            for k, v in values.items():
                if isinstance(v, list):
                    v = ", ".join(str(x) for x in v)
                elif isinstance(v, bool):
                    v = "true" if v else "false"
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


def _plain(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _coerce(cls, key, value):
    hints = typing.get_type_hints(cls)
    if key not in hints:
        raise ConfigError(f"unknown key '{key}' for section [{_section_name(cls)}]")
    kind = hints[key]
    default = next(f.default for f in dataclasses.fields(cls) if f.name == key)
    if not isinstance(value, str):
        return tuple(value) if kind is tuple else kind(value)
    text = value.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is tuple:
            items = [s.strip() for s in text.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        if kind is int:
            return int(text.replace("_", ""))
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"[{_section_name(cls)}] {key}: cannot parse {value!r} as {kind.__name__}") from None


def _coerce_all(cls, values):
    return {k: _coerce(cls, k, v) for k, v in values.items()}


def _section_name(cls):
    return next(n for n, c in SECTIONS.items() if c is cls)


def loads(text):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]; expected one of {sorted(SECTIONS)}")
        cls = SECTIONS[name]
        sections[name] = cls(**_coerce_all(cls, dict(parser[name])))
    cfg = ExperimentConfig(**sections)
    _validate(cfg)
    return cfg


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)


def _validate(cfg):
    d = cfg.data
    if d.n_train_persons < 1 or d.n_test_persons < 1 or d.samples_per_person < 2:
        raise ConfigError("need at least one train and one test person with two samples each")
    if not 0 < d.calibration_pool < d.samples_per_person:
        raise ConfigError("calibration_pool must leave samples for validation")
    if cfg.dted.ec_variant not in ("person", "independent", "triplet"):
        raise ConfigError(f"unknown ec_variant {cfg.dted.ec_variant!r}")
    if cfg.dted.normalize_along not in ("rows", "columns"):
        raise ConfigError(f"unknown normalize_along {cfg.dted.normalize_along!r}")
    if cfg.eval.trials < 1:
        raise ConfigError("eval.trials must be >= 1")
    if any(k < 0 for k in cfg.eval.k_values):
        raise ConfigError("k values must be >= 0")
    if any(k > d.calibration_pool for k in cfg.eval.k_values):
        raise ConfigError("k values cannot exceed the calibration pool")
    from .experiment import ABLATIONS, METHODS
    unknown = set(cfg.eval.methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"unknown eval methods {sorted(unknown)}; expected some of {list(METHODS)}")
    unknown = set(cfg.eval.ablations) - set(ABLATIONS)
    if unknown:
        raise ConfigError(f"unknown ablations {sorted(unknown)}; expected some of {list(ABLATIONS)}")
