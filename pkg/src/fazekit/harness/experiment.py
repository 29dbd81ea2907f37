"""Cached experiment pipeline: gen-data -> train-dted -> train-adagen -> evaluate.

Every stage writes its artifacts under one output directory and records a
hash of the config sections it depends on in ``stages.json``. Rerunning a
stage whose key and outputs are unchanged is a cache hit and does nothing
(unless ``force``). Running a single stage needs the upstream artifacts to
exist already; a missing one raises :class:`DependencyError`.
"""

import hashlib
import json
import logging
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from ..baselines import DifferentialNet, train_differential
from ..errors import DependencyError, InvalidArgumentError
from ..geometry import angular_distance, gaze_vector_from_euler
from ..metalearn import clone_params, meta_train, personalize, predict
from ..network import DTED, DtedArch, encode_images, train_dted
from ..synthdata import RenderConfig, make_dataset
from . import config as config_mod
from .containers import ModelContainer, read_dataset, read_model, write_model
from .evaluation import (DifferentialMethod, EstimatorMethod, EvalReport, Poly3Method, evaluate_method,
                         split_person)

log = logging.getLogger(__name__)

METHODS = ("faze", "finetune", "pi", "poly3", "differential")

# DT-ED schedule overrides per ablation variant
ABLATIONS = {
    "full": {},
    "recon_gaze": {"lambda_ec": 0.0},
    "recon_only": {"lambda_ec": 0.0, "lambda_gaze": 0.0},
    "recon_ec": {"lambda_gaze": 0.0},
    "independent": {"ec_variant": "independent"},
    "triplet": {"ec_variant": "triplet"},
    "ae": {"rotate_codes": False, "lambda_ec": 0.0},
}

FILES = {
    "gen-data": ("dataset.fazedat",),
    "train-dted": ("dted.fazekit",),
    "train-adagen": ("adagen.fazekit",),
    "train-differential": ("differential.fazekit",),
    "evaluate": ("eval_trials.csv", "eval_summary.csv", "plot_data.tsv", "eval_report.json"),
    "ablate": ("ablation_trials.csv", "ablation_summary.csv", "ablation_plot_data.tsv"),
}


def _digest(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _state_tensors(module, prefix=""):
    return {prefix + n: t.detach().cpu().numpy() for n, t in module.state_dict().items()}


def _params_tensors(params, prefix):
    return {f"{prefix}/{n}": v.detach().cpu().numpy() for n, v in params.items()}


def _params_from(tensors, prefix):
    start = prefix + "/"
    return {n[len(start):]: torch.as_tensor(v) for n, v in tensors.items() if n.startswith(start)}


def load_dted(path):
    c = read_model(path)
    model = DTED(DtedArch(**c.metadata["arch"]))
    model.load_state_dict({n: torch.as_tensor(v) for n, v in c.tensors.items()})
    model.eval()
    return model, c


def load_differential(path):
    c = read_model(path)
    m = c.metadata
    net = DifferentialNet(m["f_gaze"], m["hidden"], m["normalize_along"])
    net.load_state_dict({n: torch.as_tensor(v) for n, v in c.tensors.items()})
    net.eval()
    return net


class Pipeline:
    """Stages of one experiment rooted at ``out``.

    ``dataset_path`` lets several pipelines (ablation variants) share one
    dataset file.
    """

    def __init__(self, cfg, out, force=False, dataset_path=None):
        config_mod._validate(cfg)
        self.cfg = cfg
        self.out = Path(out)
        self.force = force
        self.dataset_path = Path(dataset_path) if dataset_path else self.out / FILES["gen-data"][0]
        self._dataset = None
        self._codes = None
        self._done = set()  # stages already built or validated in this process
        self._started = {}

    # bookkeeping

    def path(self, stage, i=0):
        if stage == "gen-data":
            return self.dataset_path
        return self.out / FILES[stage][i]

    def outputs(self, stage):
        return [self.path(stage, i) for i in range(len(FILES[stage]))]

    @property
    def _state_file(self):
        return self.out / "stages.json"

    def _state(self):
        try:
            return json.loads(self._state_file.read_text())
        except (OSError, json.JSONDecodeError):
            return {}

    def stage_key(self, stage):
        c = self.cfg
        d = c.to_dict()
        parts = {
            "gen-data": ["data"],
            "train-dted": ["data", "dted"],
            "train-adagen": ["data", "dted", "meta"],
            "train-differential": ["data", "dted"],
            "evaluate": ["data", "dted", "meta", "eval"],
            "ablate": ["data", "dted", "meta", "eval"],
        }[stage]
        extra = {}
        if stage == "train-adagen":
            extra = {"k_values": d["eval"]["k_values"]}
        elif stage == "train-differential":
            extra = {n: d["eval"][n] for n in ("seed", "differential_steps", "differential_lr")}
        return _digest({"stage": stage, **{p: d[p] for p in parts}, **extra})

    def is_fresh(self, stage):
        if self.force:
            return False
        if self._state().get(stage) != self.stage_key(stage):
            return False
        return all(p.exists() for p in self.outputs(stage))

    def _record(self, stage):
        state = self._state()
        state[stage] = self.stage_key(stage)
        self._done.add(stage)
        if stage in self._started:
            log.info("finished stage %s in %.1f s", stage, time.perf_counter() - self._started.pop(stage))
        self.out.mkdir(parents=True, exist_ok=True)
        tmp = self._state_file.with_suffix(".tmp")
        tmp.write_text(json.dumps(state, indent=1, sort_keys=True))
        tmp.replace(self._state_file)

    def _require(self, stage, needed, build):
        """Make sure the artifacts of ``needed`` exist, building them if ``build``."""
        if build:
            if needed not in self._done:
                getattr(self, needed.replace("-", "_"))(build_upstream=True)
            return
        for p in self.outputs(needed):
            if not p.exists():
                raise DependencyError(stage, f"{p} (run '{needed}' first)")

    def _cached(self, stage):
        if self.is_fresh(stage):
            log.info("cache hit: %s (%s)", stage, self.out)
            self._done.add(stage)
            return True
        log.info("running stage %s", stage)
        self._started[stage] = time.perf_counter()
        return False

    # stages

    def gen_data(self, build_upstream=True):
        if self._cached("gen-data"):
            return self.path("gen-data")
        d = self.cfg.data
        render = RenderConfig(d.width, d.height, d.max_gaze_deg, d.max_head_deg)
        self._dataset = make_dataset(d.n_train_persons + d.n_test_persons, d.samples_per_person, d.seed,
                                     render, d.label_noise_deg, path=self.path("gen-data"))
        self._record("gen-data")
        return self.path("gen-data")

    def dataset(self):
        if self._dataset is None:
            self._dataset = read_dataset(self.path("gen-data"))
        return self._dataset

    @property
    def train_ids(self):
        return list(range(self.cfg.data.n_train_persons))

    @property
    def test_ids(self):
        n = self.cfg.data.n_train_persons
        return list(range(n, n + self.cfg.data.n_test_persons))

    def train_dted(self, build_upstream=True):
        self._require("train-dted", "gen-data", build_upstream)
        if self._cached("train-dted"):
            return self.path("train-dted")
        ds = self.dataset()
        c = self.cfg.dted
        arch = c.arch(ds.width, ds.height)
        model, history = train_dted(ds.subset(self.train_ids), c.schedule(), arch, seed=c.seed)
        meta = {"arch": arch.to_dict(), "schedule": asdict(c.schedule()), "history": history,
                "train_ids": self.train_ids}
        write_model(self.path("train-dted"), ModelContainer(_state_tensors(model), self.cfg.config_hash(),
                                                            c.seed, meta))
        self._codes = None
        self._record("train-dted")
        return self.path("train-dted")

    def codes(self):
        """Gaze codes of every sample, encoded with the trained DT-ED."""
        if self._codes is None:
            model, c = load_dted(self.path("train-dted"))
            self._codes = (encode_images(model, self.dataset().images).gaze, model, c)
        return self._codes

    def _persons(self, ids):
        ds = self.dataset()
        z, _, _ = self.codes()
        g = gaze_vector_from_euler(ds.gaze)
        return {p: (z[ds.person_ids == p], g[ds.person_ids == p]) for p in ids}

    def theta_pi(self):
        _, model, _ = self.codes()
        return clone_params(model.gaze_mlp.params())

    def train_adagen(self, build_upstream=True):
        self._require("train-adagen", "train-dted", build_upstream)
        if self._cached("train-adagen"):
            return self.path("train-adagen")
        m = self.cfg.meta
        along = self.cfg.dted.normalize_along
        theta_pi = self.theta_pi()
        persons = self._persons(self.train_ids)
        tensors = _params_tensors(theta_pi, "pi")
        histories = {}
        # one meta-learned initialization per evaluated k
        for k in sorted({k for k in self.cfg.eval.k_values if k > 0}):
            theta, hist = meta_train(persons, m.meta_config(k, along), [m.seed, k], theta_pi,
                                     exclude_ids=self.test_ids)
            tensors.update(_params_tensors(theta, f"k{k}"))
            histories[str(k)] = hist
        meta = {"k_values": sorted(int(k) for k in self.cfg.eval.k_values if k > 0),
                "normalize_along": along, "history": histories, "train_ids": self.train_ids}
        write_model(self.path("train-adagen"), ModelContainer(tensors, self.cfg.config_hash(), m.seed, meta))
        self._record("train-adagen")
        return self.path("train-adagen")

    def adagen(self):
        """``(theta_pi, {k: theta_star})`` from the meta-learning container."""
        c = read_model(self.path("train-adagen"))
        return _params_from(c.tensors, "pi"), {k: _params_from(c.tensors, f"k{k}") for k in c.metadata["k_values"]}

    def train_differential(self, build_upstream=True):
        self._require("train-differential", "train-dted", build_upstream)
        if self._cached("train-differential"):
            return self.path("train-differential")
        ds = self.dataset()
        z, _, _ = self.codes()
        mask = np.isin(ds.person_ids, self.train_ids)
        e = self.cfg.eval
        cfg = e.differential()
        net, losses = train_differential(z[mask], ds.gaze[mask], ds.person_ids[mask], cfg, seed=e.seed,
                                         normalize_along=self.cfg.dted.normalize_along)
        meta = {"f_gaze": int(z.shape[-1]), "hidden": cfg.hidden, "normalize_along": self.cfg.dted.normalize_along,
                "losses": losses}
        write_model(self.path("train-differential"),
                    ModelContainer(_state_tensors(net), self.cfg.config_hash(), e.seed, meta))
        self._record("train-differential")
        return self.path("train-differential")

    def test_persons(self):
        ds = self.dataset()
        z, _, _ = self.codes()
        pool = self.cfg.data.calibration_pool
        return [split_person(p, z[ds.person_ids == p], ds.gaze[ds.person_ids == p], pool) for p in self.test_ids]

    def methods(self, names, label=None):
        along = self.cfg.dted.normalize_along
        m, e = self.cfg.meta, self.cfg.eval
        theta_pi, stars = self.adagen()
        steps = e.finetune_steps or m.final_steps
        lr = e.finetune_lr or m.inner_lr
        out = []
        for name in names:
            if name == "faze":
                out.append(EstimatorMethod(label or "faze", theta_pi, along, stars, m.final_steps, m.inner_lr))
            elif name == "finetune":
                out.append(EstimatorMethod("finetune", theta_pi, along, None, steps, lr))
            elif name == "pi":
                out.append(EstimatorMethod("pi", theta_pi, along, None, 0, 0.0))
            elif name == "poly3":
                out.append(Poly3Method(theta_pi, along))
            elif name == "differential":
                out.append(DifferentialMethod(load_differential(self.path("train-differential")), theta_pi, along))
            else:
                raise InvalidArgumentError(f"unknown method {name!r}")
        return out

    def _write_report(self, report, trials, summary, plot):
        trials.write_text(report.trials_csv())
        summary.write_text(report.summary_csv())
        plot.write_text(plot_data(report))
        if self.cfg.eval.plot:
            write_plot(report, plot.with_suffix(".png"))

    def evaluate(self, build_upstream=True):
        self._require("evaluate", "train-adagen", build_upstream)
        names = list(self.cfg.eval.methods)
        if "differential" in names:
            self._require("evaluate", "train-differential", build_upstream)
        if self._cached("evaluate"):
            return self.path("evaluate")
        e = self.cfg.eval
        started = time.time()
        report = EvalReport()
        persons = self.test_persons()
        for method in self.methods(names):
            report.extend(evaluate_method(method, persons, e.k_values, e.trials, e.seed, self.train_ids))
        self._write_report(report, *self.outputs("evaluate")[:3])
        meta = {"seed": e.seed, "config_hash": self.cfg.config_hash(), "std": "population",
                "trials": e.trials, "started": started, "finished": time.time(),
                "persons": [p.person_id for p in persons],
                "summary": [list(r) for r in report.aggregate()]}
        self.path("evaluate", 3).write_text(json.dumps(meta, indent=1))
        self._record("evaluate")
        return self.path("evaluate")

    def variant(self, name):
        """Sub-pipeline for one ablation variant, sharing this pipeline's dataset."""
        cfg = self.cfg.replace(dted=ABLATIONS[name],
                               eval={"methods": ("faze",), "k_values": self.cfg.eval.k_values})
        # an unmodified variant shares this pipeline's trained models (same stage keys)
        root = self.out if cfg.dted == self.cfg.dted else self.out / "ablate" / name
        return Pipeline(cfg, root, self.force, dataset_path=self.path("gen-data"))

    def ablate(self, build_upstream=True):
        self._require("ablate", "gen-data", build_upstream)
        if self._cached("ablate"):
            return self.path("ablate")
        e = self.cfg.eval
        report = EvalReport()
        for name in e.ablations:
            sub = self.variant(name)
            sub.train_dted(build_upstream=False)
            sub.train_adagen(build_upstream=False)
            method = sub.methods(["faze"], label=name)[0]
            report.extend(evaluate_method(method, sub.test_persons(), e.k_values, e.trials, e.seed,
                                          self.train_ids))
        self._write_report(report, *self.outputs("ablate"))
        self._record("ablate")
        return self.path("ablate")

    def run(self):
        """Full pipeline up to evaluation."""
        self.gen_data()
        self.train_dted()
        self.train_adagen()
        if "differential" in self.cfg.eval.methods:
            self.train_differential()
        return self.evaluate()

    def personalize(self, person_id, k, out_path=None, build_upstream=False):
        """Adapt the meta-learned estimator to one test person from their first k pool samples.

        Writes the personal weights and returns ``(path, error_before, error_after)``
        measured on the person's validation split in degrees.
        """
        self._require("personalize", "train-adagen", build_upstream)
        if person_id not in self.test_ids:
            raise InvalidArgumentError(f"person {person_id} is not a test person ({self.test_ids})")
        if k < 1:
            raise InvalidArgumentError("personalization needs k >= 1")
        theta_pi, stars = self.adagen()
        if not stars:
            raise InvalidArgumentError("no meta-learned weights in the container")
        start = stars[k] if k in stars else stars[min(stars, key=lambda kk: (abs(kk - k), kk))]
        p = next(pp for pp in self.test_persons() if pp.person_id == person_id)
        if k > len(p.calib_codes):
            raise InvalidArgumentError(f"person {person_id} has only {len(p.calib_codes)} calibration samples")
        along = self.cfg.dted.normalize_along
        cfg = self.cfg.meta.meta_config(k, along)
        adapted = personalize(start, p.calib_codes[:k], p.calib_gaze[:k], cfg)

        def err(params):
            return float(np.degrees(angular_distance(predict(params, p.valid_codes, along), p.valid_gaze)).mean())

        before, after = err(theta_pi), err(adapted)
        out_path = Path(out_path) if out_path else self.out / f"personal_{person_id}_k{k}.fazekit"
        meta = {"person_id": person_id, "k": k, "error_before_deg": before, "error_after_deg": after,
                "normalize_along": along}
        write_model(out_path, ModelContainer(_params_tensors(adapted, "theta"), self.cfg.config_hash(),
                                             self.cfg.meta.seed, meta))
        return out_path, before, after


def plot_data(report):
    """Tab-separated table: one row per k, mean and std columns per method."""
    cells = {(m, k): (mean, std) for m, k, mean, std in report.aggregate()}
    methods = list(dict.fromkeys(m for m, _ in cells))
    ks = sorted({k for _, k in cells})
    lines = ["\t".join(["k"] + [f"{m}_{s}" for m in methods for s in ("mean", "std")])]
    for k in ks:
        row = [str(k)]
        for m in methods:
            mean, std = cells.get((m, k), (float("nan"), float("nan")))
            row += [repr(mean), repr(std)]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def write_plot(report, path):
    """Line chart of mean error against k with std bands (needs matplotlib)."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", path)
        return None
    fig, ax = plt.subplots(figsize=(5, 3.5))
    by_method = {}
    for m, k, mean, std in report.aggregate():
        by_method.setdefault(m, []).append((k, mean, std))
    for m, rows in by_method.items():
        k, mean, std = map(np.array, zip(*sorted(rows)))
        ax.plot(k, mean, marker="o", label=m)
        ax.fill_between(k, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("calibration samples k")
    ax.set_ylabel("mean angular error (deg)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
