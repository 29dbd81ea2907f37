"""Few-shot evaluation protocol and report.

For every k and trial, each test person gets k calibration samples drawn from
their calibration pool; the method adapts and is scored on the person's fixed
validation split. A trial's score is the mean over persons of the per-person
mean angular error in degrees. k = 0 always scores the unadapted estimator.
"""

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from ..baselines import (apply_poly3, differential_predict, fit_poly3, gaze_vector_of_por, por_of_gaze_vector)
from ..errors import InvalidArgumentError
from ..geometry import angular_distance, gaze_vector_from_euler
from ..metalearn import MetaConfig, finetune_baseline, personalize, predict

log = logging.getLogger(__name__)

TRIAL_HEADER = ("method", "k", "trial", "mean_error_deg")
SUMMARY_HEADER = ("method", "k", "mean_deg", "std_deg")
# poly3 clamps estimates to at most ~87 deg off the camera axis
MIN_FRONTAL_Z = 0.05


@dataclass
class PersonData:
    """Encoded samples of one test person, split into calibration pool and validation."""

    person_id: int
    calib_codes: np.ndarray
    calib_gaze: np.ndarray  # unit vectors
    calib_angles: np.ndarray  # pitch/yaw
    valid_codes: np.ndarray
    valid_gaze: np.ndarray


def split_person(person_id, codes, angles, pool):
    gaze = gaze_vector_from_euler(angles)
    return PersonData(person_id, codes[:pool], gaze[:pool], angles[:pool], codes[pool:], gaze[pool:])


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # (method, k, trial, error_deg)
    metadata: dict = field(default_factory=dict)

    def add(self, method, k, trial, error):
        self.rows.append((method, int(k), int(trial), float(error)))

    def extend(self, other):
        self.rows.extend(other.rows)

    def cells(self):
        out = {}
        for method, k, _, err in self.rows:
            out.setdefault((method, k), []).append(err)
        return out

    def aggregate(self):
        """``(method, k, mean, population std)`` per cell, in first-seen order."""
        return [(m, k, float(np.mean(v)), float(np.std(v))) for (m, k), v in self.cells().items()]

    def mean(self, method, k):
        return float(np.mean(self.cells()[(method, k)]))

    def trials_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRIAL_HEADER)
        for m, k, t, e in self.rows:
            w.writerow((m, k, t, repr(e)))
        return buf.getvalue()

    def summary_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for m, k, mean, std in self.aggregate():
            w.writerow((m, k, repr(mean), repr(std)))
        return buf.getvalue()


def read_trials_csv(path):
    report = EvalReport()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRIAL_HEADER:
            raise InvalidArgumentError(f"unexpected trial CSV header {header}")
        for m, k, t, e in reader:
            report.add(m, int(k), int(t), float(e))
    return report


class EstimatorMethod:
    """Gaze MLP methods: unadapted, MAML-personalized or naively fine-tuned."""

    def __init__(self, name, theta_pi, normalize_along="rows", adapted=None, steps=1000, lr=1e-5):
        self.name = name
        self.theta_pi = theta_pi
        self.normalize_along = normalize_along
        self.adapted = adapted or {}  # k -> initial weights; empty means start from theta_pi
        self.steps = steps
        self.lr = lr

    def predict_unadapted(self, codes):
        return predict(self.theta_pi, codes, self.normalize_along)

    def _initial(self, k):
        if not self.adapted:
            return self.theta_pi
        if k in self.adapted:
            return self.adapted[k]
        nearest = min(self.adapted, key=lambda kk: (abs(kk - k), kk))
        return self.adapted[nearest]

    def adapt_predict(self, k, persons, calib_idx):
        codes = np.stack([p.calib_codes[i] for p, i in zip(persons, calib_idx)])
        gaze = np.stack([p.calib_gaze[i] for p, i in zip(persons, calib_idx)])
        if self.adapted:
            cfg = MetaConfig(final_steps=self.steps, inner_lr=self.lr, normalize_along=self.normalize_along)
            adapted = personalize(self._initial(k), codes, gaze, cfg)
        else:
            adapted = finetune_baseline(self.theta_pi, codes, gaze, self.steps, self.lr, self.normalize_along)
        out = []
        with torch.no_grad():
            for j, p in enumerate(persons):
                params = {n: v[j] for n, v in adapted.items()}
                out.append(predict(params, p.valid_codes, self.normalize_along))
        return out


class Poly3Method:
    """Person-independent estimate, then a per-person polynomial fix of the screen point."""

    name = "poly3"

    def __init__(self, theta_pi, normalize_along="rows"):
        self.theta_pi = theta_pi
        self.normalize_along = normalize_along

    def predict_unadapted(self, codes):
        return predict(self.theta_pi, codes, self.normalize_along)

    def _screen_point(self, codes):
        g = self.predict_unadapted(codes)
        away = g[:, 2] < MIN_FRONTAL_Z
        if np.any(away):
            # no intersection with the screen; pull onto the edge of the usable hemisphere
            warnings.warn(f"{int(away.sum())} gaze estimates miss the screen plane; clamped")
            g = g.copy()
            g[away, 2] = MIN_FRONTAL_Z
            g /= np.linalg.norm(g, axis=-1, keepdims=True)
        return por_of_gaze_vector(g)

    def adapt_predict(self, k, persons, calib_idx):
        out = []
        for p, idx in zip(persons, calib_idx):
            observed = self._screen_point(p.calib_codes[idx])
            target = por_of_gaze_vector(p.calib_gaze[idx])
            corrector = fit_poly3(observed, target)
            por = apply_poly3(corrector, self._screen_point(p.valid_codes))
            out.append(gaze_vector_of_por(por))
        return out


class DifferentialMethod:
    """Gaze of each validation sample from the k labelled references via predicted differences."""

    name = "differential"

    def __init__(self, net, theta_pi, normalize_along="rows"):
        self.net = net
        self.theta_pi = theta_pi
        self.normalize_along = normalize_along

    def predict_unadapted(self, codes):
        return predict(self.theta_pi, codes, self.normalize_along)

    def adapt_predict(self, k, persons, calib_idx):
        out = []
        for p, idx in zip(persons, calib_idx):
            angles = differential_predict(self.net, p.calib_codes[idx], p.calib_angles[idx], p.valid_codes)
            out.append(gaze_vector_from_euler(angles))
        return out


def _usable(persons, k_values):
    kmax = max(k_values) if k_values else 0
    keep = []
    for p in persons:
        if len(p.calib_codes) < kmax or len(p.valid_codes) == 0:
            warnings.warn(f"person {p.person_id} lacks samples for k = {kmax}; excluded from evaluation")
        else:
            keep.append(p)
    return keep


def calibration_draws(persons, k, trial, seed):
    """Indices of the k calibration samples per person for one trial."""
    rng = np.random.default_rng((int(seed) + int(trial), int(k)))
    return [rng.choice(len(p.calib_codes), size=k, replace=False) for p in persons]


def evaluate_method(method, persons, k_values, trials=10, seed=0, training_ids=()):
    """Score ``method`` on test ``persons`` for each k over ``trials`` random draws."""
    overlap = {p.person_id for p in persons} & set(int(i) for i in training_ids)
    if overlap:
        raise InvalidArgumentError(f"evaluation persons overlap training persons: {sorted(overlap)}")
    if not persons:
        raise InvalidArgumentError("no test persons to evaluate")
    persons = _usable(persons, k_values)
    if not persons:
        raise InvalidArgumentError("no test person has enough samples")
    report = EvalReport(metadata={"seed": int(seed), "trials": int(trials), "std": "population",
                                  "persons": [p.person_id for p in persons]})
    unadapted = None
    for k in k_values:
        for trial in range(trials):
            if k == 0:
                if unadapted is None:
                    preds = [method.predict_unadapted(p.valid_codes) for p in persons]
                    unadapted = _score(preds, persons)
                err = unadapted
            else:
                idx = calibration_draws(persons, k, trial, seed)
                err = _score(method.adapt_predict(k, persons, idx), persons)
            report.add(method.name, k, trial, err)
        log.info("%s k=%d mean %.3f deg", method.name, k, report.mean(method.name, k))
    return report


def _score(preds, persons):
    per_person = [np.degrees(angular_distance(pred, p.valid_gaze)).mean() for pred, p in zip(preds, persons)]
    return float(np.mean(per_person))
