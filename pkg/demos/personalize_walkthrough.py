"""Personalize the gaze estimator for one test person, step by step.

Needs a trained run directory; the quickest is

    fazekit run --config configs/desk.ini --out runs/desk
    python demos/personalize_walkthrough.py runs/desk

It then shows, for one held-out person, what the person-independent
estimator gets wrong and how the error moves with k = 1, 3 and 9 calibration
samples under the meta-learned initialization, naive fine-tuning and the
polynomial screen-point correction. A single person and a single draw are
noisy; one sample can make things worse for an individual even when the
average over people improves.
"""

import sys

import numpy as np

from fazekit.geometry import angular_distance, euler_from_gaze_vector
from fazekit.harness import load
from fazekit.harness.evaluation import calibration_draws
from fazekit.harness.experiment import Pipeline
from fazekit.metalearn import predict


def mean_deg(pred, truth):
    return float(np.degrees(angular_distance(pred, truth)).mean())


def main(run_dir, config="configs/desk.ini"):
    pipe = Pipeline(load(config), run_dir)
    person = pipe.test_persons()[0]
    theta_pi, _ = pipe.adagen()
    pi_pred = predict(theta_pi, person.valid_codes)

    # the person-independent error is mostly a constant bias for this person
    bias = np.degrees(euler_from_gaze_vector(pi_pred) - euler_from_gaze_vector(person.valid_gaze)).mean(0)
    print(f"test person {person.person_id}: {len(person.calib_codes)} calibration candidates, "
          f"{len(person.valid_codes)} validation samples")
    print(f"person-independent error {mean_deg(pi_pred, person.valid_gaze):.2f} deg, "
          f"mean bias pitch {bias[0]:+.2f} yaw {bias[1]:+.2f} deg")

    methods = pipe.methods(["faze", "finetune", "poly3"])
    print(f"\n{'k':>3} " + " ".join(f"{m.name:>10}" for m in methods))
    for k in (1, 3, 9):
        idx = calibration_draws([person], k, trial=0, seed=0)
        row = [mean_deg(m.adapt_predict(k, [person], idx)[0], person.valid_gaze) for m in methods]
        print(f"{k:>3} " + " ".join(f"{e:>10.2f}" for e in row))


if __name__ == "__main__":
    main(*sys.argv[1:])
