"""Look at the synthetic eye patches in the terminal.

Renders two people at the same gaze labels. Their irises sit in slightly
different places because each person has their own small offset between the
labelled gaze and where the eye actually points. That offset is the thing
few-shot personalization has to learn.

    python demos/render_people.py
"""

import numpy as np

from fazekit.synthdata import RenderConfig, render, sample_person

RAMP = " .:-=+*#%@"
CFG = RenderConfig(width=64, height=16)


def ascii_image(img):
    idx = np.clip((img * (len(RAMP) - 1)).round().astype(int), 0, len(RAMP) - 1)
    return "\n".join("".join(RAMP[i] for i in row) for row in idx)


def main():
    people = [sample_person(seed=0, identifier=i) for i in (0, 1)]
    for p in people:
        off = np.degrees(p.offset)
        print(f"person {p.identifier}: offset pitch {off[0]:+.2f} deg, yaw {off[1]:+.2f} deg")
    labels = [(0.0, 0.0), (0.0, 20.0), (-15.0, 0.0), (15.0, -15.0)]
    for pitch, yaw in labels:
        gaze = np.radians([pitch, yaw])
        print(f"\nlabelled gaze pitch {pitch:+.0f}, yaw {yaw:+.0f} (positive pitch looks down)")
        for p in people:
            print(f"person {p.identifier}")
            print(ascii_image(render(p, gaze, np.zeros(2), CFG)))


if __name__ == "__main__":
    main()
