"""Slow, loop-based reference implementations used as test oracles."""

import math

import numpy as np


def column_angle(a, b):
    """Mean over columns of the clamped angle between matching 3D columns."""
    total = 0.0
    for c in range(a.shape[1]):
        u, v = a[:, c], b[:, c]
        cos = float(u @ v) / (math.sqrt(float(u @ u)) * math.sqrt(float(v @ v)))
        total += math.acos(min(max(cos, -1 + 1e-7), 1 - 1e-7))
    return total / a.shape[1]


def frontalize_all(codes, rotations):
    return [r.T @ z for z, r in zip(codes, rotations)]


def ec_loss(codes, rotations, ids, same_person=True):
    f = frontalize_all(codes, rotations)
    maxima = []
    for i in range(len(f)):
        partners = [j for j in range(len(f)) if j != i and (ids[i] == ids[j] or not same_person)]
        if partners:
            maxima.append(max(column_angle(f[i], f[j]) for j in partners))
    return sum(maxima) / len(maxima) if maxima else 0.0


def triplet_loss(codes, rotations, ids, margin):
    f = frontalize_all(codes, rotations)
    terms = []
    for i in range(len(f)):
        pos = [column_angle(f[i], f[j]) for j in range(len(f)) if j != i and ids[j] == ids[i]]
        neg = [column_angle(f[i], f[j]) for j in range(len(f)) if ids[j] != ids[i]]
        if pos and neg:
            terms.append(max(0.0, max(pos) - min(neg) + margin))
    return sum(terms) / len(terms) if terms else 0.0


def rot_x(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(p):
    c, s = math.cos(p), math.sin(p)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
