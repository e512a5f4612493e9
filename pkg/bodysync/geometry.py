"""
Axis-aligned box arithmetic shared by the simulator and relation inference
"""

from typing import Tuple

import numpy as np

Box = Tuple[np.ndarray, np.ndarray]


def yaw_rotation(degrees: float) -> np.ndarray:
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotated_half_extents(rotation: np.ndarray, half_extents: np.ndarray) -> np.ndarray:
    """Half extents of the axis-aligned hull of a rotated box"""
    return np.abs(rotation) @ np.asarray(half_extents, dtype=float)


def axis_overlaps(a: Box, b: Box) -> np.ndarray:
    """Per-axis overlap lengths, negative where the boxes are separated"""
    return np.minimum(a[1], b[1]) - np.maximum(a[0], b[0])


def interpenetration(a: Box, b: Box) -> float:
    """Penetration depth: the smallest positive axis overlap, 0 when disjoint"""
    overlaps = axis_overlaps(a, b)
    if np.any(overlaps <= 0.0):
        return 0.0
    return float(overlaps.min())


def footprint_overlap_fraction(upper: Box, lower: Box) -> float:
    """Fraction of the upper box's xy footprint covered by the lower box"""
    overlaps = axis_overlaps(upper, lower)[:2]
    area = float(np.prod(upper[1][:2] - upper[0][:2]))
    if area <= 0.0 or np.any(overlaps <= 0.0):
        return 0.0
    return float(np.prod(overlaps)) / area


def containment_fraction(inner: Box, outer: Box) -> float:
    """Fraction of the inner box's volume lying inside the outer box"""
    overlaps = axis_overlaps(inner, outer)
    volume = float(np.prod(inner[1] - inner[0]))
    if volume <= 0.0 or np.any(overlaps <= 0.0):
        return 0.0
    return float(np.prod(overlaps)) / volume


def footprint_contains(outer: Box, inner: Box) -> bool:
    return bool(np.all(outer[0][:2] <= inner[0][:2]) and np.all(inner[1][:2] <= outer[1][:2]))


def contains_point(box: Box, point: np.ndarray, margin: float = 0.0) -> bool:
    return bool(np.all(box[0] - margin <= point) and np.all(point <= box[1] + margin))


def slab_exit(box: Box, point: np.ndarray, direction: np.ndarray) -> float:
    """
    Distance the box must travel along a unit direction so that the point
    leaves it; infinite when the direction has no component to escape along
    """
    best = np.inf
    for axis in range(3):
        component = direction[axis]
        if abs(component) < 1e-12:
            continue
        # the box face that trails the motion must pass the point
        face = box[0][axis] if component > 0 else box[1][axis]
        travel = (point[axis] - face) / component
        best = min(best, max(travel, 0.0))
    return float(best)


def orthonormal_rows(row0: np.ndarray, row1: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gram-Schmidt on two rotation rows; degenerate input falls back to identity rows"""
    r0 = np.asarray(row0, dtype=float)
    norm0 = np.linalg.norm(r0)
    if norm0 < 1e-9:
        r0 = np.array([1.0, 0.0, 0.0])
    else:
        r0 = r0 / norm0
    r1 = np.asarray(row1, dtype=float) - np.dot(row1, r0) * r0
    norm1 = np.linalg.norm(r1)
    if norm1 < 1e-9:
        helper = np.array([0.0, 1.0, 0.0]) if abs(r0[1]) < 0.9 else np.array([0.0, 0.0, 1.0])
        r1 = helper - np.dot(helper, r0) * r0
        norm1 = np.linalg.norm(r1)
    return r0, r1 / norm1


def rotation_from_rows(row0: np.ndarray, row1: np.ndarray) -> np.ndarray:
    r0, r1 = orthonormal_rows(row0, row1)
    return np.vstack([r0, r1, np.cross(r0, r1)])
