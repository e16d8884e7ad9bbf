"""
Boundary weight maps for the weighted-boundary log loss.

w(p) = min(1, dist(p, B) / ramp), where B is the set of pixels that have a
4-neighbour with a different label and dist is the exact Euclidean distance
(two 1-D lower-envelope passes). A mask without boundary gets weight 1
everywhere.
"""
from typing import Union

import numpy as np

from histotnet.core.types import LabelMask
from histotnet.errors import ValidationError

DEFAULT_RAMP = 8.0


def _squared_edt_1d(f: np.ndarray) -> np.ndarray:
    """min_q (p−q)² + f(q) over the finite entries of f."""
    n = f.size
    sites = np.flatnonzero(np.isfinite(f))
    out = np.full(n, np.inf)
    if sites.size == 0:
        return out

    # Lower envelope of the parabolas rooted at each site.
    vertices = [int(sites[0])]
    bounds = [-np.inf]

    def intersect(q: int, v: int) -> float:
        return ((f[q] + q * q) - (f[v] + v * v)) / (2.0 * (q - v))

    for q in sites[1:]:
        q = int(q)
        s = intersect(q, vertices[-1])
        # bounds[0] is -inf, so the first parabola is never removed.
        while s <= bounds[-1]:
            vertices.pop()
            bounds.pop()
            s = intersect(q, vertices[-1])
        vertices.append(q)
        bounds.append(s)

    positions = np.arange(n)
    # Parabola j covers positions in [bounds[j], bounds[j+1]).
    owner = np.searchsorted(np.asarray(bounds[1:] + [np.inf]), positions, side="right")
    owner = np.minimum(owner, len(vertices) - 1)
    v = np.asarray(vertices)[owner]
    out[:] = (positions - v) ** 2 + f[v]
    return out


def squared_distance_to(sites: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from every pixel to the nearest True pixel."""
    sites = np.asarray(sites, dtype=bool)
    if sites.ndim != 2:
        raise ValidationError(f"Expected a 2-D site map, got shape {sites.shape}")
    grid = np.where(sites, 0.0, np.inf)
    columns = np.empty_like(grid)
    for col in range(grid.shape[1]):
        columns[:, col] = _squared_edt_1d(grid[:, col])
    out = np.empty_like(grid)
    for row in range(grid.shape[0]):
        out[row] = _squared_edt_1d(columns[row])
    return out


def boundary_set(labels: np.ndarray) -> np.ndarray:
    """Pixels with at least one 4-neighbour carrying a different label."""
    labels = np.asarray(labels)
    edge = np.zeros(labels.shape, dtype=bool)
    vertical = labels[1:] != labels[:-1]
    horizontal = labels[:, 1:] != labels[:, :-1]
    edge[1:] |= vertical
    edge[:-1] |= vertical
    edge[:, 1:] |= horizontal
    edge[:, :-1] |= horizontal
    return edge


def boundary_weights(mask: Union[LabelMask, np.ndarray], ramp: float = DEFAULT_RAMP) -> np.ndarray:
    """
    Linear weight ramp away from region boundaries.

    Args:
        mask: Binary ground-truth mask
        ramp: Distance in pixels at which weights reach 1 (>= 1)

    Returns:
        float32 H×W weights in [0, 1]; boundary pixels get 0
    """
    if ramp < 1:
        raise ValidationError(f"ramp must be >= 1, got {ramp}")
    labels = mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)
    edge = boundary_set(labels)
    if not edge.any():
        return np.ones(labels.shape, dtype=np.float32)
    distance = np.sqrt(squared_distance_to(edge))
    return np.minimum(1.0, distance / ramp).astype(np.float32)


def boundary_weights_reference(mask: Union[LabelMask, np.ndarray],
                               ramp: float = DEFAULT_RAMP) -> np.ndarray:
    """All-pairs O(n²) version of `boundary_weights`."""
    labels = mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)
    edge = boundary_set(labels)
    if not edge.any():
        return np.ones(labels.shape, dtype=np.float32)
    points = np.argwhere(edge).astype(np.float64)
    out = np.empty(labels.shape, dtype=np.float64)
    for row in range(labels.shape[0]):
        for col in range(labels.shape[1]):
            out[row, col] = np.sqrt(((points - (row, col)) ** 2).sum(axis=1).min())
    return np.minimum(1.0, out / ramp).astype(np.float32)
