"""Sagittal mirror maps: reflection of canonical points and view directions.

The canonical body stands with its sagittal plane at x = 0, so the mirror
image of a canonical point or direction is a sign flip of the x component.
Both maps are the same orthogonal reflection; they are kept as separate
fields because points and directions transform through them in different
loss terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["SagittalMaps", "mirror"]

_REFLECT_X = np.diag([-1.0, 1.0, 1.0])


@dataclass(frozen=True)
class SagittalMaps:
    """Point map S_x and direction map S_d for the canonical x = 0 plane."""

    point_map: np.ndarray = field(default_factory=lambda: _REFLECT_X.copy())
    direction_map: np.ndarray = field(default_factory=lambda: _REFLECT_X.copy())

    def __post_init__(self):
        for m in (self.point_map, self.direction_map):
            if not np.allclose(m @ m, np.eye(3), atol=1e-12):
                raise ValueError("mirror maps must be involutions")
            if not np.isclose(np.linalg.det(m), -1.0, atol=1e-12):
                raise ValueError("mirror maps must be reflections (det -1)")


def mirror(x, d, maps=None):
    """Reflect canonical points and directions across the sagittal plane.

    Accepts single vectors or batches; applying it twice returns the input.
    """
    if maps is None:
        maps = SagittalMaps()
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    return x @ maps.point_map.T, d @ maps.direction_map.T
