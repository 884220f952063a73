"""Poisson point patterns, Boolean disk coverage and their analytic means.

Point counts are drawn with numpy's exact Poisson sampler (inversion for small
means, PTRS transformed rejection for large ones) and points are then placed
uniformly, the usual count-then-scatter construction of a homogeneous PPP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle ``[0, width] x [0, height]`` in km."""

    width_km: float
    height_km: float

    def __post_init__(self) -> None:
        if not (self.width_km > 0 and self.height_km > 0):
            raise ValueError("region width and height must be positive")

    @property
    def area(self) -> float:
        return self.width_km * self.height_km

    @property
    def size(self) -> np.ndarray:
        return np.array([self.width_km, self.height_km])

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return (p[:, 0] >= 0) & (p[:, 0] <= self.width_km) & (p[:, 1] >= 0) & (p[:, 1] <= self.height_km)


@dataclass(frozen=True)
class PointPattern:
    points: np.ndarray  # (n, 2) km
    density: float

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class CoverageDisk:
    center: tuple[float, float]
    radius_km: float
    node_id: int = 0

    def __post_init__(self) -> None:
        if not self.radius_km > 0:
            raise ValueError("coverage radius must be positive")

    @property
    def area(self) -> float:
        return math.pi * self.radius_km**2


def sample_poisson_count(density: float, area: float, rng: np.random.Generator) -> int:
    if density < 0:
        raise ValueError(f"density must be non-negative, got {density}")
    if area <= 0:
        raise ValueError(f"area must be positive, got {area}")
    return int(rng.poisson(density * area))


def sample_point_pattern(region: Region, density: float, rng: np.random.Generator) -> PointPattern:
    n = sample_poisson_count(density, region.area, rng)
    pts = rng.uniform(0.0, 1.0, size=(n, 2)) * region.size
    return PointPattern(points=pts, density=density)


def coverage_probability(node_density: float, mean_disk_area: float) -> float:
    """Probability a fixed location lies in at least one Boolean-model disk."""
    if node_density < 0 or mean_disk_area < 0:
        raise ValueError("inputs must be non-negative")
    return 1.0 - math.exp(-node_density * mean_disk_area)


def unobserved_target_mean(
    target_density: float, node_density: float, disk_area: float, region_area: float
) -> float:
    """Poisson mean of the number of targets lying outside every coverage disk."""
    if min(target_density, node_density, disk_area, region_area) < 0:
        raise ValueError("inputs must be non-negative")
    return target_density * region_area * math.exp(-node_density * disk_area)


def nearest_node_distance_mean(node_density: float) -> float:
    """Mean distance from a point to its nearest PPP node, 1 / (2 sqrt(lambda))."""
    if node_density <= 0:
        raise ValueError("nearest-node distance is undefined for zero node density")
    return 1.0 / (2.0 * math.sqrt(node_density))


def responsibility_mean_approx(target_density: float, node_density: float) -> float:
    """Half-nearest-distance disk approximation (pi/16) * lambda_m / lambda_n.

    This is only an approximation; the exact mean Voronoi-cell load is
    ``lambda_m / lambda_n``.
    """
    if node_density <= 0:
        raise ValueError("node density must be positive")
    return math.pi / 16.0 * target_density / node_density


def displacement(a: np.ndarray, b: np.ndarray, region: Region | None = None, wrap: bool = False) -> np.ndarray:
    """Pairwise displacement ``a[i] - b[j]`` with shape (len(a), len(b), 2).

    With ``wrap`` the shortest displacement on the torus built from ``region``
    is returned.
    """
    d = np.asarray(a, dtype=float)[:, None, :] - np.asarray(b, dtype=float)[None, :, :]
    if wrap:
        if region is None:
            raise ValueError("wrap=True needs a region")
        size = region.size
        d = d - size * np.round(d / size)
    return d


def pairwise_distance(a: np.ndarray, b: np.ndarray, region: Region | None = None, wrap: bool = False) -> np.ndarray:
    d = displacement(a, b, region, wrap)
    return np.hypot(d[..., 0], d[..., 1])


def covering_nodes(
    target: Iterable[float],
    nodes: Iterable[CoverageDisk],
    region: Region | None = None,
    wrap: bool = False,
) -> set[int]:
    """Ids of the disks that contain ``target`` (boundary inclusive)."""
    nodes = list(nodes)
    if not nodes:
        return set()
    centers = np.array([n.center for n in nodes], dtype=float)
    radii = np.array([n.radius_km for n in nodes])
    dist = pairwise_distance(np.array([list(target)], dtype=float), centers, region, wrap)[0]
    return {n.node_id for n, ok in zip(nodes, dist <= radii) if ok}


def coverage_matrix(
    targets: np.ndarray, nodes: np.ndarray, radius_km: float, region: Region | None = None, wrap: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Return (distance, covered) matrices of shape (n_nodes, n_targets)."""
    if len(nodes) == 0 or len(targets) == 0:
        empty = np.zeros((len(nodes), len(targets)))
        return empty, empty.astype(bool)
    dist = pairwise_distance(nodes, targets, region, wrap)
    return dist, dist <= radius_km


def uncovered_count(
    targets: np.ndarray, nodes: np.ndarray, radius_km: float, region: Region | None = None, wrap: bool = False
) -> int:
    if len(targets) == 0:
        return 0
    if len(nodes) == 0:
        return len(targets)
    _, cov = coverage_matrix(targets, nodes, radius_km, region, wrap)
    return int(np.sum(~cov.any(axis=0)))


def sample_in_disk(center: np.ndarray, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return np.asarray(center) + np.column_stack([r * np.cos(th), r * np.sin(th)])
