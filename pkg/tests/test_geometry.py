from __future__ import annotations

import math

import numpy as np
import pytest

from crnsim.geometry import (
    CoverageDisk,
    Region,
    coverage_matrix,
    coverage_probability,
    covering_nodes,
    nearest_node_distance_mean,
    pairwise_distance,
    responsibility_mean_approx,
    sample_point_pattern,
    sample_poisson_count,
    uncovered_count,
    unobserved_target_mean,
)

B = Region(10.0, 10.0)
R_DISK = math.sqrt(10.0 / math.pi)


@pytest.mark.parametrize("density,mean", [(0.2, 20.0), (0.3, 30.0)])
def test_poisson_count_mean_within_3_sigma(density, mean, rng):
    n = 10_000
    draws = np.array([sample_poisson_count(density, 100.0, rng) for _ in range(n)])
    assert abs(draws.mean() - mean) < 3 * math.sqrt(mean / n)


def test_poisson_count_zero_density_is_zero(rng):
    assert all(sample_poisson_count(0.0, 100.0, rng) == 0 for _ in range(100))


@pytest.mark.parametrize("density,area", [(-0.1, 10.0), (0.1, 0.0), (0.1, -1.0)])
def test_poisson_count_rejects_bad_inputs(density, area, rng):
    with pytest.raises(ValueError):
        sample_poisson_count(density, area, rng)


def test_point_pattern_support(rng):
    for _ in range(50):
        pp = sample_point_pattern(B, 0.2, rng)
        assert B.contains(pp.points).all() if len(pp) else True


def test_point_pattern_count_variance_matches_mean(rng):
    counts = np.array([len(sample_point_pattern(B, 0.3, rng)) for _ in range(10_000)])
    assert abs(counts.var(ddof=1) - 30.0) < 3.0


def test_quadrant_counts_are_iid_poisson(rng):
    # chi-square goodness of fit of pooled quadrant counts against Poisson(7.5)
    from scipy import stats

    lam = 0.3 * 100.0 / 4
    q = []
    for _ in range(1000):
        p = sample_point_pattern(B, 0.3, rng).points
        right, top = p[:, 0] >= 5.0, p[:, 1] >= 5.0
        q.append([np.sum(~right & ~top), np.sum(right & ~top), np.sum(~right & top), np.sum(right & top)])
    q = np.array(q)
    # independence: quadrant counts are uncorrelated
    corr = np.corrcoef(q.T)[np.triu_indices(4, 1)]
    assert np.all(np.abs(corr) < 0.1)
    vals = q.ravel()
    edges = np.arange(0, 16)
    obs = np.array([np.sum(vals == k) for k in edges[:-1]] + [np.sum(vals >= edges[-1])])
    pk = stats.poisson.pmf(edges[:-1], lam)
    exp = np.concatenate([pk, [1 - pk.sum()]]) * len(vals)
    chi2 = np.sum((obs - exp) ** 2 / exp)
    assert chi2 < stats.chi2.ppf(0.999, len(obs) - 1)


def test_scene_is_pure_function_of_seed():
    a = sample_point_pattern(B, 0.2, np.random.default_rng(9)).points
    b = sample_point_pattern(B, 0.2, np.random.default_rng(9)).points
    assert np.array_equal(a, b)


def test_coverage_probability_values():
    assert coverage_probability(0.2, 10.0) == pytest.approx(1 - math.exp(-2), abs=1e-12)
    assert coverage_probability(0.2, 10.0) == pytest.approx(0.864665, abs=1e-6)
    assert coverage_probability(0.0, 10.0) == 0.0


@pytest.mark.parametrize("lam", [0.0, 0.05, 0.2, 1.0])
def test_coverage_probability_monotone_and_bounded(lam):
    areas = np.linspace(0, 50, 30)
    vals = [coverage_probability(lam, a) for a in areas]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    lams = np.linspace(0, 2, 30)
    vals = [coverage_probability(l, 10.0) for l in lams]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_coverage_probability_monte_carlo(rng):
    probes = 10_000
    hits = 0
    for _ in range(probes // 100):
        nodes = sample_point_pattern(B, 0.2, rng).points
        pts = rng.uniform(size=(100, 2)) * B.size
        _, cov = coverage_matrix(pts, nodes, R_DISK, B, wrap=True)
        hits += int(cov.any(axis=0).sum())
    p = 1 - math.exp(-2)
    assert abs(hits / probes - p) < 3 * math.sqrt(p * (1 - p) / probes)


def test_unobserved_target_mean_values():
    assert unobserved_target_mean(0.3, 0.2, 10.0, 100.0) == pytest.approx(30 * math.exp(-2))
    assert unobserved_target_mean(0.0, 0.2, 10.0, 100.0) == 0.0


def test_unobserved_targets_monte_carlo(rng):
    counts = []
    for _ in range(1000):
        nodes = sample_point_pattern(B, 0.2, rng).points
        tg = sample_point_pattern(B, 0.3, rng).points
        counts.append(uncovered_count(tg, nodes, R_DISK, B, wrap=True))
    counts = np.array(counts)
    mean = 30 * math.exp(-2)
    assert abs(counts.mean() - mean) < 3 * counts.std(ddof=1) / math.sqrt(len(counts))


@pytest.mark.parametrize("lam,expected", [(0.25, 1.0), (0.2, 1.1180)])
def test_nearest_node_distance_values(lam, expected):
    assert nearest_node_distance_mean(lam) == pytest.approx(expected, abs=1e-4)


def test_nearest_node_distance_zero_density_raises():
    with pytest.raises(ValueError):
        nearest_node_distance_mean(0.0)


def test_nearest_node_distance_monte_carlo_torus(rng):
    big = Region(40.0, 40.0)
    d = []
    for _ in range(100):
        nodes = sample_point_pattern(big, 0.2, rng).points
        probes = rng.uniform(size=(100, 2)) * big.size
        d.append(pairwise_distance(probes, nodes, big, wrap=True).min(axis=1))
    d = np.concatenate(d)
    assert d.mean() == pytest.approx(1 / (2 * math.sqrt(0.2)), rel=0.02)


def test_covering_nodes_center_and_boundary():
    disks = [CoverageDisk((0.0, 0.0), 1.0, 0), CoverageDisk((3.0, 0.0), 1.0, 1)]
    assert covering_nodes((0.0, 0.0), disks) == {0}
    assert covering_nodes((1.0, 0.0), disks) == {0}  # boundary inclusive
    assert covering_nodes((2.0, 0.0), disks) == {1}
    assert covering_nodes((1.5, 0.0), disks) == set()


def test_covering_nodes_permutation_invariant(rng):
    pts = rng.uniform(size=(30, 2)) * 10
    disks = [CoverageDisk(tuple(p), R_DISK, i) for i, p in enumerate(pts)]
    for target in rng.uniform(size=(20, 2)) * 10:
        base = covering_nodes(target, disks)
        perm = [disks[i] for i in rng.permutation(len(disks))]
        assert covering_nodes(target, perm) == base


def test_cover_count_is_poisson_mean(rng):
    counts = []
    for _ in range(1000):
        nodes = sample_point_pattern(B, 0.2, rng).points
        target = rng.uniform(size=(1, 2)) * B.size
        _, cov = coverage_matrix(target, nodes, R_DISK, B, wrap=True)
        counts.append(int(cov.sum()))
    counts = np.array(counts)
    assert abs(counts.mean() - 2.0) < 3 * math.sqrt(2.0 / len(counts))


def test_responsibility_approximation_value():
    assert responsibility_mean_approx(0.3, 0.2) == pytest.approx(math.pi / 16 * 1.5)
