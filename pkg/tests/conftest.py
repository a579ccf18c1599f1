"""Shared fixtures and converters between package objects and oracle dicts."""

from __future__ import annotations

import numpy as np
import pytest

from geomoea import (
    ClusterSpec,
    DatasetSpec,
    Domain,
    Location,
    SyntheticSpec,
    load_domain,
)

# the bundled benchmark: three Gaussian clusters over a 10 km square
BENCH_SPEC = DatasetSpec(
    source=SyntheticSpec(
        count=400,
        bbox=(0.0, 0.0, 10.0, 10.0),
        clusters=(
            ClusterSpec(0.5, (3.0, 3.0), 1.5),
            ClusterSpec(0.3, (7.0, 6.0), 1.2),
            ClusterSpec(0.2, (5.0, 8.0), 1.0),
        ),
    ),
    blur_radius_m=80.0,
    prior_range=(0.0005, 0.0015),
    seed=20240814,
)


def make_domain(points, prior=None) -> Domain:
    """Domain from [(x, y), ...] with ids 0..n-1; uniform prior by default."""
    locs = [Location(i, float(x), float(y)) for i, (x, y) in enumerate(points)]
    if prior is None:
        prior = [1.0] * len(locs)
    return Domain(locs, prior)


def random_domain(rng, n, side=10.0) -> Domain:
    pts = rng.uniform(0.0, side, size=(n, 2))
    weights = rng.uniform(0.5, 2.0, size=n)
    return make_domain(pts, weights)


def domain_dicts(domain: Domain):
    """(coords, prior) dicts keyed by location id, for the oracles."""
    coords = {loc.id: (loc.x, loc.y) for loc in domain.locations}
    prior = {loc.id: float(domain.prior[i]) for i, loc in enumerate(domain.locations)}
    return coords, prior


def matrix_rows(matrix):
    """ObfuscationMatrix as nested dicts, for the oracles."""
    return {
        int(rid): {int(s): float(p) for s, p in zip(matrix.supports[i], matrix.probs[i])}
        for i, rid in enumerate(matrix.row_ids)
    }


@pytest.fixture(scope="session")
def bench_domain() -> Domain:
    return load_domain(BENCH_SPEC)


@pytest.fixture
def grid_domain() -> Domain:
    # 3 x 3 unit grid, uniform prior
    return make_domain([(x, y) for y in range(3) for x in range(3)])


@pytest.fixture
def pair_domain() -> Domain:
    return make_domain([(0.0, 0.0), (1.0, 0.0)])
