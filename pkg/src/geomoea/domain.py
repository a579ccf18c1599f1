"""Discrete location universe: loading, blurring, priors, and the metric.

All coordinates are planar kilometres.  Geographic inputs (lon/lat) are
projected once at load time with an equirectangular projection about the
bounding-box centroid; everything downstream is purely Euclidean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainTooSmallError, InvalidConfigError, ParseError

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class Location:
    """A single discrete location, coordinates in kilometres."""

    id: int
    x: float
    y: float


@dataclass(frozen=True)
class ClusterSpec:
    """One Gaussian component of a synthetic mixture."""

    weight: float
    center: tuple[float, float]
    spread: float  # isotropic standard deviation, km


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for the synthetic location generator.

    With no clusters, points are uniform over the bounding box; otherwise
    each point draws a mixture component and a Gaussian offset, clipped to
    the box.
    """

    count: int
    bbox: tuple[float, float, float, float]  # min_x, min_y, max_x, max_y
    clusters: tuple[ClusterSpec, ...] = ()


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for building a Domain deterministically from one seed.

    source is either a CSV path (str or Path) or a SyntheticSpec.  CSV files
    carry a header row: `id,x,y` with planar km, or `id,lon,lat` in degrees
    when geo=True.
    """

    source: str | Path | SyntheticSpec
    blur_radius_m: float = 0.0
    prior_range: tuple[float, float] = (0.0005, 0.0015)
    seed: int = 0
    geo: bool = False


class Domain:
    """Immutable set of locations with a normalized prior and a cached metric."""

    def __init__(self, locations: Sequence[Location], prior_weights: Iterable[float]):
        locations = tuple(locations)
        if len(locations) < 2:
            raise DomainTooSmallError(f"need at least 2 locations, got {len(locations)}")
        ids = [loc.id for loc in locations]
        if len(set(ids)) != len(ids):
            raise InvalidConfigError("location ids must be unique")
        weights = np.asarray(list(prior_weights), dtype=float)
        if weights.shape != (len(locations),):
            raise InvalidConfigError("prior length must match location count")
        if not np.all(weights > 0.0):
            raise InvalidConfigError("prior weights must be strictly positive")
        self._locations = locations
        self._xy = np.array([[loc.x, loc.y] for loc in locations], dtype=float)
        self._prior = weights / weights.sum()
        self._index = {loc.id: i for i, loc in enumerate(locations)}

    @property
    def locations(self) -> tuple[Location, ...]:
        return self._locations

    @property
    def prior(self) -> np.ndarray:
        """Normalized prior masses, aligned with `locations`."""
        return self._prior

    @property
    def coords(self) -> np.ndarray:
        """(n, 2) array of coordinates, aligned with `locations`."""
        return self._xy

    def __len__(self) -> int:
        return len(self._locations)

    def index_of(self, location_id: int) -> int:
        try:
            return self._index[location_id]
        except KeyError:
            raise KeyError(f"unknown location id {location_id}") from None

    def location(self, location_id: int) -> Location:
        return self._locations[self.index_of(location_id)]

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        """Dense pairwise Euclidean distances; computed once, then reused."""
        diff = self._xy[:, None, :] - self._xy[None, :, :]
        dm = np.sqrt((diff * diff).sum(axis=2))
        # exact zeros on the diagonal regardless of rounding
        np.fill_diagonal(dm, 0.0)
        dm.flags.writeable = False
        return dm


def distance(a: Location, b: Location) -> float:
    """Euclidean distance between two locations, km."""
    return math.hypot(a.x - b.x, a.y - b.y)


def _project_geo(lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Equirectangular projection about the bounding-box centroid, to km."""
    lat0 = (lat.min() + lat.max()) / 2.0
    lon0 = (lon.min() + lon.max()) / 2.0
    x = np.radians(lon - lon0) * math.cos(math.radians(lat0)) * EARTH_RADIUS_KM
    y = np.radians(lat - lat0) * EARTH_RADIUS_KM
    return np.column_stack([x, y])


def _parse_csv(path: Path, geo: bool) -> tuple[list[int], np.ndarray]:
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    ids: list[int] = []
    rows: list[tuple[float, float]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        expected = ["id", "lon", "lat"] if geo else ["id", "x", "y"]
        if [h.strip().lower() for h in header] != expected:
            raise ParseError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"{path}: expected 3 fields, got {len(row)}", row=lineno)
            try:
                ids.append(int(row[0]))
                rows.append((float(row[1]), float(row[2])))
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", row=lineno) from None
    data = np.asarray(rows, dtype=float).reshape(len(rows), 2)
    if geo:
        coords = _project_geo(data[:, 0], data[:, 1])
    else:
        coords = data
    return ids, coords


def _generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    min_x, min_y, max_x, max_y = spec.bbox
    if not (min_x < max_x and min_y < max_y):
        raise InvalidConfigError("bounding box must have positive extent")
    n = spec.count
    if not spec.clusters:
        xs = rng.uniform(min_x, max_x, size=n)
        ys = rng.uniform(min_y, max_y, size=n)
        return np.column_stack([xs, ys])
    weights = np.array([c.weight for c in spec.clusters], dtype=float)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise InvalidConfigError("cluster weights must be non-negative and not all zero")
    weights = weights / weights.sum()
    comps = rng.choice(len(spec.clusters), size=n, p=weights)
    centers = np.array([c.center for c in spec.clusters], dtype=float)
    spreads = np.array([c.spread for c in spec.clusters], dtype=float)
    offsets = rng.normal(size=(n, 2)) * spreads[comps, None]
    coords = centers[comps] + offsets
    coords[:, 0] = np.clip(coords[:, 0], min_x, max_x)
    coords[:, 1] = np.clip(coords[:, 1], min_y, max_y)
    return coords


def load_domain(spec: DatasetSpec) -> Domain:
    """Build a Domain from a DatasetSpec.

    Steps, all driven by one seeded generator so equal specs give equal
    domains: read or generate coordinates, optionally displace each point
    uniformly within a disk of blur_radius_m metres, then draw prior weights
    uniformly from prior_range and normalize them.
    """
    if spec.blur_radius_m < 0:
        raise InvalidConfigError("blur_radius_m must be >= 0")
    lo, hi = spec.prior_range
    if not (0 < lo <= hi):
        raise InvalidConfigError("prior_range must satisfy 0 < lo <= hi")
    rng = np.random.default_rng(spec.seed)
    if isinstance(spec.source, SyntheticSpec):
        if spec.source.count < 2:
            raise DomainTooSmallError(f"need at least 2 locations, got {spec.source.count}")
        ids = list(range(spec.source.count))
        coords = _generate_synthetic(spec.source, rng)
    else:
        ids, coords = _parse_csv(Path(spec.source), spec.geo)
        if len(ids) < 2:
            raise DomainTooSmallError(f"need at least 2 locations, got {len(ids)}")
    if spec.blur_radius_m > 0:
        radius_km = spec.blur_radius_m / 1000.0
        r = radius_km * np.sqrt(rng.random(len(ids)))
        theta = rng.random(len(ids)) * 2.0 * math.pi
        coords = coords + np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    weights = rng.uniform(lo, hi, size=len(ids))
    locations = [Location(i, float(x), float(y)) for i, (x, y) in zip(ids, coords)]
    return Domain(locations, weights)


def domain_payload(domain: Domain, meta: dict | None = None) -> dict:
    """JSON-ready dict with locations, prior, and bookkeeping metadata."""
    payload = {
        "locations": [{"id": loc.id, "x": loc.x, "y": loc.y} for loc in domain.locations],
        "prior": [float(p) for p in domain.prior],
        "meta": {"units": "km"},
    }
    if meta:
        payload["meta"].update(meta)
    return payload


def domain_from_payload(payload: dict) -> Domain:
    locations = [Location(int(l["id"]), float(l["x"]), float(l["y"])) for l in payload["locations"]]
    return Domain(locations, payload["prior"])
