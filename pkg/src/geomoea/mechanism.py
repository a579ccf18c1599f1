"""Distance-decay reporting laws over protection sets, and their DP checks.

Each true location reports a pseudo-location drawn from its set's reporting
range with probability proportional to exp(-epsilon * d / (2 * diameter)),
using the set's own allocated budget.  Verification helpers recheck row
stochasticity, the within-set likelihood-ratio bound, and the cross-set
bound on overlapping ranges.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import Domain, Location
from .errors import DegeneratePlsError, InvalidConfigError
from .pls import Pls, PlsPartition

_BINARY_MAGIC = b"GMXB"
_BINARY_VERSION = 1


@dataclass
class ObfuscationMatrix:
    """Rows of a reporting law, aligned with the domain's location order.

    supports[i] holds the candidate pseudo-location ids for row i (sorted
    ascending); probs[i] the matching probabilities.  Rows of one protection
    set share the same support array.
    """

    row_ids: tuple[int, ...]
    supports: list[np.ndarray]
    probs: list[np.ndarray]
    domain: Domain
    partition_ref: PlsPartition | None = None

    def __post_init__(self):
        self._row_index = {rid: i for i, rid in enumerate(self.row_ids)}

    def row(self, true_id: int) -> tuple[np.ndarray, np.ndarray]:
        try:
            i = self._row_index[true_id]
        except KeyError:
            raise InvalidConfigError(f"matrix has no row for location {true_id}") from None
        return self.supports[i], self.probs[i]


def loss_kernel(distances: np.ndarray, eps_g: float) -> float:
    """Expected reported distance under the decay law at rate eps_g.

    sum(d * exp(-eps_g * d)) / sum(exp(-eps_g * d)), computed with a shift
    so large rates do not underflow.
    """
    d = np.asarray(distances, dtype=float)
    z = eps_g * d
    z = z - z.min()
    w = np.exp(-z)
    return float((d * w).sum() / w.sum())


def mechanism_row(x: Location, pls: Pls, range_ids: tuple[int, ...], domain: Domain) -> np.ndarray:
    """Reporting distribution of one true location over its range."""
    if x.id not in pls.member_ids:
        raise InvalidConfigError(f"location {x.id} is not a member of the given set")
    if pls.diameter <= 0.0:
        raise DegeneratePlsError(
            f"set containing {x.id} has zero diameter; no reporting law exists"
        )
    xi = domain.index_of(x.id)
    cols = np.array([domain.index_of(i) for i in range_ids], dtype=int)
    d = domain.distance_matrix[xi, cols]
    z = pls.epsilon * d / (2.0 * pls.diameter)
    z = z - z.min()
    w = np.exp(-z)
    return w / w.sum()


def build_matrix(partition: PlsPartition, domain: Domain) -> ObfuscationMatrix:
    """Full reporting law: one row per domain location, in domain order."""
    if partition.reporting_ranges is None:
        raise InvalidConfigError("partition has no reporting ranges; build them first")
    by_member: dict[int, int] = {}
    for j, pls in enumerate(partition.plss):
        for mid in pls.member_ids:
            by_member[mid] = j
    range_arrays = [np.asarray(r, dtype=int) for r in partition.reporting_ranges]
    row_ids = []
    supports = []
    probs = []
    for loc in domain.locations:
        j = by_member.get(loc.id)
        if j is None:
            raise InvalidConfigError(f"location {loc.id} is not covered by the partition")
        row_ids.append(loc.id)
        supports.append(range_arrays[j])
        probs.append(mechanism_row(loc, partition.plss[j], partition.reporting_ranges[j], domain))
    return ObfuscationMatrix(
        row_ids=tuple(row_ids), supports=supports, probs=probs,
        domain=domain, partition_ref=partition,
    )


def identity_matrix(domain: Domain) -> ObfuscationMatrix:
    """The no-privacy law: every location reports itself."""
    row_ids = tuple(loc.id for loc in domain.locations)
    supports = [np.array([rid], dtype=int) for rid in row_ids]
    probs = [np.array([1.0]) for _ in row_ids]
    return ObfuscationMatrix(row_ids=row_ids, supports=supports, probs=probs, domain=domain)


def sample_pseudo(matrix: ObfuscationMatrix, x: Location, rng: np.random.Generator) -> Location:
    """Draw one pseudo-location for x by inverse CDF over its row."""
    support, p = matrix.row(x.id)
    cdf = np.cumsum(p)
    u = rng.random()
    i = int(np.searchsorted(cdf, u, side="right"))
    i = min(i, len(support) - 1)
    return matrix.domain.location(int(support[i]))


def quality_loss_at(x: Location, matrix: ObfuscationMatrix, domain: Domain) -> float:
    """Expected reported-vs-true distance for one location."""
    support, p = matrix.row(x.id)
    xi = domain.index_of(x.id)
    cols = np.array([domain.index_of(int(i)) for i in support], dtype=int)
    return float(p @ domain.distance_matrix[xi, cols])


def _probs_at(support: np.ndarray, p: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Probabilities at the given pseudo ids; zero where a row lacks them."""
    sel = np.minimum(np.searchsorted(support, ids), len(support) - 1)
    return np.where(support[sel] == ids, p[sel], 0.0)


def _dense_block(matrix: ObfuscationMatrix, member_ids: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Align member rows on the union of their supports; zeros where absent."""
    rows = [matrix.row(mid) for mid in member_ids]
    union = np.unique(np.concatenate([s for s, _ in rows]))
    block = np.zeros((len(rows), len(union)))
    for r, (support, p) in enumerate(rows):
        block[r, np.searchsorted(union, support)] = p
    return union, block


@dataclass(frozen=True)
class DpReport:
    passed: bool
    bound: float
    max_ratio: float
    worst: dict


@dataclass(frozen=True)
class CrossPlsReport:
    applicable: bool
    passed: bool
    bound: float
    observed: float
    pair: tuple[int, int]


def verify_dp_within_pls(
    matrix: ObfuscationMatrix, partition: PlsPartition, epsilon0: float | None = None
) -> DpReport:
    """Check max_{x,y in same set, x'} f(x'|x)/f(x'|y) <= e^{epsilon0}."""
    if epsilon0 is None:
        if partition.config is None:
            raise InvalidConfigError("epsilon0 unknown: pass it or attach a config to the partition")
        epsilon0 = partition.config.epsilon0
    bound = float(np.exp(epsilon0)) * (1.0 + 1e-9)
    max_ratio = 0.0
    worst: dict = {}
    for j, pls in enumerate(partition.plss):
        union, block = _dense_block(matrix, pls.member_ids)
        hi = block.max(axis=0)
        lo = block.min(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(hi > 0, hi / lo, 0.0)
        col = int(np.nanargmax(ratio))
        if ratio[col] > max_ratio or not worst:
            max_ratio = float(ratio[col])
            worst = {
                "pls": j,
                "pseudo_id": int(union[col]),
                "max_prob": float(hi[col]),
                "min_prob": float(lo[col]),
            }
    return DpReport(passed=bool(max_ratio <= bound), bound=bound, max_ratio=max_ratio, worst=worst)


def verify_cross_pls(
    matrix: ObfuscationMatrix, partition: PlsPartition, i: int, j: int,
    epsilon0: float | None = None,
) -> CrossPlsReport:
    """Check the likelihood-ratio bound across two sets with overlapping ranges."""
    if partition.reporting_ranges is None:
        raise InvalidConfigError("partition has no reporting ranges")
    range_i = partition.reporting_ranges[i]
    range_j = partition.reporting_ranges[j]
    shared = np.intersect1d(np.asarray(range_i), np.asarray(range_j))
    if len(shared) == 0:
        return CrossPlsReport(applicable=False, passed=True, bound=float("inf"), observed=0.0, pair=(i, j))
    if epsilon0 is None:
        if partition.config is None:
            raise InvalidConfigError("epsilon0 unknown: pass it or attach a config to the partition")
        epsilon0 = partition.config.epsilon0
    eps0 = epsilon0
    dm = matrix.domain.distance_matrix
    def _diam(ids):
        idx = [matrix.domain.index_of(int(t)) for t in ids]
        return float(dm[np.ix_(idx, idx)].max())
    pls_i, pls_j = partition.plss[i], partition.plss[j]
    bound = (len(range_j) / len(range_i)) * float(
        np.exp((eps0 / 2.0) * (_diam(range_j) / pls_j.diameter + _diam(range_i) / pls_i.diameter))
    )
    observed = 0.0
    for x in pls_i.member_ids:
        fx = _probs_at(*matrix.row(x), shared)
        for y in pls_j.member_ids:
            fy = _probs_at(*matrix.row(y), shared)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(fx > 0, fx / fy, 0.0)
            observed = max(observed, float(ratio.max()))
    passed = observed <= bound * (1.0 + 1e-9)
    return CrossPlsReport(applicable=True, passed=passed, bound=bound, observed=observed, pair=(i, j))


def row_sums(matrix: ObfuscationMatrix) -> np.ndarray:
    return np.array([p.sum() for p in matrix.probs])


# -- serialization ------------------------------------------------------


def matrix_payload(matrix: ObfuscationMatrix) -> dict:
    return {
        "rows": [
            {
                "true_id": int(rid),
                "support": [int(s) for s in matrix.supports[i]],
                "probs": [float(p) for p in matrix.probs[i]],
            }
            for i, rid in enumerate(matrix.row_ids)
        ]
    }


def matrix_from_payload(payload: dict, domain: Domain) -> ObfuscationMatrix:
    row_ids = []
    supports = []
    probs = []
    for row in payload["rows"]:
        row_ids.append(int(row["true_id"]))
        supports.append(np.asarray(row["support"], dtype=int))
        probs.append(np.asarray(row["probs"], dtype=float))
    return ObfuscationMatrix(
        row_ids=tuple(row_ids), supports=supports, probs=probs, domain=domain
    )


def write_matrix_binary(matrix: ObfuscationMatrix, path: str | Path) -> None:
    """Compact little-endian layout; see docs/formats.md."""
    with Path(path).open("wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<II", _BINARY_VERSION, len(matrix.row_ids)))
        for i, rid in enumerate(matrix.row_ids):
            support = np.asarray(matrix.supports[i], dtype="<i8")
            probs = np.asarray(matrix.probs[i], dtype="<f8")
            fh.write(struct.pack("<qI", int(rid), len(support)))
            fh.write(support.tobytes())
            fh.write(probs.tobytes())


def read_matrix_binary(path: str | Path, domain: Domain) -> ObfuscationMatrix:
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
        if magic != _BINARY_MAGIC:
            raise InvalidConfigError(f"{path}: not a matrix file (bad magic {magic!r})")
        version, n_rows = struct.unpack("<II", fh.read(8))
        if version != _BINARY_VERSION:
            raise InvalidConfigError(f"{path}: unsupported matrix version {version}")
        row_ids = []
        supports = []
        probs = []
        for _ in range(n_rows):
            rid, m = struct.unpack("<qI", fh.read(12))
            support = np.frombuffer(fh.read(8 * m), dtype="<i8").astype(int)
            p = np.frombuffer(fh.read(8 * m), dtype="<f8").astype(float)
            row_ids.append(rid)
            supports.append(support)
            probs.append(p)
    return ObfuscationMatrix(
        row_ids=tuple(row_ids), supports=supports, probs=probs, domain=domain
    )
