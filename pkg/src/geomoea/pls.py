"""Protection location sets: feasibility search, construction, validation.

A protection location set (PLS) is a group of at least two locations that is
reported as a unit.  Its privacy budget derives from how well the group
already resists a point estimate: with prior mass restricted to the group,
`e_prime` is the smallest expected distance any single guess can achieve.
Groups whose e_prime clears e^{epsilon0} * e_m keep the full budget
epsilon0; weaker groups get the reduced budget ln(e_prime / e_m); groups at
or below e_m are infeasible.

Construction follows a grow-with-retreats scheme per cell: seed k centers,
repeatedly hand the unassigned location closest to any open group (single
linkage) to that group.  Whenever a group crosses the full-budget bar, the
open group with the best recorded budget rate is frozen, every other open
group dissolves back into the pool, and one fewer fresh centers are seeded;
the last remaining slot simply absorbs the leftovers, so a cell always ends
with exactly the k it started with.  Retries with fresh centers, then a
deterministic fallback clustering, keep the per-cell result total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .domain import Domain
from .errors import CellInfeasibleError, InvalidConfigError
from .partition import Cell, PartitionTree
from .seeds import derive_rng, derive_seed

if TYPE_CHECKING:
    from .adversary import ObjectivePair

# construction knobs fixed across the package
RETRY_ATTEMPTS = 20
KMEANS_RESTARTS = 10
_FEAS_TOL = 1e-12
_FINDK_STREAM = 1 << 20  # spawn-key slot reserved for the per-cell k search


@dataclass(frozen=True)
class PrivacyConfig:
    """Privacy and reporting-range parameters.

    epsilon0: full per-report budget, used by groups that clear the strict
        distortion bar.
    e_m: distortion floor every feasible group must strictly exceed.
    n0: minimum cell population for the binary partition.
    min_report_locations / min_report_plss: lower bounds on the size of the
        reporting range built around each group.
    restrict_e_prime_to_cell: evaluate e_prime only over guesses inside the
        group's cell instead of the whole domain (cheaper, optimistic;
        off by default).
    """

    epsilon0: float = 1.0
    e_m: float = 0.1
    n0: int = 33
    min_report_locations: int = 50
    min_report_plss: int = 2
    restrict_e_prime_to_cell: bool = False

    def __post_init__(self):
        if self.epsilon0 <= 0:
            raise InvalidConfigError(f"epsilon0 must be > 0, got {self.epsilon0}")
        if self.e_m <= 0:
            raise InvalidConfigError(f"e_m must be > 0, got {self.e_m}")
        if self.n0 < 2:
            raise InvalidConfigError(f"n0 must be >= 2, got {self.n0}")
        if self.min_report_plss < 1:
            raise InvalidConfigError("min_report_plss must be >= 1")


@dataclass(frozen=True)
class Pls:
    """One protection location set with its derived quantities."""

    member_ids: tuple[int, ...]
    diameter: float
    e_prime: float
    epsilon: float
    cell_id: int


@dataclass
class PlsPartition:
    """A full assignment of every location to exactly one PLS."""

    plss: list[Pls]
    reporting_ranges: list[tuple[int, ...]] | None = None
    objectives: "ObjectivePair | None" = None
    config: PrivacyConfig | None = None


def e_prime(member_ids: Sequence[int], domain: Domain, candidate_ids: Sequence[int] | None = None) -> float:
    """Best expected distance a single point estimate achieves against the set.

    The prior is renormalized over the members; candidates default to the
    whole domain.
    """
    if len(member_ids) == 0:
        raise InvalidConfigError("e_prime needs a non-empty member set")
    members = np.array([domain.index_of(i) for i in member_ids], dtype=int)
    if candidate_ids is None:
        cand = np.arange(len(domain))
    else:
        cand = np.array([domain.index_of(i) for i in candidate_ids], dtype=int)
    return _e_prime_idx(domain.distance_matrix, domain.prior, members, cand)


def _e_prime_idx(dm: np.ndarray, prior: np.ndarray, members: np.ndarray, cand: np.ndarray) -> float:
    w = prior[members]
    scores = dm[np.ix_(cand, members)] @ w
    return float(scores.min() / w.sum())


def allocate_epsilon(e_prime_value: float, cfg: PrivacyConfig) -> float:
    """Adaptive budget: min(ln(e_prime / e_m), epsilon0).

    Non-positive results mean the set is infeasible; a zero e_prime maps to
    -inf so the caller's `> 0` feasibility check still works.
    """
    if e_prime_value <= 0.0:
        return float("-inf")
    return min(math.log(e_prime_value / cfg.e_m), cfg.epsilon0)


def _kmeanspp_labels(coords: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Standard D^2-weighted seeding plus one nearest-center assignment."""
    m = len(coords)
    centers = [int(rng.integers(m))]
    d2 = ((coords - coords[centers[0]]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        total = d2.sum()
        if total > 0.0:
            nxt = int(rng.choice(m, p=d2 / total))
        else:
            nxt = int(rng.choice(np.setdiff1d(np.arange(m), centers)))
        centers.append(nxt)
        d2 = np.minimum(d2, ((coords - coords[nxt]) ** 2).sum(axis=1))
    cdist = ((coords[:, None, :] - coords[centers][None, :, :]) ** 2).sum(axis=2)
    return cdist.argmin(axis=1)


def _search_k(
    dm: np.ndarray,
    prior: np.ndarray,
    coords_cell: np.ndarray,
    cell_idx: np.ndarray,
    cand: np.ndarray,
    threshold: float,
    rng: np.random.Generator,
) -> tuple[int, np.ndarray] | None:
    """Largest k whose clustering puts every group past the strict bar."""
    m = len(cell_idx)
    for k in range(m // 2, 0, -1):
        for _ in range(KMEANS_RESTARTS):
            if k == 1:
                labels = np.zeros(m, dtype=int)
            else:
                labels = _kmeanspp_labels(coords_cell, k, rng)
            ok = True
            for c in range(k):
                members = np.flatnonzero(labels == c)
                if len(members) < 2:
                    ok = False
                    break
                if _e_prime_idx(dm, prior, cell_idx[members], cand) < threshold - _FEAS_TOL:
                    ok = False
                    break
            if ok:
                return k, labels
            if k == 1:
                break  # the single-group clustering is deterministic
    return None


def find_k(cell: Cell, domain: Domain, cfg: PrivacyConfig, rng: np.random.Generator) -> int:
    """Per-cell group count: the largest k that admits a strict clustering."""
    cell_idx = np.array([domain.index_of(i) for i in cell.member_ids], dtype=int)
    cand = cell_idx if cfg.restrict_e_prime_to_cell else np.arange(len(domain))
    threshold = math.exp(cfg.epsilon0) * cfg.e_m
    found = _search_k(
        domain.distance_matrix, domain.prior, domain.coords[cell_idx], cell_idx, cand, threshold, rng
    )
    if found is None:
        raise CellInfeasibleError(
            cell.id,
            f"no clustering of {len(cell_idx)} members reaches "
            f"e_prime >= exp(epsilon0) * e_m = {threshold:.6g} with >= 2 members per set",
        )
    return found[0]


class _Group:
    """Mutable cluster state during the grow-with-retreats loop.

    Besides incremental distance and estimate-error bookkeeping, a group
    remembers the budget rate epsilon / (2 * diameter) from the first moment
    it cleared the distortion floor; freezing decisions compare these
    recorded rates, not current ones.
    """

    __slots__ = ("center", "members", "num", "den", "dmin", "diam", "hist")

    def __init__(self, center: int, ctx: "PlsContext", ci: int):
        self.center = center
        self.members = [center]
        g = ctx.cell_indices[ci][center]
        self.num = ctx.prior[g] * ctx.dcand[ci][:, center].copy()
        self.den = float(ctx.prior[g])
        self.dmin = ctx.dcell[ci][:, center].copy()
        self.diam = 0.0
        self.hist: tuple[float, float, int] | None = None

    def add(self, local: int, ctx: "PlsContext", ci: int) -> None:
        col = ctx.dcell[ci][:, local]
        self.diam = max(self.diam, float(col[self.members].max()))
        g = ctx.cell_indices[ci][local]
        self.members.append(local)
        self.num += ctx.prior[g] * ctx.dcand[ci][:, local]
        self.den += float(ctx.prior[g])
        np.minimum(self.dmin, col, out=self.dmin)

    def e_prime(self) -> float:
        return float(self.num.min() / self.den)

    def record_rate(self, ctx: "PlsContext", ci: int, ep: float) -> None:
        """Log the budget rate the first time the floor is cleared.

        Cell members are id-sorted, so the minimal local index doubles as
        the lowest-member-id tie break.
        """
        if self.hist is None and ep > ctx.cfg.e_m and self.diam > 0:
            rate = allocate_epsilon(ep, ctx.cfg) / (2.0 * self.diam)
            self.hist = (rate, self.diam, min(self.members))

    def freeze_key(self) -> tuple[float, float, int]:
        """Sort key for the freeze choice: best rate, then tighter, then id."""
        if self.hist is None:
            return (np.inf, np.inf, 0)
        rate, diam, min_id = self.hist
        return (-rate, diam, min_id)


class PlsContext:
    """Cached geometry plus the per-cell construction loop.

    Built once per run; the evolutionary layer rebuilds thousands of cells,
    so distances, candidate sets, and the per-cell k search are all computed
    up front.
    """

    def __init__(self, domain: Domain, tree: PartitionTree, cfg: PrivacyConfig, seed: int):
        self.domain = domain
        self.tree = tree
        self.cfg = cfg
        self.seed = int(seed)
        self.threshold = math.exp(cfg.epsilon0) * cfg.e_m
        self.prior = domain.prior
        dm = domain.distance_matrix
        self.cell_indices: list[np.ndarray] = []
        self.dcell: list[np.ndarray] = []
        self.dcand: list[np.ndarray] = []
        self.cand: list[np.ndarray] = []
        for cell in tree.cells:
            idx = np.array([domain.index_of(i) for i in cell.member_ids], dtype=int)
            self.cell_indices.append(idx)
            self.dcell.append(dm[np.ix_(idx, idx)])
            cand = idx if cfg.restrict_e_prime_to_cell else np.arange(len(domain))
            self.cand.append(cand)
            self.dcand.append(dm[np.ix_(cand, idx)])
        self.k_by_cell: list[int] = []
        self._fallback_labels: list[np.ndarray] = []
        for ci, cell in enumerate(tree.cells):
            # fixed stream: k_i is a property of the cell, stable across run
            # seeds, or offspring built under a fresh context would drift
            rng = derive_rng(_FINDK_STREAM, ci)
            found = _search_k(
                dm, self.prior, domain.coords[self.cell_indices[ci]],
                self.cell_indices[ci], self.cand[ci], self.threshold, rng,
            )
            if found is None:
                raise CellInfeasibleError(
                    cell.id,
                    f"no clustering of {len(cell.member_ids)} members reaches "
                    f"e_prime >= exp(epsilon0) * e_m = {self.threshold:.6g} with >= 2 members per set",
                )
            self.k_by_cell.append(found[0])
            self._fallback_labels.append(found[1])

    # -- growth ---------------------------------------------------------

    def grow(self, ci: int, center_locals: Sequence[int], rng: np.random.Generator) -> list[_Group]:
        """Run the assignment-with-retreats loop from the given seed centers.

        Each time an open group crosses the strict bar, the open group with
        the best recorded budget rate freezes, the rest dissolve into the
        pool, and fresh random centers are seeded, one fewer than before.
        A single remaining slot absorbs the leftovers unconditionally, so
        the result always has exactly len(center_locals) groups.
        """
        m = len(self.cell_indices[ci])
        pool = np.ones(m, dtype=bool)
        frozen: list[_Group] = []
        active: list[_Group] = []
        for c in center_locals:
            active.append(_Group(int(c), self, ci))
            pool[int(c)] = False
        while True:
            crossed = False
            while pool.any():
                if not active:
                    # unreachable by the reseed arithmetic; kept so a future
                    # change cannot silently drop locations from the cover
                    c = int(rng.choice(np.flatnonzero(pool)))
                    active.append(_Group(c, self, ci))
                    pool[c] = False
                    continue
                dmin_all = active[0].dmin.copy()
                for grp in active[1:]:
                    np.minimum(dmin_all, grp.dmin, out=dmin_all)
                masked = np.where(pool, dmin_all, np.inf)
                local = int(masked.argmin())
                nearest = int(np.argmin([grp.dmin[local] for grp in active]))
                grp = active[nearest]
                grp.add(local, self, ci)
                pool[local] = False
                ep = grp.e_prime()
                grp.record_rate(self, ci, ep)
                if len(active) >= 2 and ep >= self.threshold - _FEAS_TOL:
                    crossed = True
                    break
            if not crossed:
                return frozen + active
            best = min(range(len(active)), key=lambda i: active[i].freeze_key())
            frozen.append(active.pop(best))
            for other in active:
                for mem in other.members:
                    pool[mem] = True
            reseed = len(active)
            active = []
            free = np.flatnonzero(pool)
            for c in rng.choice(free, size=min(reseed, len(free)), replace=False):
                active.append(_Group(int(c), self, ci))
                pool[int(c)] = False

    def _groups_ok(self, groups: list[_Group], strict: bool) -> bool:
        bar = self.threshold - _FEAS_TOL if strict else self.cfg.e_m
        for grp in groups:
            if len(grp.members) < 2:
                return False
            ep = grp.e_prime()
            if strict:
                if ep < bar:
                    return False
            elif ep <= bar:
                return False
        return True

    def _to_plss(self, ci: int, groups: list[_Group]) -> list[Pls]:
        out = []
        ids = self.cell_indices[ci]
        for grp in groups:
            locals_sorted = sorted(grp.members)
            member_ids = tuple(self.domain.locations[ids[l]].id for l in locals_sorted)
            sub = self.dcell[ci][np.ix_(locals_sorted, locals_sorted)]
            ep = grp.e_prime()
            out.append(
                Pls(
                    member_ids=member_ids,
                    diameter=float(sub.max()),
                    e_prime=ep,
                    epsilon=allocate_epsilon(ep, self.cfg),
                    cell_id=self.tree.cells[ci].id,
                )
            )
        return out

    def fallback_plss(self, ci: int) -> list[Pls]:
        """The strict clustering recorded by the k search, as PLS objects."""
        labels = self._fallback_labels[ci]
        groups = []
        for c in range(self.k_by_cell[ci]):
            members = np.flatnonzero(labels == c)
            grp = _Group(int(members[0]), self, ci)
            for local in members[1:]:
                grp.add(int(local), self, ci)
            groups.append(grp)
        return self._to_plss(ci, groups)

    def build_cell(self, ci: int, center_locals: Sequence[int], rng: np.random.Generator) -> list[Pls] | None:
        """Grow from given centers; None when the result is unacceptable.

        Rejects trailing groups that stay at or under the distortion floor,
        and the rare reseed overflow past k_i + 1 groups.
        """
        groups = self.grow(ci, center_locals, rng)
        if len(groups) != len(center_locals) or len(groups) > self.k_by_cell[ci] + 1:
            # a clipped reseed (free pool smaller than the dissolved slots)
            # shrinks the count; rejecting keeps it at the seeded k
            return None
        if not self._groups_ok(groups, strict=False):
            return None
        return self._to_plss(ci, groups)

    def ret_c_cell(self, ci: int, base_key: tuple[int, ...]) -> list[Pls]:
        """Random centers with retries, then the deterministic fallback.

        Each attempt runs on its own stream keyed by (cell, attempt), so the
        result does not depend on how cells are scheduled.
        """
        m = len(self.cell_indices[ci])
        for attempt in range(RETRY_ATTEMPTS):
            rng = derive_rng(self.seed, *base_key, ci, attempt)
            k = min(self.k_by_cell[ci] + int(rng.integers(2)), m // 2)
            centers = rng.choice(m, size=max(k, 1), replace=False)
            built = self.build_cell(ci, [int(c) for c in centers], rng)
            if built is not None:
                return built
        return self.fallback_plss(ci)

    def ret_c_cell_with_rng(self, ci: int, rng: np.random.Generator) -> list[Pls]:
        """Same retry scheme, drawing everything from one caller-owned stream."""
        m = len(self.cell_indices[ci])
        for _ in range(RETRY_ATTEMPTS):
            k = min(self.k_by_cell[ci] + int(rng.integers(2)), m // 2)
            centers = rng.choice(m, size=max(k, 1), replace=False)
            built = self.build_cell(ci, [int(c) for c in centers], rng)
            if built is not None:
                return built
        return self.fallback_plss(ci)

    def ret_c(self, base_key: tuple[int, ...] = ()) -> PlsPartition:
        plss: list[Pls] = []
        for ci in range(len(self.tree.cells)):
            plss.extend(self.ret_c_cell(ci, base_key))
        return PlsPartition(plss=plss, config=self.cfg)


def ret_c(tree: PartitionTree, domain: Domain, cfg: PrivacyConfig, rng: np.random.Generator) -> PlsPartition:
    """Build one full partition into protection sets, all cells covered."""
    ctx = PlsContext(domain, tree, cfg, seed=derive_seed(rng))
    return ctx.ret_c()


def build_reporting_ranges(partition: PlsPartition, domain: Domain, cfg: PrivacyConfig) -> PlsPartition:
    """Attach a reporting range to every PLS.

    Starting from the set itself, whole neighbour sets are absorbed in order
    of centroid distance until the range spans at least min_report_plss sets
    and min_report_locations locations, or the domain is exhausted.
    """
    centroids = np.array(
        [domain.coords[[domain.index_of(i) for i in p.member_ids]].mean(axis=0) for p in partition.plss]
    )
    ranges: list[tuple[int, ...]] = []
    for j, pls in enumerate(partition.plss):
        d = np.sqrt(((centroids - centroids[j]) ** 2).sum(axis=1))
        order = np.lexsort((np.arange(len(d)), d))
        members = list(pls.member_ids)
        n_sets = 1
        for i in order:
            if i == j:
                continue
            if n_sets >= cfg.min_report_plss and len(members) >= cfg.min_report_locations:
                break
            members.extend(partition.plss[i].member_ids)
            n_sets += 1
        ranges.append(tuple(sorted(members)))
    partition.reporting_ranges = ranges
    return partition


def validate_partition(
    partition: PlsPartition,
    domain: Domain,
    cfg: PrivacyConfig,
    tree: PartitionTree | None = None,
) -> list[str]:
    """Recheck every stored invariant; returns human-readable violations."""
    problems: list[str] = []
    seen: dict[int, int] = {}
    for j, pls in enumerate(partition.plss):
        if len(pls.member_ids) < 2:
            problems.append(f"pls {j}: fewer than 2 members")
        for mid in pls.member_ids:
            if mid in seen:
                problems.append(f"location {mid} appears in pls {seen[mid]} and {j}")
            seen[mid] = j
        cand = None
        if cfg.restrict_e_prime_to_cell and tree is not None:
            cand = tree.cells[pls.cell_id].member_ids
        ep = e_prime(pls.member_ids, domain, candidate_ids=cand)
        if abs(ep - pls.e_prime) > 1e-9:
            problems.append(f"pls {j}: stored e_prime {pls.e_prime:.12g} != recomputed {ep:.12g}")
        if ep <= cfg.e_m:
            problems.append(f"pls {j}: e_prime {ep:.6g} does not exceed the floor e_m {cfg.e_m:.6g}")
        eps = allocate_epsilon(ep, cfg)
        if not (0.0 < pls.epsilon <= cfg.epsilon0 + 1e-12):
            problems.append(f"pls {j}: epsilon {pls.epsilon:.6g} outside (0, epsilon0]")
        elif abs(eps - pls.epsilon) > 1e-9:
            problems.append(f"pls {j}: stored epsilon {pls.epsilon:.12g} != allocated {eps:.12g}")
        idx = [domain.index_of(i) for i in pls.member_ids]
        diam = float(domain.distance_matrix[np.ix_(idx, idx)].max())
        if abs(diam - pls.diameter) > 1e-9:
            problems.append(f"pls {j}: stored diameter {pls.diameter:.12g} != recomputed {diam:.12g}")
    all_ids = {loc.id for loc in domain.locations}
    if set(seen) != all_ids:
        missing = sorted(all_ids - set(seen))[:5]
        if missing:
            problems.append(f"locations not covered by any pls: {missing}...")
    if tree is not None:
        for j, pls in enumerate(partition.plss):
            cell_members = set(tree.cells[pls.cell_id].member_ids)
            if not set(pls.member_ids) <= cell_members:
                problems.append(f"pls {j}: members leak outside cell {pls.cell_id}")
    if partition.reporting_ranges is not None:
        if len(partition.reporting_ranges) != len(partition.plss):
            problems.append("reporting_ranges length mismatch")
        else:
            for j, (pls, rng_ids) in enumerate(zip(partition.plss, partition.reporting_ranges)):
                if not set(pls.member_ids) <= set(rng_ids):
                    problems.append(f"pls {j}: reporting range does not contain the set itself")
    return problems


def partition_payload(partition: PlsPartition, meta: dict | None = None) -> dict:
    payload = {
        "plss": [
            {
                "members": list(p.member_ids),
                "epsilon": float(p.epsilon),
                "diameter": float(p.diameter),
                "e_prime": float(p.e_prime),
                "cell_id": p.cell_id,
                "reporting_range": (
                    list(partition.reporting_ranges[j]) if partition.reporting_ranges else None
                ),
            }
            for j, p in enumerate(partition.plss)
        ],
        "meta": {"units": "km"},
    }
    if partition.config is not None:
        payload["meta"].update(
            {
                "epsilon0": partition.config.epsilon0,
                "e_m": partition.config.e_m,
                "n0": partition.config.n0,
                "min_report_locations": partition.config.min_report_locations,
                "min_report_plss": partition.config.min_report_plss,
            }
        )
    if meta:
        payload["meta"].update(meta)
    return payload


def partition_from_payload(payload: dict) -> PlsPartition:
    plss = []
    ranges = []
    have_ranges = True
    for entry in payload["plss"]:
        plss.append(
            Pls(
                member_ids=tuple(int(i) for i in entry["members"]),
                diameter=float(entry["diameter"]),
                e_prime=float(entry["e_prime"]),
                epsilon=float(entry["epsilon"]),
                cell_id=int(entry.get("cell_id", -1)),
            )
        )
        rng_ids = entry.get("reporting_range")
        if rng_ids is None:
            have_ranges = False
        else:
            ranges.append(tuple(int(i) for i in rng_ids))
    meta = payload.get("meta", {})
    config = None
    if "epsilon0" in meta and "e_m" in meta:
        config = PrivacyConfig(
            epsilon0=float(meta["epsilon0"]),
            e_m=float(meta["e_m"]),
            n0=int(meta.get("n0", 33)),
            min_report_locations=int(meta.get("min_report_locations", 50)),
            min_report_plss=int(meta.get("min_report_plss", 2)),
        )
    return PlsPartition(plss=plss, reporting_ranges=ranges if have_ranges else None, config=config)
