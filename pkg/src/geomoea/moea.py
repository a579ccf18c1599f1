"""Multi-objective search over protection-set partitions.

Individuals are whole partitions; objectives are (quality loss, negated
inference error), both minimized.  Variation re-seeds the per-cell
construction from medoid centers of selected parents, so every offspring is
feasible by construction.  An external archive of all non-dominated
solutions ever evaluated provides a monotone hypervolume trace; the
returned front is the first front of the final population.

Two reference optimizers are included for comparisons: a scalarized
particle-swarm search over the same representation and a one-shot
strict-budget baseline that keeps reporting ranges inside each cell.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .adversary import ObjectivePair, evaluate_objectives
from .domain import Domain
from .errors import InvalidConfigError
from .mechanism import build_matrix, mechanism_row
from .partition import PartitionTree
from .pls import (
    KMEANS_RESTARTS,
    Pls,
    PlsContext,
    PlsPartition,
    PrivacyConfig,
    build_reporting_ranges,
)
from .seeds import derive_rng, derive_seed

HV_PATIENCE = 10  # generations of sub-threshold improvement before stopping
_PSO_WEIGHTS = np.array([0.729, 1.49445, 1.49445])  # inertia, cognitive, social


@dataclass
class Individual:
    partition: PlsPartition
    objectives: tuple[float, float] | None = None  # (qloss, -exp_err), minimized
    rank: int = 0
    crowding: float = 0.0


@dataclass(frozen=True)
class MoeaConfig:
    population: int = 40
    max_generations: int = 500
    hv_epsilon: float | None = None  # None: 1e-6 x first-generation hypervolume
    tournament_pool: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.population < 4 or self.population % 2 != 0:
            raise InvalidConfigError(f"population must be even and >= 4, got {self.population}")
        if self.max_generations < 1:
            raise InvalidConfigError("max_generations must be >= 1")
        if self.tournament_pool < 2:
            raise InvalidConfigError("tournament_pool must be >= 2")


@dataclass
class ParetoFront:
    members: list[Individual]
    hv_trace: list[float]
    reference: tuple[float, float]


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True when a is no worse everywhere and better somewhere (minimization)."""
    no_worse = all(x <= y for x, y in zip(a, b))
    better = any(x < y for x, y in zip(a, b))
    return no_worse and better


def fast_nondominated_sort(objectives: Sequence[tuple[float, ...]]) -> list[list[int]]:
    """Indices grouped into fronts, best first; order within a front is stable."""
    n = len(objectives)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    counts = [0] * n
    fronts: list[list[int]] = [[]]
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(objectives[i], objectives[j]):
                dominated_by[i].append(j)
                counts[j] += 1
            elif dominates(objectives[j], objectives[i]):
                dominated_by[j].append(i)
                counts[i] += 1
        if counts[i] == 0:
            fronts[0].append(i)
    current = 0
    while fronts[current]:
        nxt: list[int] = []
        for i in fronts[current]:
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(j)
        current += 1
        fronts.append(sorted(nxt))
    fronts.pop()
    return fronts


def crowding_distance(objectives: Sequence[tuple[float, ...]]) -> np.ndarray:
    """Per-point crowding within one front; boundaries get +inf."""
    k = len(objectives)
    dist = np.zeros(k)
    if k == 0:
        return dist
    arr = np.asarray(objectives, dtype=float)
    if k <= 2:
        return np.full(k, np.inf)
    for obj in range(arr.shape[1]):
        order = np.argsort(arr[:, obj], kind="stable")
        vals = arr[order, obj]
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        span = vals[-1] - vals[0]
        if span > 0:
            dist[order[1:-1]] += (vals[2:] - vals[:-2]) / span
    return dist


def binary_tournament(pop: Sequence[Individual], rng: np.random.Generator) -> Individual:
    """Pick two at random; lower rank wins, then higher crowding, then a coin."""
    i, j = rng.integers(len(pop), size=2)
    a, b = pop[i], pop[j]
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.random() < 0.5 else b


def hypervolume(points: Sequence[tuple[float, float]], reference: tuple[float, float]) -> float:
    """Dominated area between a 2-D front and the reference (minimization)."""
    pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return 0.0
    ref = np.asarray(reference, dtype=float)
    if np.any(pts > ref):
        raise InvalidConfigError("every point must be <= the reference componentwise")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    kept: list[np.ndarray] = []
    best = np.inf
    for p in pts:
        if p[1] < best:
            kept.append(p)
            best = p[1]
    hv = 0.0
    for i, p in enumerate(kept):
        next_x = kept[i + 1][0] if i + 1 < len(kept) else ref[0]
        hv += (next_x - p[0]) * (ref[1] - p[1])
    return float(hv)


# -- variation --------------------------------------------------------------


def _plss_by_cell(partition: PlsPartition, n_cells: int) -> list[list[Pls]]:
    grouped: list[list[Pls]] = [[] for _ in range(n_cells)]
    for pls in partition.plss:
        grouped[pls.cell_id].append(pls)
    return grouped


class _Variation:
    """Medoid-seeded rebuild machinery shared by all optimizers."""

    def __init__(self, ctx: PlsContext):
        self.ctx = ctx
        self._medoids: dict[tuple, int] = {}

    def medoid_local(self, ci: int, pls: Pls) -> int:
        key = (ci, pls.member_ids)
        got = self._medoids.get(key)
        if got is not None:
            return got
        cell_ids = self.ctx.tree.cells[ci].member_ids
        locals_ = np.searchsorted(np.asarray(cell_ids), np.asarray(pls.member_ids))
        sub = self.ctx.dcell[ci][np.ix_(locals_, locals_)]
        medoid = int(locals_[int(np.argmin(sub.sum(axis=1)))])
        self._medoids[key] = medoid
        return medoid

    def rebuild_cell(self, ci: int, centers: Sequence[int], rng: np.random.Generator) -> list[Pls]:
        built = self.ctx.build_cell(ci, centers, rng)
        if built is None:
            built = self.ctx.ret_c_cell_with_rng(ci, rng)
        return built

    def crossover_cell(self, ci: int, parents: Sequence[Individual], rng: np.random.Generator) -> list[Pls]:
        ctx = self.ctx
        m = len(ctx.cell_indices[ci])
        pool = sorted(
            {
                self.medoid_local(ci, pls)
                for parent in parents
                for pls in _plss_by_cell(parent.partition, len(ctx.tree.cells))[ci]
            }
        )
        k = min(ctx.k_by_cell[ci] + int(rng.integers(2)), m // 2)
        k = max(k, 1)
        if len(pool) >= k:
            centers = list(rng.choice(pool, size=k, replace=False))
        else:
            extra = np.setdiff1d(np.arange(m), pool)
            need = k - len(pool)
            centers = pool + list(rng.choice(extra, size=need, replace=False))
        return self.rebuild_cell(ci, [int(c) for c in centers], rng)

    def mutate_cell(self, ci: int, parent: Individual, rng: np.random.Generator) -> list[Pls]:
        ctx = self.ctx
        m = len(ctx.cell_indices[ci])
        plss = _plss_by_cell(parent.partition, len(ctx.tree.cells))[ci]
        centers = [self.medoid_local(ci, pls) for pls in plss]
        n_replace = math.ceil(len(centers) / 2)
        which = rng.choice(len(centers), size=n_replace, replace=False)
        others = np.setdiff1d(np.arange(m), centers)
        fresh = rng.choice(others, size=n_replace, replace=False)
        for slot, val in zip(which, fresh):
            centers[int(slot)] = int(val)
        return self.rebuild_cell(ci, centers, rng)

    def offspring(
        self,
        kind: str,
        parents: Sequence[Individual],
        rng: np.random.Generator,
    ) -> PlsPartition:
        plss: list[Pls] = []
        for ci in range(len(self.ctx.tree.cells)):
            if kind == "crossover":
                plss.extend(self.crossover_cell(ci, parents, rng))
            else:
                plss.extend(self.mutate_cell(ci, parents[0], rng))
        return PlsPartition(plss=plss, config=self.ctx.cfg)


def crossover(
    parents: Sequence[Individual],
    tree: PartitionTree,
    domain: Domain,
    cfg: PrivacyConfig,
    rng: np.random.Generator,
) -> Individual:
    """Recombine parent partitions cell by cell from their medoid centers."""
    ctx = PlsContext(domain, tree, cfg, seed=derive_seed(rng))
    var = _Variation(ctx)
    return Individual(partition=var.offspring("crossover", parents, rng))


def mutate(
    ind: Individual,
    tree: PartitionTree,
    domain: Domain,
    cfg: PrivacyConfig,
    rng: np.random.Generator,
) -> Individual:
    """Swap out about half of each cell's centers and regrow the groups."""
    ctx = PlsContext(domain, tree, cfg, seed=derive_seed(rng))
    var = _Variation(ctx)
    return Individual(partition=var.offspring("mutate", [ind], rng))


# -- main loop ---------------------------------------------------------------


def _evaluate(partition: PlsPartition, domain: Domain, cfg: PrivacyConfig) -> Individual:
    build_reporting_ranges(partition, domain, cfg)
    pair = evaluate_objectives(domain, build_matrix(partition, domain))
    partition.objectives = pair
    return Individual(partition=partition, objectives=(pair.qloss, -pair.exp_err))


def _update_archive(archive: list[Individual], new: Sequence[Individual]) -> list[Individual]:
    seen: set[tuple[float, float]] = set()
    merged: list[Individual] = []
    for ind in list(archive) + list(new):
        if ind.objectives in seen:
            continue
        seen.add(ind.objectives)
        merged.append(ind)
    fronts = fast_nondominated_sort([ind.objectives for ind in merged])
    return [merged[i] for i in fronts[0]]


def _archive_hv(archive: Sequence[Individual], reference: tuple[float, float]) -> float:
    inside = [
        ind.objectives
        for ind in archive
        if ind.objectives[0] <= reference[0] and ind.objectives[1] <= reference[1]
    ]
    return hypervolume(inside, reference)


def _survival(merged: list[Individual], n: int) -> list[Individual]:
    fronts = fast_nondominated_sort([ind.objectives for ind in merged])
    out: list[Individual] = []
    for rank, front in enumerate(fronts):
        crowd = crowding_distance([merged[i].objectives for i in front])
        for pos, i in enumerate(front):
            merged[i].rank = rank
            merged[i].crowding = float(crowd[pos])
        if len(out) + len(front) <= n:
            out.extend(merged[i] for i in front)
        else:
            order = np.lexsort((np.arange(len(front)), -crowd))
            out.extend(merged[front[int(p)]] for p in order[: n - len(out)])
            break
        if len(out) == n:
            break
    return out


def evolve(
    domain: Domain,
    tree: PartitionTree,
    cfg: PrivacyConfig,
    mcfg: MoeaConfig,
    n_threads: int = 1,
    on_generation: Callable[[int, float], None] | None = None,
) -> ParetoFront:
    """Run the full search and return the final first front with its trace.

    The hypervolume trace is computed over an archive of every non-dominated
    solution seen, which keeps it non-decreasing even when crowding-based
    truncation drops a population front member.
    """
    ctx = PlsContext(domain, tree, cfg, seed=mcfg.seed)
    var = _Variation(ctx)
    n = mcfg.population

    def run_jobs(jobs: list[Callable[[], Individual]]) -> list[Individual]:
        if n_threads > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                return list(pool.map(lambda j: j(), jobs))
        return [job() for job in jobs]

    def initial(slot: int) -> Callable[[], Individual]:
        return lambda: _evaluate(ctx.ret_c(base_key=(0, slot + 1)), domain, cfg)

    pop = run_jobs([initial(s) for s in range(n)])

    pts = np.asarray([ind.objectives for ind in pop])
    mx = pts.max(axis=0)
    reference = tuple(float(v + 0.1 * abs(v)) if v != 0 else 1e-12 for v in mx)

    archive = _update_archive([], pop)
    hv_trace = [_archive_hv(archive, reference)]
    hv_eps = mcfg.hv_epsilon
    if hv_eps is None:
        hv_eps = 1e-6 * hv_trace[0] if hv_trace[0] > 0 else 1e-12

    pop = _survival(pop, n)  # assigns ranks and crowding for the first tournament
    stall = 0
    for gen in range(1, mcfg.max_generations + 1):
        sel_rng = derive_rng(mcfg.seed, gen, 0)
        parents = [binary_tournament(pop, sel_rng) for _ in range(n // 2)]
        n_cross = n // 4

        def offspring_job(slot: int) -> Callable[[], Individual]:
            def build() -> Individual:
                rng = derive_rng(mcfg.seed, gen, slot + 1)
                if slot < n_cross:
                    chosen = [parents[int(rng.integers(len(parents)))] for _ in range(mcfg.tournament_pool)]
                    part = var.offspring("crossover", chosen, rng)
                else:
                    parent = parents[int(rng.integers(len(parents)))]
                    part = var.offspring("mutate", [parent], rng)
                return _evaluate(part, domain, cfg)

            return build

        offspring = run_jobs([offspring_job(s) for s in range(n // 2)])
        archive = _update_archive(archive, offspring)
        hv_trace.append(_archive_hv(archive, reference))
        pop = _survival(pop + offspring, n)
        if on_generation is not None:
            on_generation(gen, hv_trace[-1])
        if hv_trace[-1] - hv_trace[-2] < hv_eps:
            stall += 1
            if stall >= HV_PATIENCE:
                break
        else:
            stall = 0

    members = sorted(
        (ind for ind in pop if ind.rank == 0), key=lambda ind: ind.objectives
    )
    return ParetoFront(members=members, hv_trace=hv_trace, reference=reference)


# -- baselines ---------------------------------------------------------------

_PSO_STREAM = 1 << 21  # spawn-key namespace separating swarm draws from evolve


def pso_budget(front: ParetoFront, mcfg: MoeaConfig, n_alphas: int) -> tuple[int, int]:
    """Swarm size and iterations matching what an evolve run actually spent.

    evolve evaluates population + generations * population / 2 partitions;
    the swarm evaluates particles * (iterations + 1) per alpha.  Equal
    totals keep head-to-head comparisons honest.
    """
    gens = len(front.hv_trace) - 1
    evals = mcfg.population + gens * mcfg.population // 2
    particles = mcfg.population
    return particles, max(1, round(evals / (particles * n_alphas)) - 1)


def pso_baseline(
    domain: Domain,
    tree: PartitionTree,
    cfg: PrivacyConfig,
    alphas: Sequence[float],
    mcfg: MoeaConfig | None = None,
    particles: int | None = None,
    iterations: int | None = None,
) -> list[tuple[float, Individual]]:
    """Scalarized swarm search, one run per weight alpha.

    Fitness alpha * qloss - (1 - alpha) * exp_err is minimized.  A particle
    moves by picking one source partition (its current, its personal best,
    or the global best, drawn with inertia/cognitive/social weights, the
    latter two scaled by fresh uniforms as in the standard velocity rule)
    and rebuilding every cell from that source's medoid centers.  The draw
    is per move, not per cell: mixing cells across sources would smuggle in
    a crossover, and this baseline is defined without one.
    """
    mcfg = mcfg if mcfg is not None else MoeaConfig()
    n_p = particles if particles is not None else mcfg.population
    iters = iterations if iterations is not None else mcfg.max_generations
    ctx = PlsContext(domain, tree, cfg, seed=mcfg.seed)
    var = _Variation(ctx)
    inertia, cognitive, social = _PSO_WEIGHTS
    results: list[tuple[float, Individual]] = []
    for ai, alpha in enumerate(alphas):
        def fitness(ind: Individual) -> float:
            pair = ind.partition.objectives
            return alpha * pair.qloss - (1.0 - alpha) * pair.exp_err

        current = [
            _evaluate(ctx.ret_c(base_key=(_PSO_STREAM, ai, 0, p + 1)), domain, cfg)
            for p in range(n_p)
        ]
        pbest = list(current)
        gbest = min(pbest, key=lambda ind: (fitness(ind), ind.objectives))
        for it in range(1, iters + 1):
            for p in range(n_p):
                rng = derive_rng(mcfg.seed, _PSO_STREAM, ai, it, p + 1)
                sources = (current[p], pbest[p], gbest)
                r1, r2 = rng.random(2)
                weights = np.array([inertia, cognitive * r1, social * r2])
                src = sources[int(rng.choice(3, p=weights / weights.sum()))]
                by_cell = _plss_by_cell(src.partition, len(tree.cells))
                plss: list[Pls] = []
                for ci in range(len(tree.cells)):
                    centers = [var.medoid_local(ci, pls) for pls in by_cell[ci]]
                    plss.extend(var.rebuild_cell(ci, centers, rng))
                cand = _evaluate(PlsPartition(plss=plss, config=cfg), domain, cfg)
                current[p] = cand
                if fitness(cand) <= fitness(pbest[p]):
                    pbest[p] = cand
            gbest = min(pbest, key=lambda ind: (fitness(ind), ind.objectives))
        results.append((float(alpha), gbest))
    return results


def _cell_quality_loss(ctx: PlsContext, ci: int, plss: Sequence[Pls]) -> float:
    """Quality loss restricted to one cell with the cell as reporting range."""
    domain = ctx.domain
    cell_ids = ctx.tree.cells[ci].member_ids
    total = 0.0
    for pls in plss:
        for mid in pls.member_ids:
            i = domain.index_of(mid)
            row = mechanism_row(domain.locations[i], pls, cell_ids, domain)
            total += domain.prior[i] * float(row @ domain.distance_matrix[i, ctx.cell_indices[ci]])
    return total


def dpive_baseline(
    domain: Domain,
    tree: PartitionTree,
    cfg: PrivacyConfig,
    rng: np.random.Generator,
) -> Individual:
    """Strict-budget one-shot baseline with cell-local reporting ranges.

    Every group must clear the full-budget bar (so epsilon = epsilon0
    everywhere) and reports only within its own cell; per cell the best of
    the deterministic clustering plus several strict random builds is kept
    by cell-local quality loss.
    """
    ctx = PlsContext(domain, tree, cfg, seed=derive_seed(rng))
    plss: list[Pls] = []
    ranges: list[tuple[int, ...]] = []
    for ci, cell in enumerate(tree.cells):
        m = len(ctx.cell_indices[ci])
        candidates = [ctx.fallback_plss(ci)]
        for attempt in range(KMEANS_RESTARTS):
            arng = derive_rng(ctx.seed, _PSO_STREAM + 1, ci, attempt)
            centers = arng.choice(m, size=max(ctx.k_by_cell[ci], 1), replace=False)
            groups = ctx.grow(ci, [int(c) for c in centers], arng)
            if ctx._groups_ok(groups, strict=True):
                candidates.append(ctx._to_plss(ci, groups))
        best = min(candidates, key=lambda cand: _cell_quality_loss(ctx, ci, cand))
        plss.extend(best)
        ranges.extend([cell.member_ids] * len(best))
    partition = PlsPartition(plss=plss, reporting_ranges=ranges, config=cfg)
    pair = evaluate_objectives(domain, build_matrix(partition, domain))
    partition.objectives = pair
    return Individual(partition=partition, objectives=(pair.qloss, -pair.exp_err))


def front_payload(front: ParetoFront, meta: dict | None = None) -> dict:
    from .pls import partition_payload

    payload = {
        "reference": [float(front.reference[0]), float(front.reference[1])],
        "objective_order": ["qloss", "negated_exp_err"],
        "hv_trace": [float(h) for h in front.hv_trace],
        "members": [
            {
                "qloss": float(ind.partition.objectives.qloss),
                "exp_err": float(ind.partition.objectives.exp_err),
                "partition": partition_payload(ind.partition),
            }
            for ind in front.members
        ],
        "meta": meta or {},
    }
    return payload
