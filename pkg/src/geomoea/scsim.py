"""Task-assignment simulator over obfuscated worker locations.

Workers sit at domain locations and report pseudo-locations through a
reporting law (or their true location in the no-privacy setting).  Each
task is geocast to the k idle workers whose reported locations are nearest,
one responder is drawn, and the worker travel distance is the true
responder-to-task distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Domain, Location, distance
from .errors import InvalidConfigError, NoIdleWorkerError
from .mechanism import ObfuscationMatrix, build_matrix, sample_pseudo
from .moea import ParetoFront
from .seeds import derive_seed

MODE_UNIFORM = "uniform"
MODE_ONE_TO_FOUR = "one_to_four"  # 80% of workers inside a dense 20% subregion


@dataclass
class Worker:
    id: int
    true_location: Location
    pseudo_location: Location | None = None
    idle: bool = True


@dataclass(frozen=True)
class Task:
    id: int
    location: Location


@dataclass(frozen=True)
class Assignment:
    task_id: int
    worker_id: int
    wtd: float  # worker travel distance, km


@dataclass(frozen=True)
class SimulationResult:
    mean_wtd: float
    assignments: tuple[Assignment, ...]


def spawn_workers(domain: Domain, count: int, mode: str, rng: np.random.Generator) -> list[Worker]:
    """Place workers at domain locations, uniformly or 4:1 dense-to-sparse."""
    if count < 1:
        raise InvalidConfigError(f"worker count must be >= 1, got {count}")
    n = len(domain)
    if mode == MODE_UNIFORM:
        picks = rng.integers(0, n, size=count)
    elif mode == MODE_ONE_TO_FOUR:
        anchor = int(rng.integers(n))
        cheb = np.max(np.abs(domain.coords - domain.coords[anchor]), axis=1)
        order = np.lexsort((np.arange(n), cheb))
        cut = max(1, math.ceil(0.2 * n))
        dense, sparse = order[:cut], order[cut:]
        n_dense = int(round(0.8 * count))
        picks_dense = dense[rng.integers(0, len(dense), size=n_dense)]
        rest = count - n_dense
        source = sparse if len(sparse) else dense
        picks_rest = source[rng.integers(0, len(source), size=rest)]
        picks = np.concatenate([picks_dense, picks_rest])
    else:
        raise InvalidConfigError(f"unknown worker mode {mode!r}")
    return [Worker(id=i, true_location=domain.locations[int(p)]) for i, p in enumerate(picks)]


def spawn_tasks(domain: Domain, count: int, rng: np.random.Generator) -> list[Task]:
    """Tasks arrive uniformly at domain locations."""
    if count < 1:
        raise InvalidConfigError(f"task count must be >= 1, got {count}")
    picks = rng.integers(0, len(domain), size=count)
    return [Task(id=i, location=domain.locations[int(p)]) for i, p in enumerate(picks)]


def sample_pseudo_locations(workers: list[Worker], matrix: ObfuscationMatrix, rng: np.random.Generator) -> None:
    """Draw every worker's reported location, in worker-id order."""
    for w in sorted(workers, key=lambda w: w.id):
        w.pseudo_location = sample_pseudo(matrix, w.true_location, rng)


def geocast(task: Task, workers: list[Worker], k: int = 3) -> list[Worker]:
    """The k idle workers whose reported locations are nearest the task."""
    idle = [w for w in workers if w.idle]
    if not idle:
        raise NoIdleWorkerError(f"task {task.id}: no idle workers remain")
    for w in idle:
        if w.pseudo_location is None:
            raise InvalidConfigError(f"worker {w.id} has no reported location")
    idle.sort(key=lambda w: (distance(task.location, w.pseudo_location), w.id))
    return idle[: min(k, len(idle))]


def assign(
    task: Task,
    candidates: list[Worker],
    rng: np.random.Generator,
    shared_workers: bool = True,
    distance_weighted: bool = False,
) -> Assignment:
    """Pick a responder among the geocast candidates and log the travel.

    By default every candidate responds with equal probability; with
    distance_weighted, response odds scale with inverse true distance.
    shared_workers=False marks the responder busy for later tasks.
    """
    if not candidates:
        raise InvalidConfigError(f"task {task.id}: empty candidate list")
    if distance_weighted:
        d = np.array([distance(task.location, w.true_location) for w in candidates])
        weights = 1.0 / (d + 1e-9)
        responder = candidates[int(rng.choice(len(candidates), p=weights / weights.sum()))]
    else:
        responder = candidates[int(rng.integers(len(candidates)))]
    if not shared_workers:
        responder.idle = False
    return Assignment(
        task_id=task.id,
        worker_id=responder.id,
        wtd=distance(task.location, responder.true_location),
    )


def run_simulation(
    domain: Domain,
    mechanism: ObfuscationMatrix | ParetoFront | None,
    workers: list[Worker],
    tasks: list[Task],
    rng: np.random.Generator,
    k: int = 3,
    shared_workers: bool = True,
    distance_weighted: bool = False,
) -> SimulationResult:
    """End-to-end run: report, geocast, assign, aggregate.

    mechanism may be a matrix, a Pareto front (its lowest-quality-loss
    member is used), or None for the no-privacy baseline.  Sampling and
    assignment draw from separate child streams of rng, so the no-privacy
    run and an identity matrix produce identical assignments under equal
    seeds.
    """
    sample_rng = np.random.default_rng(derive_seed(rng))
    assign_rng = np.random.default_rng(derive_seed(rng))
    for w in workers:
        w.idle = True
    if mechanism is None:
        for w in workers:
            w.pseudo_location = w.true_location
    else:
        if isinstance(mechanism, ParetoFront):
            best = min(mechanism.members, key=lambda ind: ind.objectives)
            mechanism = build_matrix(best.partition, domain)
        sample_pseudo_locations(workers, mechanism, sample_rng)
    assignments = []
    for task in sorted(tasks, key=lambda t: t.id):
        candidates = geocast(task, workers, k=k)
        assignments.append(
            assign(task, candidates, assign_rng, shared_workers=shared_workers,
                   distance_weighted=distance_weighted)
        )
    mean_wtd = float(np.mean([a.wtd for a in assignments]))
    return SimulationResult(mean_wtd=mean_wtd, assignments=tuple(assignments))
