"""End-to-end orchestration: dataset to front to simulation artifacts.

Everything here is pure computation over JSON-ready dicts; file layout and
transport belong to the CLI and the HTTP service.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .adversary import min_conditional_error
from .domain import DatasetSpec, Domain, domain_payload, load_domain
from .errors import CellInfeasibleError, InvalidConfigError
from .mechanism import (
    ObfuscationMatrix,
    build_matrix,
    matrix_payload,
    row_sums,
    verify_cross_pls,
    verify_dp_within_pls,
)
from .moea import (
    Individual,
    MoeaConfig,
    ParetoFront,
    dpive_baseline,
    evolve,
    front_payload,
    pso_baseline,
    pso_budget,
)
from .partition import binary_partition, cells_payload
from .pls import PrivacyConfig, partition_payload
from .scsim import MODE_UNIFORM, run_simulation, spawn_tasks, spawn_workers


@dataclass(frozen=True)
class SimConfig:
    workers: int = 2000
    tasks: int = 200
    mode: str = MODE_UNIFORM
    geocast_k: int = 3
    shared_workers: bool = True
    distance_weighted: bool = False
    compare_non_privacy: bool = True
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSpec
    privacy: PrivacyConfig = PrivacyConfig()
    moea: MoeaConfig = MoeaConfig()
    sim: SimConfig = SimConfig()
    baselines: tuple[str, ...] = ()
    pso_alphas: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))
    pso_particles: int | None = None
    pso_iterations: int | None = None
    n_threads: int = 1


def _baseline_summaries(dpive: Individual | None, pso: list[tuple[float, Individual]] | None) -> dict:
    out: dict = {}
    if dpive is not None:
        pair = dpive.partition.objectives
        out["dpive"] = {"qloss": pair.qloss, "exp_err": pair.exp_err}
    if pso is not None:
        out["pso"] = [
            {
                "alpha": alpha,
                "qloss": ind.partition.objectives.qloss,
                "exp_err": ind.partition.objectives.exp_err,
                "fitness": alpha * ind.partition.objectives.qloss
                - (1 - alpha) * ind.partition.objectives.exp_err,
            }
            for alpha, ind in pso
        ]
    return out


def run_optimize(
    domain: Domain,
    privacy: PrivacyConfig,
    moea: MoeaConfig,
    baselines: tuple[str, ...] = (),
    pso_alphas: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11)),
    pso_particles: int | None = None,
    pso_iterations: int | None = None,
    n_threads: int = 1,
):
    """Partition, evolve, and optionally run baselines on a loaded domain."""
    tree = binary_partition(domain, privacy.n0)
    front = evolve(domain, tree, privacy, moea, n_threads=n_threads)
    dpive = pso = None
    if "dpive" in baselines:
        dpive = dpive_baseline(domain, tree, privacy, np.random.default_rng(moea.seed))
    if "pso" in baselines:
        if pso_particles is None and pso_iterations is None:
            # match what the evolutionary run just spent
            pso_particles, pso_iterations = pso_budget(front, moea, len(pso_alphas))
        pso = pso_baseline(
            domain, tree, privacy, pso_alphas, moea,
            particles=pso_particles, iterations=pso_iterations,
        )
    return tree, front, dpive, pso


def run_pipeline(cfg: RunConfig) -> dict:
    """Full run; returns every artifact as a JSON-ready payload."""
    domain = load_domain(cfg.dataset)
    tree, front, dpive, pso = run_optimize(
        domain, cfg.privacy, cfg.moea, cfg.baselines, cfg.pso_alphas,
        cfg.pso_particles, cfg.pso_iterations, cfg.n_threads,
    )

    extreme = front.members[0]  # members sorted by qloss ascending
    matrix = build_matrix(extreme.partition, domain)

    sim = cfg.sim
    workers = spawn_workers(domain, sim.workers, sim.mode, np.random.default_rng(sim.seed))
    tasks = spawn_tasks(domain, sim.tasks, np.random.default_rng(sim.seed + 1))
    result = run_simulation(
        domain, matrix, workers, tasks, np.random.default_rng(sim.seed + 2),
        k=sim.geocast_k, shared_workers=sim.shared_workers,
        distance_weighted=sim.distance_weighted,
    )
    non_privacy_wtd = None
    if sim.compare_non_privacy:
        reference = run_simulation(
            domain, None, workers, tasks, np.random.default_rng(sim.seed + 2),
            k=sim.geocast_k, shared_workers=sim.shared_workers,
            distance_weighted=sim.distance_weighted,
        )
        non_privacy_wtd = reference.mean_wtd

    pair = extreme.partition.objectives
    meta = {
        "seed": {"dataset": cfg.dataset.seed, "moea": cfg.moea.seed, "sim": sim.seed},
        "epsilon0": cfg.privacy.epsilon0,
        "e_m": cfg.privacy.e_m,
        "n0": cfg.privacy.n0,
    }
    summary = {
        "qloss": pair.qloss,
        "exp_err": pair.exp_err,
        "min_cond_err": min_conditional_error(domain, matrix),
        "hv": front.hv_trace[-1],
        "generations": len(front.hv_trace) - 1,
        "front_size": len(front.members),
        "mean_wtd": result.mean_wtd,
        "non_privacy_mean_wtd": non_privacy_wtd,
        "workers": sim.workers,
        "tasks": sim.tasks,
        "mode": sim.mode,
        "units": "km",
        **meta,
        "baselines": _baseline_summaries(dpive, pso),
    }
    dom_payload = domain_payload(domain, meta={"seed": cfg.dataset.seed})
    part_payload = partition_payload(extreme.partition, meta={"seed": cfg.moea.seed})
    part_payload["domain"] = dom_payload
    return {
        "domain": dom_payload,
        "cells": cells_payload(tree),
        "front": front_payload(front, meta=meta),
        "partition": part_payload,
        "matrix": matrix_payload(matrix),
        "assignments": [
            {"task_id": a.task_id, "worker_id": a.worker_id, "wtd": a.wtd}
            for a in result.assignments
        ],
        "summary": summary,
        "baselines": _baseline_summaries(dpive, pso),
    }


def run_sweep(cfg: RunConfig, eps0_values: list[float], em_values: list[float]) -> list[dict]:
    """Hypervolume and mean travel distance over a budget/floor grid.

    Infeasible grid points (some cell admits no valid group) are reported
    with null metrics instead of failing the whole sweep.
    """
    rows = []
    for eps0 in eps0_values:
        for em in em_values:
            privacy = dataclasses.replace(cfg.privacy, epsilon0=float(eps0), e_m=float(em))
            point = dataclasses.replace(cfg, privacy=privacy)
            try:
                result = run_pipeline(point)
                rows.append(
                    {
                        "eps0": float(eps0),
                        "e_m": float(em),
                        "hv": result["summary"]["hv"],
                        "mean_wtd": result["summary"]["mean_wtd"],
                        "error": None,
                    }
                )
            except CellInfeasibleError as exc:
                rows.append(
                    {"eps0": float(eps0), "e_m": float(em), "hv": None, "mean_wtd": None,
                     "error": str(exc)}
                )
    return rows


def verify_report(
    domain: Domain,
    matrix: ObfuscationMatrix,
    partition,
    epsilon0: float | None = None,
    e_m: float | None = None,
) -> dict:
    """Audit a published matrix against its guarantees.

    Returns ``{"passed": bool, "checks": [...]}`` where each check carries the
    observed value, the bound it was held to, and a short human detail line.
    Budget parameters default to the ones recorded on the partition.
    """
    cfg = getattr(partition, "config", None)
    eps0 = epsilon0 if epsilon0 is not None else (cfg.epsilon0 if cfg else None)
    floor = e_m if e_m is not None else (cfg.e_m if cfg else None)
    if eps0 is None or floor is None:
        raise InvalidConfigError(
            "epsilon0 and e_m are required; pass them or use a partition that records them"
        )
    checks = []

    sums = row_sums(matrix)
    dev = np.abs(sums - 1.0)
    worst = int(np.argmax(dev))
    checks.append(
        {
            "name": "row_stochastic",
            "passed": bool(dev[worst] <= 1e-9),
            "observed": float(sums[worst]),
            "bound": 1e-9,
            "detail": f"worst row true_id={matrix.row_ids[worst]} sums to {sums[worst]:.12f}",
        }
    )

    shape_ok, shape_detail = True, "all rows sorted, nonnegative, inside the domain"
    known = set(int(loc.id) for loc in domain.locations)
    for k, support in enumerate(matrix.supports):
        if np.any(np.diff(support) <= 0):
            shape_ok, shape_detail = False, f"row true_id={matrix.row_ids[k]} support not strictly ascending"
            break
        if np.any(matrix.probs[k] < 0):
            shape_ok, shape_detail = False, f"row true_id={matrix.row_ids[k]} has negative probabilities"
            break
        if not set(int(i) for i in support) <= known:
            shape_ok, shape_detail = False, f"row true_id={matrix.row_ids[k]} reports unknown locations"
            break
    checks.append(
        {"name": "support_shape", "passed": shape_ok, "observed": None, "bound": None,
         "detail": shape_detail}
    )

    dp = verify_dp_within_pls(matrix, partition, eps0)
    checks.append(
        {
            "name": "dp_within_pls",
            "passed": bool(dp.passed),
            "observed": float(dp.max_ratio),
            "bound": float(dp.bound),
            "detail": f"worst within-set ratio at {dp.worst}",
        }
    )

    n_pairs, n_bad, worst_margin, worst_pair = 0, 0, 0.0, None
    worst_obs, worst_bound = 0.0, float("inf")
    plss = partition.plss
    ranges = partition.reporting_ranges
    if ranges is not None:
        for i in range(len(plss)):
            for j in range(len(plss)):
                if i == j:
                    continue
                rep = verify_cross_pls(matrix, partition, i, j, eps0)
                if not rep.applicable:
                    continue
                n_pairs += 1
                if not rep.passed:
                    n_bad += 1
                margin = rep.observed / rep.bound if rep.bound > 0 else float("inf")
                if margin > worst_margin:
                    worst_margin = margin
                    worst_pair = rep.pair
                    worst_obs, worst_bound = rep.observed, rep.bound
        detail = f"{n_pairs} overlapping ordered pairs, {n_bad} violations"
        if worst_pair is not None:
            detail += f"; tightest pair {worst_pair} at {worst_margin:.4f} of bound"
        checks.append(
            {
                "name": "cross_pls",
                "passed": n_bad == 0,
                "observed": float(worst_obs) if worst_pair is not None else None,
                "bound": float(worst_bound) if worst_pair is not None else None,
                "detail": detail,
            }
        )
    else:
        checks.append(
            {"name": "cross_pls", "passed": True, "observed": None, "bound": None,
             "detail": "no reporting ranges recorded, nothing to compare"}
        )

    mce = float(min_conditional_error(domain, matrix))
    checks.append(
        {
            "name": "error_floor",
            "passed": bool(mce >= floor - 1e-9),
            "observed": mce,
            "bound": float(floor),
            "detail": "smallest conditional inference error over reachable outputs",
        }
    )

    return {"passed": all(c["passed"] for c in checks), "checks": checks}
