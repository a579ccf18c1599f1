"""HTTP facade over the pipeline.

Every endpoint delegates to the core package and returns the same JSON-ready
payloads the CLI writes to disk; domain errors surface as structured 422s.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..adversary import evaluate_objectives, min_conditional_error
from ..domain import Domain, domain_payload
from ..errors import GeomoeaError, InvalidConfigError
from ..moea import front_payload
from ..partition import binary_partition, cells_payload
from ..pipeline import run_optimize, run_pipeline, run_sweep, verify_report
from ..pls import partition_payload
from ..scsim import run_simulation, spawn_tasks, spawn_workers
from .models import (
    EvaluateRequest,
    EvaluateResponse,
    HealthResponse,
    OptimizeRequest,
    OptimizeResponse,
    PartitionRequest,
    PartitionResponse,
    PipelineRequest,
    PipelineResponse,
    SimulateRequest,
    SimulateResponse,
    SweepRequest,
    SweepResponse,
    VerifyRequest,
    VerifyResponse,
)


def _resolve_domain(dataset, domain) -> Domain:
    if domain is not None:
        return domain.to_domain()
    return dataset.load()


def create_app() -> FastAPI:
    app = FastAPI(title="geomoea", version=__version__)

    @app.exception_handler(GeomoeaError)
    async def _domain_error(request: Request, exc: GeomoeaError) -> JSONResponse:
        return JSONResponse(
            status_code=422,
            content={"error": {"type": type(exc).__name__, "message": str(exc)}},
        )

    @app.get("/health", response_model=HealthResponse)
    async def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/partition", response_model=PartitionResponse)
    def partition(req: PartitionRequest) -> PartitionResponse:
        domain = _resolve_domain(req.dataset, req.domain)
        tree = binary_partition(domain, req.n0)
        return PartitionResponse(domain=domain_payload(domain), cells=cells_payload(tree))

    @app.post("/optimize", response_model=OptimizeResponse)
    def optimize(req: OptimizeRequest) -> OptimizeResponse:
        domain = _resolve_domain(req.dataset, req.domain)
        privacy = req.privacy.to_config()
        tree, front, dpive, pso = run_optimize(
            domain, privacy, req.moea.to_config(), tuple(req.baselines),
            tuple(req.pso_alphas), req.pso_particles, req.pso_iterations, req.n_threads,
        )
        baselines = {}
        if dpive is not None:
            pair = dpive.partition.objectives
            baselines["dpive"] = {"qloss": pair.qloss, "exp_err": pair.exp_err}
        if pso is not None:
            baselines["pso"] = [
                {"alpha": a, "qloss": ind.partition.objectives.qloss,
                 "exp_err": ind.partition.objectives.exp_err,
                 "fitness": a * ind.partition.objectives.qloss
                 - (1 - a) * ind.partition.objectives.exp_err}
                for a, ind in pso
            ]
        extreme = front.members[0]
        part_payload = partition_payload(extreme.partition, meta={"seed": req.moea.seed})
        part_payload["domain"] = domain_payload(domain)
        return OptimizeResponse(
            domain=domain_payload(domain),
            cells=cells_payload(tree),
            front=front_payload(front),
            partition=part_payload,
            baselines=baselines,
        )

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        domain = req.domain.to_domain()
        matrix = req.matrix.to_matrix(domain)
        pair = evaluate_objectives(domain, matrix)
        return EvaluateResponse(
            qloss=pair.qloss,
            exp_err=pair.exp_err,
            min_cond_err=min_conditional_error(domain, matrix),
        )

    @app.post("/verify", response_model=VerifyResponse)
    def verify(req: VerifyRequest) -> VerifyResponse:
        if req.domain is not None:
            domain = req.domain.to_domain()
        elif req.partition.domain is not None:
            domain = req.partition.domain.to_domain()
        else:
            raise InvalidConfigError(
                "a domain is required, inline or embedded in the partition"
            )
        matrix = req.matrix.to_matrix(domain)
        partition = req.partition.to_partition()
        report = verify_report(domain, matrix, partition, req.epsilon0, req.e_m)
        return VerifyResponse(**report)

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest) -> SimulateResponse:
        domain = req.domain.to_domain()
        matrix = None if req.non_privacy else req.matrix.to_matrix(domain)
        workers = spawn_workers(domain, req.workers, req.mode, np.random.default_rng(req.seed))
        tasks = spawn_tasks(domain, req.tasks, np.random.default_rng(req.seed + 1))
        result = run_simulation(
            domain, matrix, workers, tasks, np.random.default_rng(req.seed + 2),
            k=req.geocast_k, shared_workers=req.shared_workers,
            distance_weighted=req.distance_weighted,
        )
        summary = {
            "mean_wtd": result.mean_wtd,
            "workers": req.workers,
            "tasks": req.tasks,
            "mode": req.mode,
            "non_privacy": req.non_privacy,
            "units": "km",
        }
        return SimulateResponse(
            assignments=[
                {"task_id": a.task_id, "worker_id": a.worker_id, "wtd": a.wtd}
                for a in result.assignments
            ],
            summary=summary,
        )

    @app.post("/pipeline", response_model=PipelineResponse)
    def pipeline(req: PipelineRequest) -> PipelineResponse:
        with req.config.dataset.materialized() as csv_path:
            payload = run_pipeline(req.config.to_config(csv_path))
        return PipelineResponse(**payload)

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest) -> SweepResponse:
        with req.config.dataset.materialized() as csv_path:
            rows = run_sweep(req.config.to_config(csv_path), req.eps0_values, req.em_values)
        return SweepResponse(rows=rows)

    return app


app = create_app()
