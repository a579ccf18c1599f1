"""Request and response schemas for the HTTP service.

These mirror the core dataclasses closely; converters translate in both
directions so the service layer stays a thin shell around the package.
"""

from __future__ import annotations

import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Literal

from pydantic import BaseModel, Field, model_validator

from ..domain import ClusterSpec, DatasetSpec, Domain, SyntheticSpec, domain_from_payload, load_domain
from ..errors import InvalidConfigError
from ..mechanism import ObfuscationMatrix, matrix_from_payload
from ..moea import MoeaConfig
from ..pipeline import RunConfig, SimConfig
from ..pls import PlsPartition, PrivacyConfig, partition_from_payload
from ..scsim import MODE_ONE_TO_FOUR, MODE_UNIFORM


class LocationModel(BaseModel):
    id: int
    x: float
    y: float


class DomainModel(BaseModel):
    locations: list[LocationModel]
    prior: list[float]
    meta: dict = Field(default_factory=dict)

    def to_domain(self) -> Domain:
        return domain_from_payload(self.model_dump())


class ClusterModel(BaseModel):
    weight: float
    center: tuple[float, float]
    spread: float


class SyntheticModel(BaseModel):
    count: int
    bbox: tuple[float, float, float, float]
    clusters: list[ClusterModel] = Field(default_factory=list)


class DatasetModel(BaseModel):
    """Either inline CSV text or synthetic-generator parameters."""

    csv_text: str | None = None
    synthetic: SyntheticModel | None = None
    geo: bool = False
    blur_radius_m: float = 0.0
    prior_range: tuple[float, float] = (0.0005, 0.0015)
    seed: int = 0

    @model_validator(mode="after")
    def _one_source(self) -> "DatasetModel":
        if (self.csv_text is None) == (self.synthetic is None):
            raise ValueError("exactly one of csv_text or synthetic is required")
        return self

    @contextmanager
    def materialized(self) -> Iterator[Path | None]:
        """Temp CSV path for inline text, None for synthetic sources."""
        if self.synthetic is not None:
            yield None
            return
        with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False) as fh:
            fh.write(self.csv_text)
            tmp = Path(fh.name)
        try:
            yield tmp
        finally:
            tmp.unlink(missing_ok=True)

    def load(self) -> Domain:
        with self.materialized() as csv_path:
            return load_domain(self.to_spec_with(csv_path))

    def to_spec_with(self, csv_path: str | Path | None = None) -> DatasetSpec:
        """DatasetSpec for pipeline use; CSV content must come from a path."""
        if self.synthetic is not None:
            return DatasetSpec(
                source=SyntheticSpec(
                    count=self.synthetic.count,
                    bbox=self.synthetic.bbox,
                    clusters=tuple(
                        ClusterSpec(c.weight, c.center, c.spread) for c in self.synthetic.clusters
                    ),
                ),
                blur_radius_m=self.blur_radius_m,
                prior_range=self.prior_range,
                seed=self.seed,
            )
        if csv_path is None:
            raise InvalidConfigError("csv datasets need a file path on the service side")
        return DatasetSpec(
            source=csv_path,
            blur_radius_m=self.blur_radius_m,
            prior_range=self.prior_range,
            seed=self.seed,
            geo=self.geo,
        )


class PrivacyModel(BaseModel):
    epsilon0: float = 1.0
    e_m: float = 0.1
    n0: int = 33
    min_report_locations: int = 50
    min_report_plss: int = 2
    restrict_e_prime_to_cell: bool = False

    def to_config(self) -> PrivacyConfig:
        return PrivacyConfig(**self.model_dump())


class MoeaModel(BaseModel):
    population: int = 40
    max_generations: int = 500
    hv_epsilon: float | None = None
    tournament_pool: int = 5
    seed: int = 0

    def to_config(self) -> MoeaConfig:
        return MoeaConfig(**self.model_dump())


class SimModel(BaseModel):
    workers: int = 2000
    tasks: int = 200
    mode: Literal["uniform", "one_to_four"] = MODE_UNIFORM
    geocast_k: int = 3
    shared_workers: bool = True
    distance_weighted: bool = False
    compare_non_privacy: bool = True
    seed: int = 0

    def to_config(self) -> SimConfig:
        return SimConfig(**self.model_dump())


class RunConfigModel(BaseModel):
    dataset: DatasetModel
    privacy: PrivacyModel = Field(default_factory=PrivacyModel)
    moea: MoeaModel = Field(default_factory=MoeaModel)
    sim: SimModel = Field(default_factory=SimModel)
    baselines: list[Literal["dpive", "pso"]] = Field(default_factory=list)
    pso_alphas: list[float] = Field(default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])
    pso_particles: int | None = None
    pso_iterations: int | None = None
    n_threads: int = 1

    def to_config(self, csv_path: str | Path | None = None) -> RunConfig:
        return RunConfig(
            dataset=self.dataset.to_spec_with(csv_path),
            privacy=self.privacy.to_config(),
            moea=self.moea.to_config(),
            sim=self.sim.to_config(),
            baselines=tuple(self.baselines),
            pso_alphas=tuple(self.pso_alphas),
            pso_particles=self.pso_particles,
            pso_iterations=self.pso_iterations,
            n_threads=self.n_threads,
        )


class MatrixRowModel(BaseModel):
    true_id: int
    support: list[int]
    probs: list[float]


class MatrixModel(BaseModel):
    rows: list[MatrixRowModel]

    def to_matrix(self, domain: Domain) -> ObfuscationMatrix:
        return matrix_from_payload(self.model_dump(), domain)


class PlsModel(BaseModel):
    members: list[int]
    epsilon: float
    diameter: float
    e_prime: float
    cell_id: int = -1
    reporting_range: list[int] | None = None


class PartitionModel(BaseModel):
    plss: list[PlsModel]
    meta: dict = Field(default_factory=dict)
    domain: DomainModel | None = None

    def to_partition(self) -> PlsPartition:
        return partition_from_payload(self.model_dump())


# -- requests ----------------------------------------------------------------


class PartitionRequest(BaseModel):
    dataset: DatasetModel | None = None
    domain: DomainModel | None = None
    n0: int = 33

    @model_validator(mode="after")
    def _one_of(self) -> "PartitionRequest":
        if (self.dataset is None) == (self.domain is None):
            raise ValueError("exactly one of dataset or domain is required")
        return self


class OptimizeRequest(BaseModel):
    dataset: DatasetModel | None = None
    domain: DomainModel | None = None
    privacy: PrivacyModel = Field(default_factory=PrivacyModel)
    moea: MoeaModel = Field(default_factory=MoeaModel)
    baselines: list[Literal["dpive", "pso"]] = Field(default_factory=list)
    pso_alphas: list[float] = Field(default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])
    pso_particles: int | None = None
    pso_iterations: int | None = None
    n_threads: int = 1

    @model_validator(mode="after")
    def _one_of(self) -> "OptimizeRequest":
        if (self.dataset is None) == (self.domain is None):
            raise ValueError("exactly one of dataset or domain is required")
        return self


class EvaluateRequest(BaseModel):
    domain: DomainModel
    matrix: MatrixModel


class VerifyRequest(BaseModel):
    matrix: MatrixModel
    partition: PartitionModel
    domain: DomainModel | None = None  # falls back to the partition's embedded domain
    epsilon0: float | None = None
    e_m: float | None = None


class SimulateRequest(BaseModel):
    domain: DomainModel
    matrix: MatrixModel | None = None
    non_privacy: bool = False
    workers: int = 2000
    tasks: int = 200
    mode: Literal["uniform", "one_to_four"] = MODE_UNIFORM
    geocast_k: int = 3
    shared_workers: bool = True
    distance_weighted: bool = False
    seed: int = 0

    @model_validator(mode="after")
    def _need_mechanism(self) -> "SimulateRequest":
        if self.matrix is None and not self.non_privacy:
            raise ValueError("either a matrix or non_privacy=true is required")
        return self


class PipelineRequest(BaseModel):
    config: RunConfigModel


class SweepRequest(BaseModel):
    config: RunConfigModel
    eps0_values: list[float]
    em_values: list[float]


# -- responses ---------------------------------------------------------------


class HealthResponse(BaseModel):
    status: str
    version: str


class PartitionResponse(BaseModel):
    domain: dict
    cells: dict


class OptimizeResponse(BaseModel):
    domain: dict
    cells: dict
    front: dict
    partition: dict
    baselines: dict


class EvaluateResponse(BaseModel):
    qloss: float
    exp_err: float
    min_cond_err: float


class CheckModel(BaseModel):
    name: str
    passed: bool
    observed: float | None = None
    bound: float | None = None
    detail: str = ""


class VerifyResponse(BaseModel):
    passed: bool
    checks: list[CheckModel]


class AssignmentModel(BaseModel):
    task_id: int
    worker_id: int
    wtd: float


class SimulateResponse(BaseModel):
    assignments: list[AssignmentModel]
    summary: dict


class PipelineResponse(BaseModel):
    domain: dict
    cells: dict
    front: dict
    partition: dict
    matrix: dict
    assignments: list[AssignmentModel]
    summary: dict
    baselines: dict


class SweepRowModel(BaseModel):
    eps0: float
    e_m: float
    hv: float | None
    mean_wtd: float | None
    error: str | None = None


class SweepResponse(BaseModel):
    rows: list[SweepRowModel]


class ErrorBody(BaseModel):
    type: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorBody
