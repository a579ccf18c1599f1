"""Command line client for the obfuscation pipeline.

Each subcommand builds a JSON request, sends it to the HTTP service (an
in-process instance by default, a remote one with --server), and writes the
returned artifacts to disk.  Exit codes: 0 success, 1 pipeline or guarantee
failures, 2 bad input (files, flags, schemas).
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import json
import os
import sys
from importlib import resources
from pathlib import Path

import httpx

# errors a caller can fix by changing the request rather than the data/config
_INPUT_ERROR_TYPES = {"ParseError", "InvalidConfigError", "DomainTooSmallError"}

_DEFAULT_ALPHAS = [round(0.1 * i, 1) for i in range(11)]


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = 2, error_type: str = "cli"):
        super().__init__(message)
        self.exit_code = exit_code
        self.error_type = error_type


class ServiceClient:
    """POSTs to a remote server, or drives the ASGI app without sockets."""

    def __init__(self, server: str | None = None):
        self.server = server

    def post(self, path: str, payload: dict) -> dict:
        if self.server:
            with httpx.Client(base_url=self.server, timeout=None) as client:
                resp = client.post(path, json=payload)
        else:
            resp = asyncio.run(self._in_process(path, payload))
        return self._unwrap(resp)

    async def _in_process(self, path: str, payload: dict) -> httpx.Response:
        from .service import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://geomoea.internal", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    @staticmethod
    def _unwrap(resp: httpx.Response) -> dict:
        if resp.status_code == 200:
            return resp.json()
        try:
            body = resp.json()
        except ValueError:
            raise CliError(f"service returned HTTP {resp.status_code}", 1, "http")
        if "error" in body:
            err = body["error"]
            etype = err.get("type", "error")
            code = 2 if etype in _INPUT_ERROR_TYPES else 1
            raise CliError(err.get("message", "unknown error"), code, etype)
        if "detail" in body:
            raise CliError(json.dumps(body["detail"]), 2, "validation")
        raise CliError(f"service returned HTTP {resp.status_code}", 1, "http")


# -- small IO helpers ---------------------------------------------------------


def _read_json(path: Path | str) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise CliError(f"no such file: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}")


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {path}")


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {path}")


def _validate_schema(payload: dict, name: str, source: str) -> None:
    import jsonschema

    text = resources.files("geomoea.schemas").joinpath(f"{name}.schema.json").read_text()
    try:
        jsonschema.validate(payload, json.loads(text))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise CliError(
            f"{source} does not match the {name} schema at {where}: {exc.message}",
            2,
            "schema",
        )


def _env_seed() -> int | None:
    raw = os.environ.get("GEOMOEA_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise CliError("GEOMOEA_SEED must be an integer")


def _seed_or_env(value: int | None) -> int | None:
    return value if value is not None else _env_seed()


# -- request assembly ---------------------------------------------------------


def _load_config(path: Path) -> dict:
    cfg = _read_json(path)
    ds = cfg.get("dataset")
    if isinstance(ds, dict) and isinstance(ds.get("csv"), str):
        csv_path = Path(ds["csv"])
        if not csv_path.is_absolute():
            ds["csv"] = str(path.parent / csv_path)
    return cfg


def _dataset_payload(args, cfg: dict) -> dict:
    ds = dict(cfg.get("dataset", {}))
    if getattr(args, "csv", None):
        ds.pop("synthetic", None)
        ds.pop("csv_text", None)
        ds["csv"] = args.csv
    if getattr(args, "synthetic", None):
        ds.pop("csv", None)
        ds.pop("csv_text", None)
        raw = args.synthetic
        if raw.startswith("@"):
            ds["synthetic"] = _read_json(raw[1:])
        else:
            try:
                ds["synthetic"] = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CliError(f"--synthetic is not valid JSON: {exc}")
    if getattr(args, "geo", False):
        ds["geo"] = True
    if getattr(args, "blur_m", None) is not None:
        ds["blur_radius_m"] = args.blur_m
    if getattr(args, "data_seed", None) is not None:
        ds["seed"] = args.data_seed
    if "csv" in ds:
        csv_path = Path(ds.pop("csv"))
        try:
            ds["csv_text"] = csv_path.read_text()
        except FileNotFoundError:
            raise CliError(f"no such file: {csv_path}")
    if ("csv_text" in ds) == ("synthetic" in ds):
        raise CliError("a dataset is required: --csv, --synthetic, or a config dataset")
    return ds


def _apply(target: dict, key: str, value) -> None:
    if value is not None:
        target[key] = value


def _baseline_list(args, cfg: dict) -> list[str]:
    chosen = getattr(args, "baseline", None)
    if chosen:
        if "none" in chosen:
            return []
        return sorted(set(chosen))
    return list(cfg.get("baselines", []))


def _run_config_payload(args) -> dict:
    cfg = _load_config(args.config) if args.config else {}
    out: dict = {"dataset": _dataset_payload(args, cfg)}

    privacy = dict(cfg.get("privacy", {}))
    _apply(privacy, "epsilon0", getattr(args, "eps0", None))
    _apply(privacy, "e_m", getattr(args, "em", None))
    _apply(privacy, "n0", getattr(args, "n0", None))
    out["privacy"] = privacy

    moea = dict(cfg.get("moea", {}))
    _apply(moea, "population", getattr(args, "pop", None))
    _apply(moea, "max_generations", getattr(args, "gens", None))
    _apply(moea, "seed", _seed_or_env(getattr(args, "seed", None)))
    out["moea"] = moea

    sim = dict(cfg.get("sim", {}))
    _apply(sim, "workers", getattr(args, "workers", None))
    _apply(sim, "tasks", getattr(args, "tasks", None))
    _apply(sim, "mode", getattr(args, "mode", None))
    _apply(sim, "geocast_k", getattr(args, "geocast_k", None))
    _apply(sim, "seed", getattr(args, "sim_seed", None))
    if getattr(args, "distance_weighted", False):
        sim["distance_weighted"] = True
    if getattr(args, "exclusive_workers", False):
        sim["shared_workers"] = False
    if getattr(args, "no_non_privacy", False):
        sim["compare_non_privacy"] = False
    out["sim"] = sim

    out["baselines"] = _baseline_list(args, cfg)
    alphas = getattr(args, "alphas", None)
    out["pso_alphas"] = (
        [float(a) for a in alphas.split(",")] if alphas else cfg.get("pso_alphas", _DEFAULT_ALPHAS)
    )
    out["pso_particles"] = getattr(args, "pso_particles", None) or cfg.get("pso_particles")
    out["pso_iterations"] = getattr(args, "pso_iterations", None) or cfg.get("pso_iterations")
    out["n_threads"] = getattr(args, "threads", None) or cfg.get("n_threads", 1)
    return out


def _matrix_payload_from_file(path: Path | str, domain_payload: dict) -> dict:
    path = Path(path)
    if path.suffix == ".bin":
        from .domain import domain_from_payload
        from .mechanism import matrix_payload, read_matrix_binary

        try:
            matrix = read_matrix_binary(path, domain_from_payload(domain_payload))
        except FileNotFoundError:
            raise CliError(f"no such file: {path}")
        return matrix_payload(matrix)
    payload = _read_json(path)
    _validate_schema(payload, "matrix", str(path))
    return payload


# -- artifact writers ----------------------------------------------------------


def _write_optimize_artifacts(out: Path, body: dict) -> None:
    _write_json(out / "domain.json", body["domain"])
    _write_json(out / "cells.json", body["cells"])
    _write_json(out / "front.json", body["front"])
    _write_json(out / "partition.json", body["partition"])
    _write_csv(
        out / "hv_trace.csv",
        ["generation", "hv"],
        list(enumerate(body["front"]["hv_trace"])),
    )
    baselines = body.get("baselines", {})
    if "dpive" in baselines:
        _write_json(out / "dpive.json", baselines["dpive"])
    if "pso" in baselines:
        _write_csv(
            out / "pso.csv",
            ["alpha", "qloss", "exp_err", "fitness"],
            [[r["alpha"], r["qloss"], r["exp_err"], r["fitness"]] for r in baselines["pso"]],
        )


def _write_assignments(out: Path, assignments: list[dict]) -> None:
    _write_csv(
        out / "assignments.csv",
        ["task_id", "worker_id", "wtd"],
        [[a["task_id"], a["worker_id"], a["wtd"]] for a in assignments],
    )


# -- subcommands ----------------------------------------------------------------


def cmd_partition(args) -> int:
    client = ServiceClient(args.server)
    cfg = _load_config(args.config) if args.config else {}
    dataset = _dataset_payload(args, cfg)
    n0 = args.n0 if args.n0 is not None else cfg.get("privacy", {}).get("n0", 33)
    body = client.post("/partition", {"dataset": dataset, "n0": n0})
    out = args.out
    _write_json(out / "domain.json", body["domain"])
    _write_json(out / "cells.json", body["cells"])
    sizes = [len(c["member_ids"]) for c in body["cells"]["cells"]]
    print(
        f"{len(body['domain']['locations'])} locations into {len(sizes)} cells, "
        f"sizes {min(sizes)}..{max(sizes)}"
    )
    return 0


def cmd_optimize(args) -> int:
    client = ServiceClient(args.server)
    cfg = _run_config_payload(args)
    request = {
        "dataset": cfg["dataset"],
        "privacy": cfg["privacy"],
        "moea": cfg["moea"],
        "baselines": cfg["baselines"],
        "pso_alphas": cfg["pso_alphas"],
        "pso_particles": cfg["pso_particles"],
        "pso_iterations": cfg["pso_iterations"],
        "n_threads": cfg["n_threads"],
    }
    body = client.post("/optimize", request)
    _write_optimize_artifacts(args.out, body)
    trace = body["front"]["hv_trace"]
    print(
        f"front of {len(body['front']['members'])} after {len(trace) - 1} generations, "
        f"hypervolume {trace[-1]:.6f}"
    )
    return 0


def cmd_evaluate(args) -> int:
    client = ServiceClient(args.server)
    domain = _read_json(args.domain)
    _validate_schema(domain, "domain", str(args.domain))
    matrix = _matrix_payload_from_file(args.matrix, domain)
    body = client.post("/evaluate", {"domain": domain, "matrix": matrix})
    print(json.dumps(body, indent=2))
    return 0


def cmd_verify(args) -> int:
    client = ServiceClient(args.server)
    partition = _read_json(args.partition)
    _validate_schema(partition, "partition", str(args.partition))
    if args.domain:
        domain = _read_json(args.domain)
        source = str(args.domain)
    else:
        domain = partition.get("domain")
        source = f"{args.partition}#domain"
        if domain is None:
            raise CliError("no domain: pass --domain or use a partition that embeds one")
    _validate_schema(domain, "domain", source)
    matrix = _matrix_payload_from_file(args.matrix, domain)
    request = {
        "matrix": matrix,
        "partition": partition,
        "domain": domain,
        "epsilon0": args.eps0,
        "e_m": args.em,
    }
    body = client.post("/verify", request)
    for check in body["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        bounds = ""
        if check.get("observed") is not None and check.get("bound") is not None:
            bounds = f" (observed {check['observed']:.6g}, bound {check['bound']:.6g})"
        print(f"{status} {check['name']}{bounds}: {check['detail']}")
    print("verification " + ("passed" if body["passed"] else "FAILED"))
    return 0 if body["passed"] else 1


def cmd_simulate(args) -> int:
    client = ServiceClient(args.server)
    domain = _read_json(args.domain)
    _validate_schema(domain, "domain", str(args.domain))
    request = {
        "domain": domain,
        "non_privacy": args.non_privacy,
        "shared_workers": not args.exclusive_workers,
        "distance_weighted": args.distance_weighted,
        "seed": _seed_or_env(args.seed) or 0,
    }
    # absent flags fall back to the service defaults
    for key in ("workers", "tasks", "mode", "geocast_k"):
        _apply(request, key, getattr(args, key))
    if args.matrix:
        request["matrix"] = _matrix_payload_from_file(args.matrix, domain)
    elif not args.non_privacy:
        raise CliError("either --matrix or --non-privacy is required")
    body = client.post("/simulate", request)
    _write_assignments(args.out, body["assignments"])
    print(json.dumps(body["summary"], indent=2))
    return 0


def cmd_pipeline(args) -> int:
    client = ServiceClient(args.server)
    cfg = _run_config_payload(args)
    body = client.post("/pipeline", {"config": cfg})
    out = args.out
    _write_optimize_artifacts(out, body)
    if args.format == "binary":
        from .domain import domain_from_payload
        from .mechanism import matrix_from_payload, write_matrix_binary

        matrix = matrix_from_payload(body["matrix"], domain_from_payload(body["domain"]))
        out.mkdir(parents=True, exist_ok=True)
        write_matrix_binary(matrix, out / "matrix.bin")
        print(f"wrote {out / 'matrix.bin'}")
    else:
        _write_json(out / "matrix.json", body["matrix"])
    _write_assignments(out, body["assignments"])
    _write_json(out / "summary.json", body["summary"])
    s = body["summary"]
    line = (
        f"qloss {s['qloss']:.4f} km, inference error {s['exp_err']:.4f} km, "
        f"hypervolume {s['hv']:.6f}, mean travel {s['mean_wtd']:.4f} km"
    )
    if s.get("non_privacy_mean_wtd") is not None:
        line += f" (non-privacy {s['non_privacy_mean_wtd']:.4f} km)"
    print(line)
    return 0


def cmd_sweep(args) -> int:
    client = ServiceClient(args.server)
    cfg = _run_config_payload(args)
    request = {
        "config": cfg,
        "eps0_values": [float(v) for v in args.eps0_values.split(",")],
        "em_values": [float(v) for v in args.em_values.split(",")],
    }
    body = client.post("/sweep", request)
    rows = []
    for row in body["rows"]:
        hv = "NA" if row["hv"] is None else f"{row['hv']:.6f}"
        wtd = "NA" if row["mean_wtd"] is None else f"{row['mean_wtd']:.6f}"
        rows.append([row["eps0"], row["e_m"], hv, wtd])
        note = f"  ({row['error']})" if row.get("error") else ""
        print(f"eps0={row['eps0']} e_m={row['e_m']} hv={hv} mean_wtd={wtd}{note}")
    _write_csv(args.out / "surface.csv", ["eps0", "em", "hv", "mean_wtd"], rows)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("geomoea.service:app", host=args.host, port=args.port)
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geomoea",
        description="location obfuscation for spatial crowdsourcing",
    )
    parser.add_argument(
        "--server",
        default=os.environ.get("GEOMOEA_SERVER"),
        help="base URL of a running service; default runs in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    out_args = argparse.ArgumentParser(add_help=False)
    out_args.add_argument("--out", type=Path, default=Path("."), help="artifact directory")

    data_args = argparse.ArgumentParser(add_help=False)
    data_args.add_argument("--config", type=Path, help="JSON run config file")
    data_args.add_argument("--csv", help="dataset CSV with header id,x,y (or id,lon,lat with --geo)")
    data_args.add_argument(
        "--synthetic", help="synthetic dataset spec, inline JSON or @file.json"
    )
    data_args.add_argument("--geo", action="store_true", help="treat CSV columns as lon/lat degrees")
    data_args.add_argument(
        "--blur-m", type=float, dest="blur_m", help="uniform disk blur radius in meters"
    )
    data_args.add_argument("--data-seed", type=int, dest="data_seed", help="dataset RNG seed")

    opt_args = argparse.ArgumentParser(add_help=False)
    opt_args.add_argument("--eps0", type=float, help="total privacy budget per set")
    opt_args.add_argument("--em", type=float, help="inference error floor, km")
    opt_args.add_argument("--n0", type=int, help="cell size threshold")
    opt_args.add_argument("--pop", type=int, help="population size")
    opt_args.add_argument("--gens", type=int, help="generation cap")
    opt_args.add_argument("--seed", type=int, help="search seed (GEOMOEA_SEED as fallback)")
    opt_args.add_argument(
        "--baseline",
        action="append",
        choices=["dpive", "pso", "none"],
        help="baselines to run (repeatable)",
    )
    opt_args.add_argument("--alphas", help="PSO scalarization weights, comma separated")
    opt_args.add_argument(
        "--pso-particles", type=int, dest="pso_particles",
        help="swarm size (default: sized with --pso-iterations to match the search's evaluation count)",
    )
    opt_args.add_argument("--pso-iterations", type=int, dest="pso_iterations")
    opt_args.add_argument("--threads", type=int, help="evaluation threads")

    sim_args = argparse.ArgumentParser(add_help=False)
    sim_args.add_argument("--workers", type=int, help="worker count")
    sim_args.add_argument("--tasks", type=int, help="task count")
    sim_args.add_argument("--mode", choices=["uniform", "one_to_four"], help="worker placement")
    sim_args.add_argument("--geocast-k", type=int, dest="geocast_k", help="candidate pool size")
    sim_args.add_argument(
        "--distance-weighted", action="store_true", help="pick nearer candidates more often"
    )
    sim_args.add_argument(
        "--exclusive-workers", action="store_true", help="each worker serves at most one task"
    )

    p = sub.add_parser("partition", parents=[out_args, data_args], help="split the domain into cells")
    p.add_argument("--n0", type=int, help="cell size threshold")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser(
        "optimize",
        parents=[out_args, data_args, opt_args],
        help="search partitions, write the front",
    )
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", help="objectives of a matrix on a domain")
    p.add_argument("--domain", required=True, type=Path, help="domain.json")
    p.add_argument("--matrix", required=True, type=Path, help="matrix.json or matrix.bin")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="audit a matrix against its guarantees")
    p.add_argument("--partition", required=True, type=Path, help="partition.json")
    p.add_argument("--matrix", required=True, type=Path, help="matrix.json or matrix.bin")
    p.add_argument("--domain", type=Path, help="domain.json (default: embedded in partition)")
    p.add_argument("--eps0", type=float, help="override recorded budget")
    p.add_argument("--em", type=float, help="override recorded error floor")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", parents=[out_args, sim_args], help="task assignment on a matrix")
    p.add_argument("--domain", required=True, type=Path, help="domain.json")
    p.add_argument("--matrix", type=Path, help="matrix.json or matrix.bin")
    p.add_argument("--non-privacy", action="store_true", help="workers report true locations")
    p.add_argument("--seed", type=int, help="simulation seed (GEOMOEA_SEED as fallback)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "pipeline",
        parents=[out_args, data_args, opt_args, sim_args],
        help="dataset to front to simulation, all artifacts",
    )
    p.add_argument("--sim-seed", type=int, dest="sim_seed", help="simulation seed")
    p.add_argument(
        "--no-non-privacy",
        action="store_true",
        dest="no_non_privacy",
        help="skip the non-privacy reference run",
    )
    p.add_argument("--format", choices=["json", "binary"], default="json", help="matrix format")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser(
        "sweep",
        parents=[out_args, data_args, opt_args, sim_args],
        help="hypervolume and travel distance over a budget grid",
    )
    p.add_argument("--sim-seed", type=int, dest="sim_seed")
    p.add_argument("--eps0-values", required=True, dest="eps0_values", help="comma separated")
    p.add_argument("--em-values", required=True, dest="em_values", help="comma separated")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(
            json.dumps({"error": {"type": exc.error_type, "message": str(exc)}}),
            file=sys.stderr,
        )
        return exc.exit_code
    except httpx.HTTPError as exc:
        print(
            json.dumps({"error": {"type": "connection", "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
