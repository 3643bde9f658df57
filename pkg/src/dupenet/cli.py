"""Command-line entry point.

Subcommands cover every pipeline: ensemble construction and sampling,
mean-field runs, stochastic runs, parameter sweeps, the structural figure
bundle, and the classifier-bias statistics.  Each run writes its outputs
plus a RunManifest; re-running with the manifest's configuration reproduces
byte-identical CSVs.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .abm import compare_to_meanfield, ensemble_average, run_replicates
from .biasstats import (
    DEFAULT_BOOTSTRAP_SAMPLES,
    aggregate,
    bootstrap_credibility,
    load_records,
    mcc,
    partition_homophily,
)
from .ensemble import (
    ExplicitNetwork,
    NetworkConfig,
    build_ensemble,
    degree_marginal,
    sample_network,
)
from .errors import ConfigurationError, DupenetError
from .experiments import (
    SweepSpec,
    gamma_sweep,
    herd_correction_sweep,
    lambda_ratio_sweep,
    reproduce_fig4,
)
from .meanfield import SolverConfig, StrainParams, integrate, seed_initial


class _Parser(argparse.ArgumentParser):
    """Argument errors (including unknown subcommands) exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


@dataclass
class RunManifest:
    command: str
    config: dict
    master_seed: int
    tool_version: str
    outputs: list[str]
    duration_seconds: float

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        tmp = out_dir / "manifest.json.tmp"
        payload = {
            "command": self.command,
            "config": self.config,
            "master_seed": self.master_seed,
            "tool_version": self.tool_version,
            "outputs": sorted(self.outputs),
            "duration_seconds": self.duration_seconds,
        }
        with open(tmp, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
        return path


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return data


def _collect_network_errors(data: dict, errors: list[str]) -> NetworkConfig | None:
    try:
        alpha = float(data.get("alpha", "nan"))
        q = float(data.get("q", "nan"))
        d_min = int(data.get("d_min", 2))
        d_max = int(data.get("d_max", 100))
    except (TypeError, ValueError):
        errors.append(f"network values must be numeric (got {data})")
        return None
    if "alpha" not in data:
        errors.append("network.alpha is required")
    elif not alpha > 1.0:
        errors.append(f"alpha must exceed 1 (got {data['alpha']})")
    if "q" not in data:
        errors.append("network.q is required")
    elif not 0.0 <= q <= 1.0:
        errors.append(f"q must lie in [0, 1] (got {data['q']})")
    if d_min < 1:
        errors.append(f"d_min must be >= 1 (got {d_min})")
    if d_max < d_min:
        errors.append(f"d_max must be >= d_min (got d_min={d_min}, d_max={d_max})")
    unknown = set(data) - {"alpha", "q", "d_min", "d_max"}
    if unknown:
        errors.append(f"unknown network keys: {sorted(unknown)}")
    if errors:
        return None
    return NetworkConfig(alpha=alpha, q=q, d_min=d_min, d_max=d_max)


def _collect_strain_errors(data: dict, errors: list[str]) -> StrainParams | None:
    out = {}
    for key in ("lambda_1", "lambda_2", "gamma"):
        v = data.get(key)
        if v is None:
            errors.append(f"strain.{key} is required")
            continue
        try:
            v = float(v)
        except (TypeError, ValueError):
            errors.append(f"strain.{key} must be numeric (got {v!r})")
            continue
        if not (np.isfinite(v) and v >= 0):
            errors.append(f"strain.{key} must be finite and >= 0 (got {v})")
            continue
        out[key] = v
    unknown = set(data) - {"lambda_1", "lambda_2", "gamma"}
    if unknown:
        errors.append(f"unknown strain keys: {sorted(unknown)}")
    if len(out) != 3 or errors:
        return None
    return StrainParams(**out)


def _collect_solver_errors(data: dict, errors: list[str]) -> SolverConfig | None:
    defaults = SolverConfig()
    merged = {
        "dt": data.get("dt", defaults.dt),
        "t_max": data.get("t_max", defaults.t_max),
        "steady_tol": data.get("steady_tol", defaults.steady_tol),
        "seed_eps": data.get("seed_eps", defaults.seed_eps),
    }
    unknown = set(data) - set(merged)
    if unknown:
        errors.append(f"unknown solver keys: {sorted(unknown)}")
    checks = (
        ("dt", lambda v: v > 0, "must be positive"),
        ("t_max", lambda v: v > 0, "must be positive"),
        ("steady_tol", lambda v: v > 0, "must be positive"),
        ("seed_eps", lambda v: 0 < v < 1, "must lie in (0, 1)"),
    )
    ok = True
    for key, check, msg in checks:
        try:
            v = float(merged[key])
        except (TypeError, ValueError):
            errors.append(f"solver.{key} must be numeric (got {merged[key]!r})")
            ok = False
            continue
        if not check(v):
            errors.append(f"solver.{key} {msg} (got {v})")
            ok = False
        merged[key] = v
    if not ok or errors:
        return None
    return SolverConfig(**merged)


def validate_meanfield_config(
    data: dict,
) -> tuple[NetworkConfig, StrainParams, SolverConfig, float]:
    """Resolve a mean-field run config, reporting every violation at once."""
    errors: list[str] = []
    unknown = set(data) - {"network", "strain", "solver", "record_dt"}
    if unknown:
        errors.append(f"unknown config keys: {sorted(unknown)}")
    network = _collect_network_errors(data.get("network", {}), errors)
    strain = _collect_strain_errors(data.get("strain", {}), errors)
    solver = _collect_solver_errors(data.get("solver", {}), errors)
    record_dt = data.get("record_dt", 1.0)
    try:
        record_dt = float(record_dt)
        if not record_dt > 0:
            errors.append(f"record_dt must be positive (got {record_dt})")
    except (TypeError, ValueError):
        errors.append(f"record_dt must be numeric (got {record_dt!r})")
    if errors:
        raise ConfigurationError("; ".join(errors))
    return network, strain, solver, record_dt


def _write_json(path: Path, payload: dict) -> Path:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _cmd_ensemble(args) -> list[str]:
    data = _load_json(args.config)
    errors: list[str] = []
    unknown = set(data) - {"network", "n_nodes"}
    if unknown:
        errors.append(f"unknown config keys: {sorted(unknown)}")
    network = _collect_network_errors(data.get("network", {}), errors)
    n_nodes = data.get("n_nodes", args.nodes)
    if n_nodes is not None:
        try:
            n_nodes = int(n_nodes)
            if n_nodes < 2:
                errors.append(f"n_nodes must be >= 2 (got {n_nodes})")
        except (TypeError, ValueError):
            errors.append(f"n_nodes must be an integer (got {n_nodes!r})")
    if errors:
        raise ConfigurationError("; ".join(errors))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dist = build_ensemble(network)
    outputs = []
    import csv as _csv

    comp_path = out / "compartments.csv"
    with open(comp_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["class", "a", "b", "mass"])
        for i in (0, 1):
            for m in range(dist.n_compartments):
                writer.writerow(
                    [i + 1, int(dist.a[m]), int(dist.b[m]),
                     repr(float(dist.masses[i, m]))]
                )
    outputs.append(comp_path.name)
    marg_path = out / "degree_marginal.csv"
    with open(marg_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["degree", "probability"])
        for deg, prob in sorted(degree_marginal(dist).items()):
            writer.writerow([deg, repr(prob)])
    outputs.append(marg_path.name)
    if n_nodes is not None:
        network_sample = sample_network(network, n_nodes, seed=args.seed)
        edge_path, node_path = network_sample.to_csv(out)
        outputs += [edge_path.name, node_path.name]
    return outputs


def _cmd_meanfield(args) -> list[str]:
    network, strain, solver, record_dt = validate_meanfield_config(
        _load_json(args.config)
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dist = build_ensemble(network)
    traj = integrate(
        dist, strain, seed_initial(dist, solver.seed_eps), solver, record_dt=record_dt
    )
    outputs = [traj.to_csv(out / "trajectory.csv").name]
    outputs.append(_write_json(out / "summary.json", traj.summary()).name)
    return outputs


def _load_network_for_abm(data: dict, errors: list[str], seed: int):
    net_cfg = data.get("network")
    if not isinstance(net_cfg, dict):
        errors.append("network section is required")
        return None
    if "edges_csv" in net_cfg or "nodes_csv" in net_cfg:
        missing = {"edges_csv", "nodes_csv"} - set(net_cfg)
        if missing:
            errors.append(f"network file spec is missing {sorted(missing)}")
            return None
        try:
            return ExplicitNetwork.from_csv(
                net_cfg["edges_csv"], net_cfg["nodes_csv"], seed=seed
            )
        except OSError as exc:
            errors.append(f"cannot read network files: {exc}")
            return None
    generate = dict(net_cfg)
    n_nodes = generate.pop("n_nodes", None)
    if n_nodes is None:
        errors.append("network.n_nodes is required when generating a network")
        return None
    cfg = _collect_network_errors(generate, errors)
    if cfg is None:
        return None
    return sample_network(cfg, int(n_nodes), seed=seed)


def _cmd_abm(args) -> list[str]:
    data = _load_json(args.config)
    errors: list[str] = []
    unknown = set(data) - {
        "network",
        "strain",
        "t_max",
        "sample_dt",
        "replicates",
        "init_fraction",
    }
    if unknown:
        errors.append(f"unknown config keys: {sorted(unknown)}")
    strain = _collect_strain_errors(data.get("strain", {}), errors)
    network = _load_network_for_abm(data, errors, args.seed)
    t_max = float(data.get("t_max", 100.0))
    sample_dt = float(data.get("sample_dt", 1.0))
    replicates = int(data.get("replicates", 1))
    init_fraction = float(data.get("init_fraction", 0.05))
    if t_max <= 0:
        errors.append(f"t_max must be positive (got {t_max})")
    if sample_dt <= 0:
        errors.append(f"sample_dt must be positive (got {sample_dt})")
    if replicates < 1:
        errors.append(f"replicates must be >= 1 (got {replicates})")
    if not 0 < init_fraction <= 1:
        errors.append(f"init_fraction must lie in (0, 1] (got {init_fraction})")
    if errors:
        raise ConfigurationError("; ".join(errors))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_replicates(
        network,
        strain,
        init_fraction,
        master_seed=args.seed,
        n_runs=replicates,
        t_max=t_max,
        sample_dt=sample_dt,
        threads=args.threads,
    )
    outputs = []
    if replicates == 1:
        res = results[0]
        outputs.append(res.to_csv(out / "trajectory.csv").name)
        summary = {
            "replicates": 1,
            "final_total": res.final_total,
            "final_class_1": float(res.final_class_fractions[0]),
            "final_class_2": float(res.final_class_fractions[1]),
            "n_events": res.n_events,
        }
    else:
        avg = ensemble_average(results)
        import csv as _csv

        traj_path = out / "trajectory.csv"
        with open(traj_path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(
                ["t", "class", "a", "b", "compartment_size", "duped_count"]
            )
            for t, row in zip(avg.times, avg.mean_counts):
                for k in range(len(avg.comp_class)):
                    writer.writerow(
                        [
                            repr(float(t)),
                            int(avg.comp_class[k]),
                            int(avg.comp_a[k]),
                            int(avg.comp_b[k]),
                            int(avg.comp_sizes[k]),
                            repr(float(row[k])),
                        ]
                    )
        outputs.append(traj_path.name)
        finals = [r.final_total for r in results]
        summary = {
            "replicates": replicates,
            "final_total": avg.final_total,
            "final_total_se": float(
                np.std(finals, ddof=1) / np.sqrt(len(finals))
            ),
            "per_run_final_total": finals,
        }
    outputs.append(_write_json(out / "summary.json", summary).name)
    return outputs


def _cmd_sweep(args) -> list[str]:
    spec = SweepSpec.from_dict(_load_json(args.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    if spec.axis == "gamma":
        result = gamma_sweep(spec, master_seed=args.seed, threads=args.threads)
        outputs.append(result.to_csv(out / "sweep.csv").name)
    elif spec.axis == "lambda_ratio":
        result = lambda_ratio_sweep(spec, master_seed=args.seed, threads=args.threads)
        outputs.append(result.to_csv(out / "sweep.csv").name)
    else:
        report = herd_correction_sweep(spec, threads=args.threads)
        outputs.append(report.to_csv(out / "sweep.csv").name)
        outputs.append(_write_json(out / "trend.json", report.to_dict()).name)
    return outputs


def _cmd_fig4(args) -> list[str]:
    config = _load_json(args.config) if args.config else None
    bundle = reproduce_fig4(
        config, args.out, master_seed=args.seed, threads=args.threads
    )
    return list(bundle.manifest["outputs"]) + [bundle.manifest_path.name]


def _cmd_stats_compare(args) -> list[str]:
    records_a = load_records(args.a)
    records_b = load_records(args.b)
    cm_a = aggregate(records_a)
    cm_b = aggregate(records_b)
    result = bootstrap_credibility(
        cm_a, cm_b, n_samples=args.samples, seed=args.seed, metric=args.metric
    )
    report = {
        "group_a": Path(args.a).stem,
        "group_b": Path(args.b).stem,
        "matrix_a": cm_a.to_dict(),
        "matrix_b": cm_b.to_dict(),
        **result.to_dict(),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _write_json(out / "compare.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return [path.name]


def _cmd_stats_partition(args) -> list[str]:
    records = load_records(args.records)
    part = partition_homophily(records, args.attribute)
    result = bootstrap_credibility(
        part.homophilic,
        part.heterophilic,
        n_samples=args.samples,
        seed=args.seed,
        metric=args.metric,
    )
    report = {
        "attribute": args.attribute,
        "group_a": "homophilic",
        "group_b": "heterophilic",
        "matrix_a": part.homophilic.to_dict(),
        "matrix_b": part.heterophilic.to_dict(),
        "n_excluded": part.n_excluded,
        **result.to_dict(),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _write_json(out / "partition.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return [path.name]


def _build_parser() -> _Parser:
    parser = _Parser(prog="dupenet", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument(
            "--config", required=config_required, help="JSON configuration file"
        )
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument(
            "--threads", type=int, default=1,
            help="worker processes (1 = fully sequential)",
        )

    p = sub.add_parser("ensemble", help="build the compartment ensemble")
    add_common(p)
    p.add_argument("--nodes", type=int, default=None, help="also sample a network")
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("meanfield", help="integrate the mean-field dynamics")
    add_common(p)
    p.set_defaults(func=_cmd_meanfield)

    p = sub.add_parser("abm", help="run the stochastic simulation")
    add_common(p)
    p.set_defaults(func=_cmd_abm)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    add_common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("fig4", help="produce the structural figure bundle")
    add_common(p, config_required=False)
    p.set_defaults(func=_cmd_fig4)

    stats = sub.add_parser("stats", help="classifier-bias statistics")
    stats_sub = stats.add_subparsers(dest="stats_command", required=True)

    p = stats_sub.add_parser("compare", help="bootstrap-compare two record files")
    p.add_argument("--a", required=True, help="records CSV of the first group")
    p.add_argument("--b", required=True, help="records CSV of the second group")
    p.add_argument("--samples", type=int, default=DEFAULT_BOOTSTRAP_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", choices=("mcc", "accuracy"), default="mcc")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stats_compare)

    p = stats_sub.add_parser(
        "partition", help="homophilic/heterophilic split and comparison"
    )
    p.add_argument("--records", required=True, help="records CSV")
    p.add_argument("--attribute", choices=("gender", "age", "race"), required=True)
    p.add_argument("--samples", type=int, default=DEFAULT_BOOTSTRAP_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", choices=("mcc", "accuracy"), default="mcc")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stats_partition)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    started = time.monotonic()
    try:
        outputs = args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DupenetError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    if getattr(args, "out", None):
        out_dir = Path(args.out)
        config = {}
        if getattr(args, "config", None):
            config = _load_json(args.config)
        command = args.command
        if command == "stats":
            command = f"stats {args.stats_command}"
            config = {
                k: getattr(args, k, None)
                for k in ("a", "b", "records", "attribute", "samples", "metric")
                if getattr(args, k, None) is not None
            }
        manifest = RunManifest(
            command=command,
            config=config,
            master_seed=getattr(args, "seed", 0),
            tool_version=__version__,
            outputs=outputs,
            duration_seconds=time.monotonic() - started,
        )
        manifest.write(out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
