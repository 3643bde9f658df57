"""Scripted parameter sweeps over the dynamics and structural breakdowns.

Sweeps run one point per grid value from a common seed state, so the points
are independent and a sweep is deterministic given its spec and master
seed.  Trend statistics are rank correlations of the target observable
against the grid in its given order.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from .abm import ensemble_average, run_replicates
from .ensemble import NetworkConfig, build_ensemble, sample_network
from .errors import ConfigurationError
from .meanfield import (
    MeanFieldTrajectory,
    SolverConfig,
    StrainParams,
    duped_fraction,
    find_invasion_threshold_auto,
    integrate,
    seed_initial,
)
from .multistrain import (
    MatchingProfile,
    ProfileCurve,
    StrainPair,
    joint_state,
    matching_profile,
    neighborhood_profile,
)

SWEEP_AXES = ("gamma", "q", "alpha", "lambda_ratio")
TOP_DECILE = 9
DEFAULT_GAMMA_FRACTION = 0.85


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: the axis, its grid, and the base configuration."""

    axis: str
    grid: tuple[float, ...]
    network: NetworkConfig
    strain: StrainParams
    solver: SolverConfig
    replicates: int = 0
    abm_nodes: int = 10_000
    abm_init_fraction: float = 0.05

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigurationError(
                f"axis must be one of {SWEEP_AXES} (got {self.axis!r})"
            )
        grid = tuple(float(v) for v in self.grid)
        object.__setattr__(self, "grid", grid)
        if not grid:
            raise ConfigurationError("grid must be non-empty")
        diffs = np.diff(grid)
        if len(grid) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ConfigurationError("grid must be strictly monotone")
        if self.replicates < 0:
            raise ConfigurationError("replicates must be >= 0")

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "grid": list(self.grid),
            "network": self.network.to_dict(),
            "strain": self.strain.to_dict(),
            "solver": self.solver.to_dict(),
            "replicates": self.replicates,
            "abm_nodes": self.abm_nodes,
            "abm_init_fraction": self.abm_init_fraction,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        required = {"axis", "grid", "network", "strain"}
        missing = required - set(data)
        if missing:
            raise ConfigurationError(f"sweep spec is missing keys: {sorted(missing)}")
        strain = data["strain"]
        return cls(
            axis=data["axis"],
            grid=tuple(data["grid"]),
            network=NetworkConfig.from_dict(data["network"]),
            strain=StrainParams(
                lambda_1=float(strain["lambda_1"]),
                lambda_2=float(strain["lambda_2"]),
                gamma=float(strain.get("gamma", 1.0)),
            ),
            solver=SolverConfig(**data.get("solver", {})),
            replicates=int(data.get("replicates", 0)),
            abm_nodes=int(data.get("abm_nodes", 10_000)),
            abm_init_fraction=float(data.get("abm_init_fraction", 0.05)),
        )


@dataclass
class SweepPoint:
    value: float
    gamma: float
    final_total: float
    final_class_1: float
    final_class_2: float
    steady_state_reached: bool
    abm_mean_total: float | None = None
    abm_se_total: float | None = None


@dataclass
class SweepResult:
    spec: SweepSpec
    points: list[SweepPoint]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with_bands = self.spec.replicates > 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = [
                self.spec.axis,
                "gamma",
                "final_total",
                "final_class_1",
                "final_class_2",
                "steady_state_reached",
            ]
            if with_bands:
                header += ["abm_mean_total", "abm_se_total"]
            writer.writerow(header)
            for pt in self.points:
                row = [
                    repr(pt.value),
                    repr(pt.gamma),
                    repr(pt.final_total),
                    repr(pt.final_class_1),
                    repr(pt.final_class_2),
                    pt.steady_state_reached,
                ]
                if with_bands:
                    row += [repr(pt.abm_mean_total), repr(pt.abm_se_total)]
                writer.writerow(row)
        return path


def _point_entropy(master_seed: int, value: float) -> list[int]:
    # keyed to the grid value, not its position, so reordering the grid
    # cannot change any point's stochastic stream
    return [master_seed, int(np.float64(value).view(np.uint64))]


def _run_dynamics_point(args) -> SweepPoint:
    spec, value, master_seed = args
    if spec.axis == "gamma":
        strain = spec.strain.with_gamma(value)
    else:  # lambda_ratio: scale class-2 susceptibility relative to class 1
        strain = StrainParams(
            lambda_1=spec.strain.lambda_1,
            lambda_2=value * spec.strain.lambda_1,
            gamma=spec.strain.gamma,
        )
    dist = build_ensemble(spec.network)
    traj = integrate(
        dist,
        strain,
        seed_initial(dist, spec.solver.seed_eps),
        spec.solver,
        record_dt=None,
    )
    per_class, total = duped_fraction(dist, traj.duped[-1])
    point = SweepPoint(
        value=value,
        gamma=strain.gamma,
        final_total=total,
        final_class_1=float(per_class[0]),
        final_class_2=float(per_class[1]),
        steady_state_reached=traj.steady_state_reached,
    )
    if spec.replicates > 0:
        network = sample_network(spec.network, spec.abm_nodes, seed=master_seed)
        seed = int(
            np.random.SeedSequence(_point_entropy(master_seed, value)).generate_state(1)[0]
        )
        results = run_replicates(
            network,
            strain,
            spec.abm_init_fraction,
            master_seed=seed,
            n_runs=spec.replicates,
            t_max=float(max(traj.times[-1], 1.0)),
        )
        finals = np.array([r.final_total for r in results])
        point.abm_mean_total = float(finals.mean())
        point.abm_se_total = float(finals.std(ddof=1) / np.sqrt(len(finals)))
    return point


def _run_points(worker, jobs, threads: int) -> list:
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, jobs))
    return [worker(job) for job in jobs]


def gamma_sweep(spec: SweepSpec, master_seed: int = 0, threads: int = 1) -> SweepResult:
    """Steady-state duped fraction versus the correction rate."""
    if spec.axis != "gamma":
        raise ConfigurationError(f"gamma_sweep requires axis='gamma' (got {spec.axis})")
    jobs = [(spec, v, master_seed) for v in spec.grid]
    return SweepResult(spec=spec, points=_run_points(_run_dynamics_point, jobs, threads))


def lambda_ratio_sweep(
    spec: SweepSpec, master_seed: int = 0, threads: int = 1
) -> SweepResult:
    """Steady-state duped fraction versus the class-2/class-1 rate ratio."""
    if spec.axis != "lambda_ratio":
        raise ConfigurationError(
            f"lambda_ratio_sweep requires axis='lambda_ratio' (got {spec.axis})"
        )
    jobs = [(spec, v, master_seed) for v in spec.grid]
    return SweepResult(spec=spec, points=_run_points(_run_dynamics_point, jobs, threads))


@dataclass
class TrendPoint:
    value: float
    gamma_c: float
    gamma_run: float
    gap: float
    final_a: float
    final_b: float


@dataclass
class TrendReport:
    """Per-point observables plus the rank-correlation trend statistic.

    The statistic correlates the observable with the grid order (first
    point to last), so a grid listed in decreasing parameter order measures
    the trend along that listed direction.
    """

    axis: str
    grid: tuple[float, ...]
    points: list[TrendPoint]
    statistic: float
    direction: str

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [self.axis, "gamma_c", "gamma_run", "herd_gap", "final_a", "final_b"]
            )
            for pt in self.points:
                writer.writerow(
                    [
                        repr(pt.value),
                        repr(pt.gamma_c),
                        repr(pt.gamma_run),
                        repr(pt.gap),
                        repr(pt.final_a),
                        repr(pt.final_b),
                    ]
                )
        return path

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "grid": list(self.grid),
            "trend_statistic": self.statistic,
            "direction": self.direction,
            "points": [
                {
                    "value": pt.value,
                    "gamma_c": pt.gamma_c,
                    "gamma_run": pt.gamma_run,
                    "herd_gap": pt.gap,
                    "final_a": pt.final_a,
                    "final_b": pt.final_b,
                }
                for pt in self.points
            ],
        }


def _two_strain_state(
    network: NetworkConfig,
    pair: StrainPair,
    solver: SolverConfig,
    gamma_fraction: float,
) -> tuple[float, float, MeanFieldTrajectory, MeanFieldTrajectory, MatchingProfile]:
    dist = build_ensemble(network)
    gamma_c = find_invasion_threshold_auto(dist, pair.strain_a, solver)
    gamma_run = gamma_fraction * gamma_c
    run_pair = pair.with_gamma(gamma_run)
    traj_a = integrate(
        dist, run_pair.strain_a, seed_initial(dist, solver.seed_eps), solver,
        record_dt=None,
    )
    traj_b = integrate(
        dist, run_pair.strain_b, seed_initial(dist, solver.seed_eps), solver,
        record_dt=None,
    )
    joint = joint_state(dist, traj_a.final_field, traj_b.final_field)
    profile = matching_profile(dist, joint)
    return gamma_c, gamma_run, traj_a, traj_b, profile


def _run_herd_point(args) -> TrendPoint:
    spec, value, gamma_fraction = args
    if spec.axis == "q":
        network = replace(spec.network, q=value)
    else:
        network = replace(spec.network, alpha=value)
    pair = StrainPair(
        strain_a=spec.strain,
        strain_b=StrainParams(
            lambda_1=spec.strain.lambda_2,
            lambda_2=spec.strain.lambda_1,
            gamma=spec.strain.gamma,
        ),
    )
    gamma_c, gamma_run, traj_a, traj_b, profile = _two_strain_state(
        network, pair, spec.solver, gamma_fraction
    )
    return TrendPoint(
        value=value,
        gamma_c=gamma_c,
        gamma_run=gamma_run,
        gap=profile.diverse_vs_assortative_gap(TOP_DECILE),
        final_a=traj_a.final_total,
        final_b=traj_b.final_total,
    )


def herd_correction_sweep(
    spec: SweepSpec,
    gamma_fraction: float = DEFAULT_GAMMA_FRACTION,
    threads: int = 1,
) -> TrendReport:
    """Trend of the high-degree diverse-vs-assortative protection gap.

    Runs the mirrored two-strain pipeline per grid point at a correction
    rate pinned to that point's own invasion threshold, and reports the
    top-degree-decile gap (assortative-bin matching-duped probability minus
    most-diverse-bin) with its rank correlation along the grid.
    """
    if spec.axis not in ("q", "alpha"):
        raise ConfigurationError(
            f"herd_correction_sweep requires axis 'q' or 'alpha' (got {spec.axis})"
        )
    jobs = [(spec, v, gamma_fraction) for v in spec.grid]
    points = _run_points(_run_herd_point, jobs, threads)
    gaps = [pt.gap for pt in points]
    if len(gaps) > 1:
        statistic = float(spearmanr(np.arange(len(gaps)), gaps).statistic)
    else:
        statistic = 0.0
    if statistic > 0:
        direction = "increasing"
    elif statistic < 0:
        direction = "decreasing"
    else:
        direction = "flat"
    return TrendReport(
        axis=spec.axis,
        grid=spec.grid,
        points=points,
        statistic=statistic,
        direction=direction,
    )


FIG4_DEFAULTS: dict = {
    "network": {"alpha": 2.5, "q": 0.8, "d_min": 2, "d_max": 100},
    "solver": {"dt": 0.01, "t_max": 500.0, "steady_tol": 1e-10, "seed_eps": 1e-3},
    "single_strain": {"lambda_1": 1.0, "lambda_2": 0.5},
    "two_strain": {"lambda_matched": 2.0, "lambda_mismatched": 1.0},
    "gamma_grid": {"lo_fraction": 0.3, "hi_fraction": 1.3, "points": 41},
    "gamma_b_fraction": 0.85,
    "gamma_c_fraction": 0.85,
    "gamma_b_override": None,
    "gamma_c_override": None,
}


def _merge_config(defaults: dict, override: dict) -> dict:
    merged = {}
    unknown = set(override) - set(defaults)
    if unknown:
        raise ConfigurationError(f"unknown fig4 config keys: {sorted(unknown)}")
    for key, base in defaults.items():
        if isinstance(base, dict):
            sub = override.get(key, {})
            extra = set(sub) - set(base)
            if extra:
                raise ConfigurationError(
                    f"unknown fig4 config keys under {key!r}: {sorted(extra)}"
                )
            merged[key] = {**base, **sub}
        else:
            merged[key] = override.get(key, base)
    return merged


@dataclass
class Fig4Bundle:
    transition_csv: Path
    neighborhood_csv: Path
    matching_csv: Path
    manifest_path: Path
    manifest: dict
    transition: SweepResult
    neighborhood: ProfileCurve
    matching: MatchingProfile


def reproduce_fig4(
    config: dict | None,
    out_dir: str | Path,
    master_seed: int = 0,
    threads: int = 1,
) -> Fig4Bundle:
    """The three structural datasets: transition curve, risk profile, two-strain grid.

    (a) steady-state duped fraction vs correction rate for the heterogeneous
    single strain; (b) duped probability vs same-class contact fraction for
    the more susceptible class at a correction rate just below threshold;
    (c) matching-strain duped probability per (degree decile, diversity bin)
    for the mirrored strain pair at a rate just below the pair's own
    threshold.  A JSON manifest echoes every parameter used.
    """
    resolved = _merge_config(FIG4_DEFAULTS, config or {})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    network = NetworkConfig.from_dict(resolved["network"])
    solver = SolverConfig(**resolved["solver"])
    single = StrainParams(gamma=1.0, **resolved["single_strain"])
    dist = build_ensemble(network)

    gamma_c_single = find_invasion_threshold_auto(dist, single, solver)
    grid_cfg = resolved["gamma_grid"]
    grid = np.linspace(
        grid_cfg["lo_fraction"] * gamma_c_single,
        grid_cfg["hi_fraction"] * gamma_c_single,
        int(grid_cfg["points"]),
    )
    sweep = gamma_sweep(
        SweepSpec(
            axis="gamma",
            grid=tuple(grid),
            network=network,
            strain=single,
            solver=solver,
        ),
        master_seed=master_seed,
        threads=threads,
    )
    transition_csv = sweep.to_csv(out / "fig4a_transition.csv")

    gamma_b = resolved["gamma_b_override"]
    if gamma_b is None:
        gamma_b = resolved["gamma_b_fraction"] * gamma_c_single
    traj_b = integrate(
        dist,
        single.with_gamma(gamma_b),
        seed_initial(dist, solver.seed_eps),
        solver,
        record_dt=None,
    )
    high_lambda_class = 1 if single.lambda_1 >= single.lambda_2 else 2
    profile_b = neighborhood_profile(
        dist, traj_b.final_field, high_lambda_class, (network.d_min, network.d_max)
    )
    neighborhood_csv = profile_b.to_csv(out / "fig4b_neighborhood.csv")

    two = resolved["two_strain"]
    pair = StrainPair.mirrored(two["lambda_mismatched"], two["lambda_matched"], 1.0)
    gamma_c_pair = find_invasion_threshold_auto(dist, pair.strain_a, solver)
    gamma_run_c = resolved["gamma_c_override"]
    if gamma_run_c is None:
        gamma_run_c = resolved["gamma_c_fraction"] * gamma_c_pair
    run_pair = pair.with_gamma(gamma_run_c)
    traj_ca = integrate(
        dist, run_pair.strain_a, seed_initial(dist, solver.seed_eps), solver,
        record_dt=None,
    )
    traj_cb = integrate(
        dist, run_pair.strain_b, seed_initial(dist, solver.seed_eps), solver,
        record_dt=None,
    )
    joint = joint_state(dist, traj_ca.final_field, traj_cb.final_field)
    profile_c = matching_profile(dist, joint)
    matching_csv = profile_c.to_csv(out / "fig4c_matching.csv")

    manifest = {
        "tool_version": __version__,
        "master_seed": master_seed,
        "config": resolved,
        "derived": {
            "gamma_c_single": gamma_c_single,
            "gamma_b": gamma_b,
            "gamma_c_pair": gamma_c_pair,
            "gamma_run_c": gamma_run_c,
            "high_lambda_class": high_lambda_class,
        },
        "outputs": [
            transition_csv.name,
            neighborhood_csv.name,
            matching_csv.name,
        ],
    }
    manifest_path = out / "fig4_manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return Fig4Bundle(
        transition_csv=transition_csv,
        neighborhood_csv=neighborhood_csv,
        matching_csv=matching_csv,
        manifest_path=manifest_path,
        manifest=manifest,
        transition=sweep,
        neighborhood=profile_b,
        matching=profile_c,
    )
