"""Event-driven stochastic oracle for the dupe/correct dynamics.

Exact continuous-time simulation on an explicit network: susceptible nodes
become duped at rate lambda_class * (duped neighbors), duped nodes are
corrected at rate gamma * (susceptible neighbors).  Event selection uses a
binary-indexed tree over per-node propensities, so each event costs
O(degree * log n).  States are summarized per (class, a, b) compartment.
"""

from __future__ import annotations

from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .ensemble import ExplicitNetwork
from .errors import ConfigurationError, ConsistencyError
from .meanfield import MeanFieldTrajectory, StrainParams


@dataclass(frozen=True)
class AbmRun:
    """One simulation: network, rates, initial duped set, seed, horizon."""

    network: ExplicitNetwork
    strain: StrainParams
    initial_duped: float | Sequence[int]
    seed: int
    t_max: float
    sample_dt: float = 1.0

    def __post_init__(self):
        if not self.t_max > 0:
            raise ConfigurationError(f"t_max must be positive (got {self.t_max})")
        if not self.sample_dt > 0:
            raise ConfigurationError(
                f"sample_dt must be positive (got {self.sample_dt})"
            )
        if isinstance(self.initial_duped, float) and not 0 <= self.initial_duped <= 1:
            raise ConfigurationError("initial duped fraction must lie in [0, 1]")


@dataclass
class AbmResult:
    """Compartment-level summary of one run."""

    times: np.ndarray
    comp_class: np.ndarray
    comp_a: np.ndarray
    comp_b: np.ndarray
    comp_sizes: np.ndarray
    duped_counts: np.ndarray
    n_nodes: int
    n_events: int
    seed: int

    @property
    def final_total(self) -> float:
        return float(self.duped_counts[-1].sum() / self.n_nodes)

    @property
    def final_class_fractions(self) -> np.ndarray:
        out = np.zeros(2)
        for i in (1, 2):
            sel = self.comp_class == i
            out[i - 1] = self.duped_counts[-1, sel].sum() / self.comp_sizes[sel].sum()
        return out

    def total_curve(self) -> np.ndarray:
        return self.duped_counts.sum(axis=1) / self.n_nodes

    def to_csv(self, path: str | Path) -> Path:
        import csv

        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "class", "a", "b", "compartment_size", "duped_count"])
            for t, row in zip(self.times, self.duped_counts):
                for k in range(len(self.comp_class)):
                    writer.writerow(
                        [
                            repr(float(t)),
                            int(self.comp_class[k]),
                            int(self.comp_a[k]),
                            int(self.comp_b[k]),
                            int(self.comp_sizes[k]),
                            repr(float(row[k])),
                        ]
                    )
        return path


@numba.njit(cache=True)
def _gillespie(
    indptr,
    indices,
    class_idx,
    lam1,
    lam2,
    gamma,
    duped,
    comp_id,
    n_comps,
    t_max,
    sample_dt,
    rng_state,
):
    """Exact jump-process simulation; returns sampled compartment counts."""
    n = class_idx.shape[0]
    n_samples = int(t_max / sample_dt) + 1
    counts = np.zeros((n_samples, n_comps), dtype=np.int64)
    cur = np.zeros(n_comps, dtype=np.int64)
    ndup = np.zeros(n, dtype=np.int64)
    nd_total = 0
    for u in range(n):
        if duped[u]:
            nd_total += 1
            cur[comp_id[u]] += 1
            for e in range(indptr[u], indptr[u + 1]):
                ndup[indices[e]] += 1
    size = 1
    while size < n:
        size *= 2
    tree = np.zeros(size + 1)
    prop = np.zeros(n)
    total = 0.0
    for u in range(n):
        deg = indptr[u + 1] - indptr[u]
        if duped[u]:
            prop[u] = gamma * (deg - ndup[u])
        else:
            lam = lam1 if class_idx[u] == 0 else lam2
            prop[u] = lam * ndup[u]
        total += prop[u]
        i = u + 1
        while i <= size:
            tree[i] += prop[u]
            i += i & (-i)
    state = rng_state if rng_state != np.uint64(0) else np.uint64(0x9E3779B97F4A7C15)
    t = 0.0
    sidx = 0
    n_events = 0
    while True:
        if total <= 1e-13 or nd_total == 0 or nd_total == n:
            break
        # xorshift64* uniform in (0, 1]
        state ^= state << np.uint64(13)
        state ^= state >> np.uint64(7)
        state ^= state << np.uint64(17)
        u1 = (float(state >> np.uint64(11)) + 1.0) * (1.0 / 9007199254740992.0)
        dt = -np.log(u1) / total
        t_new = t + dt
        while sidx < n_samples and sidx * sample_dt <= t_new:
            counts[sidx] = cur
            sidx += 1
        if t_new >= t_max:
            t = t_max
            break
        t = t_new
        state ^= state << np.uint64(13)
        state ^= state >> np.uint64(7)
        state ^= state << np.uint64(17)
        u2 = float(state >> np.uint64(11)) * (1.0 / 9007199254740992.0)
        target = u2 * total
        pos = 0
        bit = size
        while bit > 0:
            nxt = pos + bit
            if nxt <= size and tree[nxt] < target:
                target -= tree[nxt]
                pos = nxt
            bit >>= 1
        node = pos if pos < n else n - 1
        was_duped = duped[node]
        duped[node] = not was_duped
        delta = -1 if was_duped else 1
        nd_total += delta
        cur[comp_id[node]] += delta
        deg = indptr[node + 1] - indptr[node]
        if duped[node]:
            newp = gamma * (deg - ndup[node])
        else:
            lam = lam1 if class_idx[node] == 0 else lam2
            newp = lam * ndup[node]
        dp = newp - prop[node]
        prop[node] = newp
        total += dp
        i = node + 1
        while i <= size:
            tree[i] += dp
            i += i & (-i)
        for e in range(indptr[node], indptr[node + 1]):
            v = indices[e]
            ndup[v] += delta
            degv = indptr[v + 1] - indptr[v]
            if duped[v]:
                npv = gamma * (degv - ndup[v])
            else:
                lam = lam1 if class_idx[v] == 0 else lam2
                npv = lam * ndup[v]
            dpv = npv - prop[v]
            if dpv != 0.0:
                prop[v] = npv
                total += dpv
                i = v + 1
                while i <= size:
                    tree[i] += dpv
                    i += i & (-i)
        n_events += 1
        if n_events % 262144 == 0:
            total = prop.sum()  # control float drift in the running total
    while sidx < n_samples:
        counts[sidx] = cur
        sidx += 1
    return counts, n_events


def _adjacency_csr(network: ExplicitNetwork) -> tuple[np.ndarray, np.ndarray]:
    n = network.n_nodes
    u, v = network.edges[:, 0], network.edges[:, 1]
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    order = np.argsort(src, kind="stable")
    indices = np.ascontiguousarray(dst[order])
    counts = np.bincount(src, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, indices


def _compartment_ids(
    network: ExplicitNetwork,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    a, b = network.neighbor_class_counts()
    key = np.stack([network.node_classes, a, b], axis=1)
    uniq, comp_id = np.unique(key, axis=0, return_inverse=True)
    sizes = np.bincount(comp_id, minlength=uniq.shape[0])
    return comp_id.astype(np.int64), uniq[:, 0], uniq[:, 1], uniq[:, 2], sizes


def _initial_duped_mask(run: AbmRun) -> np.ndarray:
    n = run.network.n_nodes
    duped = np.zeros(n, dtype=np.bool_)
    if isinstance(run.initial_duped, float):
        k = int(round(run.initial_duped * n))
        rng = np.random.default_rng(np.random.SeedSequence([run.seed, 1]))
        duped[rng.choice(n, size=k, replace=False)] = True
    else:
        duped[np.asarray(list(run.initial_duped), dtype=np.int64)] = True
    return duped


def run_event_driven(run: AbmRun) -> AbmResult:
    """Simulate the exact jump process and summarize it per compartment."""
    network = run.network
    indptr, indices = _adjacency_csr(network)
    comp_id, comp_class, comp_a, comp_b, comp_sizes = _compartment_ids(network)
    duped = _initial_duped_mask(run)
    rng_word = np.random.SeedSequence([run.seed, 2]).generate_state(1, np.uint64)[0]
    counts, n_events = _gillespie(
        indptr,
        indices,
        np.ascontiguousarray(network.node_classes - 1),
        run.strain.lambda_1,
        run.strain.lambda_2,
        run.strain.gamma,
        duped,
        comp_id,
        comp_sizes.shape[0],
        run.t_max,
        run.sample_dt,
        rng_word,
    )
    n_samples = counts.shape[0]
    times = np.arange(n_samples) * run.sample_dt
    return AbmResult(
        times=times,
        comp_class=comp_class,
        comp_a=comp_a,
        comp_b=comp_b,
        comp_sizes=comp_sizes,
        duped_counts=counts,
        n_nodes=network.n_nodes,
        n_events=n_events,
        seed=run.seed,
    )


def _replicate(args) -> AbmResult:
    return run_event_driven(args)


def run_replicates(
    network: ExplicitNetwork,
    strain: StrainParams,
    initial_duped: float | Sequence[int],
    master_seed: int,
    n_runs: int,
    t_max: float,
    sample_dt: float = 1.0,
    threads: int = 1,
) -> list[AbmResult]:
    """Independent replicates with per-run seeds derived from the master seed."""
    runs = [
        AbmRun(
            network=network,
            strain=strain,
            initial_duped=initial_duped,
            seed=int(np.random.SeedSequence([master_seed, r]).generate_state(1)[0]),
            t_max=t_max,
            sample_dt=sample_dt,
        )
        for r in range(n_runs)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_replicate, runs))
    return [run_event_driven(r) for r in runs]


@dataclass
class EnsembleAverage:
    """Cross-replicate mean and standard error of compartment counts."""

    times: np.ndarray
    comp_class: np.ndarray
    comp_a: np.ndarray
    comp_b: np.ndarray
    comp_sizes: np.ndarray
    mean_counts: np.ndarray
    se_counts: np.ndarray
    n_runs: int
    n_nodes: int

    def mean_total_curve(self) -> np.ndarray:
        return self.mean_counts.sum(axis=1) / self.n_nodes

    @property
    def final_total(self) -> float:
        return float(self.mean_total_curve()[-1])


def ensemble_average(results: Sequence[AbmResult]) -> EnsembleAverage:
    """Average compartment counts across replicates at matched sample times."""
    if len(results) < 2:
        raise ConsistencyError("ensemble averaging needs at least 2 runs")
    first = results[0]
    for r in results[1:]:
        if (
            r.n_nodes != first.n_nodes
            or r.times.shape != first.times.shape
            or not np.allclose(r.times, first.times)
            or not np.array_equal(r.comp_class, first.comp_class)
            or not np.array_equal(r.comp_a, first.comp_a)
            or not np.array_equal(r.comp_b, first.comp_b)
        ):
            raise ConsistencyError("replicates come from mismatched configurations")
    stack = np.stack([r.duped_counts for r in results]).astype(float)
    mean = stack.mean(axis=0)
    se = stack.std(axis=0, ddof=1) / np.sqrt(len(results))
    return EnsembleAverage(
        times=first.times,
        comp_class=first.comp_class,
        comp_a=first.comp_a,
        comp_b=first.comp_b,
        comp_sizes=first.comp_sizes,
        mean_counts=mean,
        se_counts=se,
        n_runs=len(results),
        n_nodes=first.n_nodes,
    )


@dataclass
class MeanFieldComparison:
    times: np.ndarray
    abm_totals: np.ndarray
    meanfield_totals: np.ndarray
    max_abs_deviation: float
    tol: float
    passed: bool


def compare_to_meanfield(
    avg: EnsembleAverage, traj: MeanFieldTrajectory, tol: float
) -> MeanFieldComparison:
    """Max deviation of the total duped fraction over the shared time grid.

    The mean-field trajectory holds its final state at later times once it
    reached steady state, so ABM samples beyond its last record are compared
    against that plateau.
    """
    mf_times = traj.times
    mf_totals = traj.total_curve()
    abm_totals = avg.mean_total_curve()
    matched_mf = np.empty_like(avg.times)
    for k, t in enumerate(avg.times):
        exact = np.flatnonzero(np.isclose(mf_times, t, rtol=0.0, atol=1e-9))
        if exact.size:
            matched_mf[k] = mf_totals[exact[0]]
        elif t > mf_times[-1] and traj.steady_state_reached:
            matched_mf[k] = mf_totals[-1]
        else:
            raise ConsistencyError(f"time grids do not match at t={t}")
    dev = float(np.max(np.abs(abm_totals - matched_mf)))
    return MeanFieldComparison(
        times=avg.times,
        abm_totals=abm_totals,
        meanfield_totals=matched_mf,
        max_abs_deviation=dev,
        tol=tol,
        passed=dev <= tol,
    )
