"""Compartment ensemble of a two-class network with power-law contacts.

The population splits into two equal demographic classes.  Every node draws
its contact count from a truncated power law; half of each class links
assortatively (each contact falls in-class with probability ``q``) and the
other half are bridge nodes whose contacts are class-blind.  A compartment
``(i, a, b)`` collects the class-``i`` nodes with ``a`` class-1 and ``b``
class-2 contacts; the mass ``p^i_{a,b}`` of each compartment is the state
unit of the mean-field dynamics.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binom

from .errors import ConfigurationError, SamplingError

DEFAULT_D_MIN = 2
DEFAULT_D_MAX = 100

_REPAIR_BUDGET = 100


@dataclass(frozen=True)
class NetworkConfig:
    """Parameters of the network ensemble.

    ``bridge_fraction`` and ``class_share`` are constants of the model (one
    half each); they are fields so that test harnesses can build degenerate
    ensembles, but config files must leave them at the model values.
    ``alpha <= 1`` is likewise only permitted for hand-built test ensembles
    with a small degree range; external configs require ``alpha > 1``.
    """

    alpha: float
    q: float
    d_min: int = DEFAULT_D_MIN
    d_max: int = DEFAULT_D_MAX
    bridge_fraction: float = 0.5
    class_share: float = 0.5
    n_classes: int = 2

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise ConfigurationError(f"alpha must be finite (got {self.alpha})")
        if not 0.0 <= self.q <= 1.0:
            raise ConfigurationError(f"q must lie in [0, 1] (got {self.q})")
        if self.d_min < 1:
            raise ConfigurationError(f"d_min must be >= 1 (got {self.d_min})")
        if self.d_max < self.d_min:
            raise ConfigurationError(
                f"empty degree support: d_min={self.d_min} > d_max={self.d_max}"
            )
        if not 0.0 <= self.bridge_fraction <= 1.0:
            raise ConfigurationError(
                f"bridge_fraction must lie in [0, 1] (got {self.bridge_fraction})"
            )
        if self.n_classes != 2:
            raise ConfigurationError("the model is defined for exactly 2 classes")

    def validation_errors(self) -> list[str]:
        """Strict model constraints, for configs coming from files."""
        errors = []
        if not self.alpha > 1.0:
            errors.append(f"alpha must exceed 1 (got {self.alpha})")
        if self.bridge_fraction != 0.5:
            errors.append(
                f"bridge_fraction is fixed at 0.5 (got {self.bridge_fraction})"
            )
        if self.class_share != 0.5:
            errors.append(f"class_share is fixed at 0.5 (got {self.class_share})")
        return errors

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "q": self.q,
            "d_min": self.d_min,
            "d_max": self.d_max,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        known = {"alpha", "q", "d_min", "d_max"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(
                f"unknown network config keys: {sorted(unknown)}"
            )
        if "alpha" not in data or "q" not in data:
            raise ConfigurationError("network config requires 'alpha' and 'q'")
        cfg = cls(
            alpha=float(data["alpha"]),
            q=float(data["q"]),
            d_min=int(data.get("d_min", DEFAULT_D_MIN)),
            d_max=int(data.get("d_max", DEFAULT_D_MAX)),
        )
        errors = cfg.validation_errors()
        if errors:
            raise ConfigurationError("; ".join(errors))
        return cfg

    @classmethod
    def from_json(cls, path: str | Path) -> "NetworkConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _support_arrays(d_min: int, d_max: int) -> tuple[np.ndarray, np.ndarray]:
    """All (a, b) pairs with d_min <= a+b <= d_max, degree-major order."""
    a_list, b_list = [], []
    for d in range(d_min, d_max + 1):
        for a in range(d + 1):
            a_list.append(a)
            b_list.append(d - a)
    return np.asarray(a_list, dtype=np.int64), np.asarray(b_list, dtype=np.int64)


def _swap_index(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Position of the mirrored compartment (b, a) for every (a, b)."""
    lookup = {(int(x), int(y)): m for m, (x, y) in enumerate(zip(a, b))}
    try:
        return np.asarray(
            [lookup[(int(y), int(x))] for x, y in zip(a, b)], dtype=np.int64
        )
    except KeyError as exc:
        raise ConfigurationError(
            f"support is not mirror-closed: missing compartment {exc}"
        ) from None


@dataclass(frozen=True)
class ClassDegreeDistribution:
    """Compartment masses ``p^i_{a,b}`` on a shared (a, b) support.

    ``masses[0]`` holds class 1, ``masses[1]`` class 2; by convention the
    first contact count ``a`` refers to class-1 contacts and ``b`` to class-2
    contacts for nodes of either class.
    """

    a: np.ndarray
    b: np.ndarray
    masses: np.ndarray
    config: NetworkConfig | None = None
    _swap: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=np.int64)
        b = np.ascontiguousarray(self.b, dtype=np.int64)
        masses = np.ascontiguousarray(self.masses, dtype=np.float64)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "masses", masses)
        if masses.shape != (2, a.shape[0]) or b.shape != a.shape:
            raise ConfigurationError("masses must have shape (2, len(a))")
        if np.any(masses < 0):
            raise ConfigurationError("compartment masses must be non-negative")
        total = masses.sum()
        if abs(total - 1.0) > 1e-12:
            raise ConfigurationError(f"masses must sum to 1 (got {total!r})")
        for i in (0, 1):
            share = masses[i].sum()
            if abs(share - 0.5) > 1e-12:
                raise ConfigurationError(
                    f"class {i + 1} must carry mass 1/2 (got {share!r})"
                )
        if self.config is not None:
            d = a + b
            if d.min() < self.config.d_min or d.max() > self.config.d_max:
                raise ConfigurationError("support violates the degree bounds")
        # index of the mirrored compartment (b, a), used for symmetry checks
        swap = _swap_index(a, b)
        object.__setattr__(self, "_swap", swap)
        sym_err = np.max(np.abs(masses[0] - masses[1][swap])) if len(a) else 0.0
        if sym_err > 1e-12:
            raise ConfigurationError(
                f"label-exchange symmetry violated by {sym_err:g}"
            )

    @property
    def n_compartments(self) -> int:
        return self.a.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.a + self.b

    @property
    def swap_index(self) -> np.ndarray:
        """Position of compartment (b, a) for each compartment (a, b)."""
        return self._swap

    def mass_of(self, cls: int, a: int, b: int) -> float:
        hit = np.flatnonzero((self.a == a) & (self.b == b))
        if hit.size == 0:
            return 0.0
        return float(self.masses[cls - 1, hit[0]])


def build_ensemble(cfg: NetworkConfig) -> ClassDegreeDistribution:
    """Compartment masses of the mixed assortative/bridge ensemble.

    For class 1 the unnormalized mass at (a, b) with d = a+b is

        (1/2) d^(-alpha) [ (1/2) C(d,a) q^a (1-q)^b + (1/2) C(d,a) 2^(-d) ]

    (class 2 follows by exchanging the class labels).  The expression is
    normalized over the whole truncated support at once, which leaves each
    class with mass exactly 1/2; class 2 is materialized as the mirror image
    of class 1 so that the label-exchange symmetry holds to the last bit.
    """
    a, b = _support_arrays(cfg.d_min, cfg.d_max)
    d = (a + b).astype(np.float64)
    degree_weight = d ** (-cfg.alpha)
    assortative = binom.pmf(a, a + b, cfg.q)
    bridge = binom.pmf(a, a + b, 0.5)
    f1 = 0.5 * degree_weight * 0.5 * (assortative + bridge)
    total = f1.sum()
    if not total > 0:
        raise ConfigurationError("ensemble has zero total mass")
    p1 = f1 / (2.0 * total)
    masses = np.empty((2, a.shape[0]))
    masses[0] = p1
    masses[1] = p1[_swap_index(a, b)]
    return ClassDegreeDistribution(a=a, b=b, masses=masses, config=cfg)


def degree_marginal(dist: ClassDegreeDistribution) -> dict[int, float]:
    """Probability of each total degree d = a + b, over both classes."""
    d = dist.degrees
    total = dist.masses.sum(axis=0)
    out: dict[int, float] = {}
    for deg in np.unique(d):
        out[int(deg)] = float(total[d == deg].sum())
    return out


def mean_excess_degree(dist: ClassDegreeDistribution) -> tuple[float, float]:
    """(mean degree, mean degree of a random neighbor).

    The neighbor mean is E[d^2]/E[d]; it exceeds the plain mean whenever the
    degree distribution has positive variance (the friendship paradox).
    """
    marginal = degree_marginal(dist)
    degs = np.array(sorted(marginal))
    probs = np.array([marginal[int(k)] for k in degs])
    probs = probs / probs.sum()
    mean = float((degs * probs).sum())
    second = float((degs.astype(float) ** 2 * probs).sum())
    return mean, second / mean


@dataclass(frozen=True)
class ExplicitNetwork:
    """A finite realization of the ensemble: class labels plus an edge list.

    Edges are undirected and stored canonically (u < v); the graph is simple.
    ``dropped_edges`` counts edges discarded after the repair budget.
    """

    node_classes: np.ndarray
    edges: np.ndarray
    seed: int
    dropped_edges: int = 0

    def __post_init__(self):
        classes = np.ascontiguousarray(self.node_classes, dtype=np.int64)
        edges = np.ascontiguousarray(self.edges, dtype=np.int64)
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise ConfigurationError("edges must have shape (E, 2)")
        edges = np.sort(edges, axis=1)
        object.__setattr__(self, "node_classes", classes)
        object.__setattr__(self, "edges", edges)
        if edges.shape[0]:
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ConfigurationError("self-loop in edge list")
            uniq = np.unique(edges, axis=0)
            if uniq.shape[0] != edges.shape[0]:
                raise ConfigurationError("parallel edge in edge list")

    @property
    def n_nodes(self) -> int:
        return self.node_classes.shape[0]

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def neighbor_class_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Per node: (number of class-1 neighbors, number of class-2 neighbors)."""
        n = self.n_nodes
        a = np.zeros(n, dtype=np.int64)
        b = np.zeros(n, dtype=np.int64)
        u, v = self.edges[:, 0], self.edges[:, 1]
        cu = self.node_classes[u]
        cv = self.node_classes[v]
        np.add.at(a, u, (cv == 1).astype(np.int64))
        np.add.at(b, u, (cv == 2).astype(np.int64))
        np.add.at(a, v, (cu == 1).astype(np.int64))
        np.add.at(b, v, (cu == 2).astype(np.int64))
        return a, b

    def to_csv(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        edge_path = out / "edges.csv"
        node_path = out / "nodes.csv"
        with open(edge_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node_u", "node_v"])
            writer.writerows(self.edges.tolist())
        with open(node_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node_id", "class"])
            writer.writerows(enumerate(self.node_classes.tolist()))
        return edge_path, node_path

    @classmethod
    def from_csv(
        cls, edge_path: str | Path, node_path: str | Path, seed: int = 0
    ) -> "ExplicitNetwork":
        nodes = np.loadtxt(node_path, delimiter=",", skiprows=1, dtype=np.int64)
        nodes = nodes.reshape(-1, 2)
        order = np.argsort(nodes[:, 0])
        classes = nodes[order, 1]
        edges = np.loadtxt(edge_path, delimiter=",", skiprows=1, dtype=np.int64)
        edges = edges.reshape(-1, 2)
        return cls(node_classes=classes, edges=edges, seed=seed)


def _degree_probs(cfg: NetworkConfig) -> tuple[np.ndarray, np.ndarray]:
    degs = np.arange(cfg.d_min, cfg.d_max + 1)
    w = degs.astype(float) ** (-cfg.alpha)
    return degs, w / w.sum()


def _pair_in_pool(stubs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    rng.shuffle(stubs)
    return stubs.reshape(-1, 2)


def _bad_pairs(pairs: np.ndarray, allow_self: bool) -> np.ndarray:
    """Boolean mask of offending pairs (self-loops and duplicates)."""
    if pairs.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    canon = np.sort(pairs, axis=1)
    bad = np.zeros(pairs.shape[0], dtype=bool)
    if not allow_self:
        bad |= canon[:, 0] == canon[:, 1]
    order = np.lexsort((canon[:, 1], canon[:, 0]))
    sorted_canon = canon[order]
    dup = np.zeros(pairs.shape[0], dtype=bool)
    same = np.all(sorted_canon[1:] == sorted_canon[:-1], axis=1)
    dup[order[1:]] |= same
    dup[order[:-1]] |= same
    bad |= dup
    return bad


def _repair_pool(
    pairs: np.ndarray, rng: np.random.Generator, cross: bool
) -> tuple[np.ndarray, int]:
    """Re-match offending pairs, preserving every stub; drop leftovers.

    For in-class pools both self-loops and duplicates are offenders; cross
    pools cannot self-loop, and the two stub columns must stay on their own
    side of the class boundary.
    """
    for _ in range(_REPAIR_BUDGET):
        bad = _bad_pairs(pairs, allow_self=False)
        n_bad = int(bad.sum())
        if n_bad == 0:
            return pairs, 0
        good_idx = np.flatnonzero(~bad)
        n_donor = min(len(good_idx), 2 * n_bad)
        donors = rng.choice(good_idx, size=n_donor, replace=False) if n_donor else \
            np.empty(0, dtype=np.int64)
        redo = np.concatenate([np.flatnonzero(bad), donors])
        keep = np.ones(pairs.shape[0], dtype=bool)
        keep[redo] = False
        subset = pairs[redo]
        if cross:
            left = subset[:, 0].copy()
            right = subset[:, 1].copy()
            rng.shuffle(left)
            rng.shuffle(right)
            rematched = np.stack([left, right], axis=1)
        else:
            stubs = subset.ravel().copy()
            rematched = _pair_in_pool(stubs, rng)
        pairs = np.concatenate([pairs[keep], rematched])
    bad = _bad_pairs(pairs, allow_self=False)
    return pairs[~bad], int(bad.sum())


def _flip_stubs(
    rng: np.random.Generator,
    nodes: np.ndarray,
    source_counts: np.ndarray,
    dest_counts: np.ndarray,
    k: int,
) -> None:
    """Move k uniformly chosen stubs (per-stub, not per-node) between pools."""
    if k <= 0:
        return
    pool = np.repeat(nodes, source_counts[nodes])
    chosen = rng.choice(pool, size=k, replace=False)
    np.subtract.at(source_counts, chosen, 1)
    np.add.at(dest_counts, chosen, 1)


def sample_network(cfg: NetworkConfig, n_nodes: int, seed: int) -> ExplicitNetwork:
    """Sample a simple graph whose compartment statistics follow the ensemble.

    Each node draws a degree from the truncated power law, an
    assortative/bridge role (probability ``bridge_fraction`` of the latter),
    and directs each stub in-class with probability q (assortative) or 1/2
    (bridge).  Stubs are then matched within the two in-class pools and
    across the cross-class pool.  Odd pools are repaired by flipping
    uniformly chosen stub orientations; residual self-loops and duplicates
    are re-matched up to the repair budget and dropped as a last resort.
    """
    if n_nodes < 2:
        raise ConfigurationError(f"n_nodes must be >= 2 (got {n_nodes})")
    rng = np.random.default_rng(seed)
    n1 = n_nodes - n_nodes // 2
    classes = np.ones(n_nodes, dtype=np.int64)
    classes[n1:] = 2
    degs, probs = _degree_probs(cfg)
    degree = rng.choice(degs, size=n_nodes, p=probs)
    is_bridge = rng.random(n_nodes) < cfg.bridge_fraction
    p_in = np.where(is_bridge, 0.5, cfg.q)
    in_count = rng.binomial(degree, p_in)
    cross_count = degree - in_count

    # stub totals per class must allow an even in-class pool on each side and
    # a balanced cross pool; a lone odd stub is fixed by nudging one degree
    if degree.sum() % 2 == 1:
        i = int(rng.integers(n_nodes))
        if degree[i] < cfg.d_max:
            degree[i] += 1
            if rng.random() < p_in[i]:
                in_count[i] += 1
            else:
                cross_count[i] += 1
        else:
            degree[i] -= 1
            if rng.random() < in_count[i] / (in_count[i] + cross_count[i]):
                in_count[i] -= 1
            else:
                cross_count[i] -= 1

    side1 = np.flatnonzero(classes == 1)
    side2 = np.flatnonzero(classes == 2)
    s_tot = np.array([degree[side1].sum(), degree[side2].sum()])
    c_now = np.array([cross_count[side1].sum(), cross_count[side2].sum()])
    parity = int(s_tot[0] % 2)
    target = int((c_now[0] + c_now[1]) // 2)
    if target % 2 != parity:
        target += 1
    target = max(parity, min(target, int(s_tot.min())))
    for side, nodes in ((0, side1), (1, side2)):
        delta = int(c_now[side]) - target
        if delta > 0:
            _flip_stubs(rng, nodes, cross_count, in_count, delta)
        elif delta < 0:
            _flip_stubs(rng, nodes, in_count, cross_count, -delta)

    if (in_count[side1].sum() % 2) or (in_count[side2].sum() % 2):
        raise SamplingError(f"stub parity repair failed (seed={seed})")

    dropped = 0
    pools = []
    for nodes in (side1, side2):
        stubs = np.repeat(nodes, in_count[nodes])
        pairs, n_drop = _repair_pool(_pair_in_pool(stubs, rng), rng, cross=False)
        dropped += n_drop
        pools.append(pairs)
    left = np.repeat(side1, cross_count[side1])
    right = np.repeat(side2, cross_count[side2])
    if left.shape[0] != right.shape[0]:
        raise SamplingError(f"cross-pool balance repair failed (seed={seed})")
    rng.shuffle(left)
    rng.shuffle(right)
    pairs, n_drop = _repair_pool(np.stack([left, right], axis=1), rng, cross=True)
    dropped += n_drop
    pools.append(pairs)

    edges = np.sort(np.concatenate(pools), axis=1)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return ExplicitNetwork(
        node_classes=classes, edges=edges[order], seed=seed, dropped_edges=dropped
    )
