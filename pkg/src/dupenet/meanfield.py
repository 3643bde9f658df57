"""Mean-field dynamics of duped compartment masses.

Class-``i`` susceptibles become duped at rate ``lambda_i`` per duped
neighbor; duped nodes are corrected back at rate ``gamma`` per susceptible
neighbor.  The per-compartment duped mass ``D^i_{a,b}`` evolves as

    dD/dt = lambda_i (p - D) (a theta_i1 + b theta_i2)
            - gamma D (a phi_i1 + b phi_i2)

where ``theta_ij`` (``phi_ij``) is the probability that a class-i -> class-j
link reaches a duped (susceptible) node.  Those four closure probabilities
make the system autonomous.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numba
import numpy as np

from .ensemble import ClassDegreeDistribution
from .errors import (
    BracketError,
    ConfigurationError,
    ConsistencyError,
    NumericalBlowupError,
)

CLAMP_TOL = 1e-12
THRESHOLD_WIDTH = 1e-3

# flush threshold for decayed compartments; denormal arithmetic stalls the FPU
_TINY = 1e-250


@dataclass(frozen=True)
class StrainParams:
    """Per-class duping rates and the shared correction rate."""

    lambda_1: float
    lambda_2: float
    gamma: float

    def __post_init__(self):
        for name in ("lambda_1", "lambda_2", "gamma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{name} must be finite and >= 0 (got {v})")

    @property
    def lam(self) -> np.ndarray:
        return np.array([self.lambda_1, self.lambda_2])

    def with_gamma(self, gamma: float) -> "StrainParams":
        return replace(self, gamma=gamma)

    def to_dict(self) -> dict:
        return {
            "lambda_1": self.lambda_1,
            "lambda_2": self.lambda_2,
            "gamma": self.gamma,
        }


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 0.01
    t_max: float = 500.0
    steady_tol: float = 1e-10
    seed_eps: float = 1e-3

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive (got {self.dt})")
        if not self.t_max > 0:
            raise ConfigurationError(f"t_max must be positive (got {self.t_max})")
        if not self.steady_tol > 0:
            raise ConfigurationError(
                f"steady_tol must be positive (got {self.steady_tol})"
            )
        if not 0 < self.seed_eps < 1:
            raise ConfigurationError(
                f"seed_eps must lie in (0, 1) (got {self.seed_eps})"
            )

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "t_max": self.t_max,
            "steady_tol": self.steady_tol,
            "seed_eps": self.seed_eps,
        }


@dataclass(frozen=True)
class DupedField:
    """Duped mass per compartment, bounded by the ensemble masses."""

    masses: np.ndarray
    reference: ClassDegreeDistribution

    def __post_init__(self):
        masses = np.ascontiguousarray(self.masses, dtype=np.float64)
        object.__setattr__(self, "masses", masses)
        p = self.reference.masses
        if masses.shape != p.shape:
            raise ConsistencyError("duped field shape does not match the ensemble")
        if np.any(masses < -CLAMP_TOL) or np.any(masses - p > CLAMP_TOL):
            raise ConfigurationError("duped masses must satisfy 0 <= D <= p")

    def fractions(self) -> tuple[np.ndarray, float]:
        return duped_fraction(self.reference, self)


@dataclass(frozen=True)
class MixingState:
    """Closure probabilities theta[i,j], phi[i,j] (0-based class indices)."""

    theta: np.ndarray
    phi: np.ndarray


def _contact_weights(dist: ClassDegreeDistribution) -> np.ndarray:
    """Row i holds each compartment's count of class-(i+1) contacts."""
    return np.vstack([dist.a, dist.b]).astype(np.float64)


def _as_masses(dist: ClassDegreeDistribution, d_field) -> np.ndarray:
    if isinstance(d_field, DupedField):
        if d_field.reference is not dist and not (
            d_field.reference.masses.shape == dist.masses.shape
            and np.array_equal(d_field.reference.a, dist.a)
            and np.array_equal(d_field.reference.b, dist.b)
            and np.array_equal(d_field.reference.masses, dist.masses)
        ):
            raise ConsistencyError("duped field lives on a different ensemble")
        return d_field.masses
    arr = np.ascontiguousarray(d_field, dtype=np.float64)
    if arr.shape != dist.masses.shape:
        raise ConsistencyError("duped array shape does not match the ensemble")
    return arr


def mixing_probabilities(dist: ClassDegreeDistribution, d_field) -> MixingState:
    """Closure probabilities of reaching a duped / susceptible node.

    ``theta[i, j] = sum(w_i * D_j) / sum(w_i * p_j)`` with ``w_1 = a`` and
    ``w_2 = b``; ``phi`` uses ``p - D``.  A zero denominator means no edges
    of that type exist, in which case theta = 0 and phi = 1 by convention.
    """
    d = _as_masses(dist, d_field)
    p = dist.masses
    w = _contact_weights(dist)
    den = w @ p.T
    num_theta = w @ d.T
    num_phi = w @ (p - d).T
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(den > 0, num_theta / den, 0.0)
        phi = np.where(den > 0, num_phi / den, 1.0)
    return MixingState(theta=theta, phi=phi)


def derivative(
    dist: ClassDegreeDistribution, d_field, strain: StrainParams
) -> np.ndarray:
    """Instantaneous rate of change of the duped masses, shape (2, M)."""
    d = _as_masses(dist, d_field)
    p = dist.masses
    w = _contact_weights(dist)
    mix = mixing_probabilities(dist, d)
    pressure = mix.theta @ w
    correction = mix.phi @ w
    lam = strain.lam[:, None]
    return lam * (p - d) * pressure - strain.gamma * d * correction


def seed_initial(dist: ClassDegreeDistribution, eps: float) -> DupedField:
    """Uniformly duped initial condition D = eps * p."""
    if not 0 < eps < 1:
        raise ConfigurationError(f"eps must lie in (0, 1) (got {eps})")
    return DupedField(masses=eps * dist.masses, reference=dist)


def duped_fraction(dist: ClassDegreeDistribution, d_field) -> tuple[np.ndarray, float]:
    """(per-class duped fractions, total duped fraction).

    Each class carries ensemble mass 1/2, so the class fraction is twice the
    class's duped mass.
    """
    d = _as_masses(dist, d_field)
    per_class = 2.0 * d.sum(axis=1)
    return per_class, float(d.sum())


@numba.njit(cache=True)
def _rk4_rhs(s1, s2, p1, p2, af, bf, lam1, lam2, gamma, dA1, dA2, dB1, dB2, o1, o2):
    M = af.shape[0]
    x1 = 0.0
    x2 = 0.0
    z1 = 0.0
    z2 = 0.0
    for m in range(M):
        x1 += af[m] * s1[m]
        x2 += af[m] * s2[m]
        z1 += bf[m] * s1[m]
        z2 += bf[m] * s2[m]
    t11 = x1 / dA1 if dA1 > 0.0 else 0.0
    t12 = x2 / dA2 if dA2 > 0.0 else 0.0
    t21 = z1 / dB1 if dB1 > 0.0 else 0.0
    t22 = z2 / dB2 if dB2 > 0.0 else 0.0
    for m in range(M):
        deg = af[m] + bf[m]
        pr1 = af[m] * t11 + bf[m] * t12
        pr2 = af[m] * t21 + bf[m] * t22
        o1[m] = lam1 * (p1[m] - s1[m]) * pr1 - gamma * s1[m] * (deg - pr1)
        o2[m] = lam2 * (p2[m] - s2[m]) * pr2 - gamma * s2[m] * (deg - pr2)


@numba.njit(cache=True)
def _rk4_run(
    D1,
    D2,
    p1,
    p2,
    af,
    bf,
    lam1,
    lam2,
    gamma,
    dA1,
    dA2,
    dB1,
    dB2,
    dt,
    n_steps,
    steady_tol,
    record_stride,
    rec,
    rec_t,
):
    """Fixed-step RK4 with invariant-guarding step halving.

    Returns (records_written, status, t_end) with status 0 = reached the
    horizon, 1 = steady state, 2 = non-finite state.
    """
    M = af.shape[0]
    k11 = np.empty(M)
    k12 = np.empty(M)
    k21 = np.empty(M)
    k22 = np.empty(M)
    k31 = np.empty(M)
    k32 = np.empty(M)
    k41 = np.empty(M)
    k42 = np.empty(M)
    y1 = np.empty(M)
    y2 = np.empty(M)
    c1 = np.empty(M)
    c2 = np.empty(M)
    rec[0, 0, :] = D1
    rec[0, 1, :] = D2
    rec_t[0] = 0.0
    n_rec = 1
    h_min = dt * 2.0 ** -20
    status = 0
    t = 0.0
    steps_done = 0
    for s in range(n_steps):
        _rk4_rhs(D1, D2, p1, p2, af, bf, lam1, lam2, gamma, dA1, dA2, dB1, dB2, k11, k12)
        rmax = 0.0
        for m in range(M):
            v = abs(k11[m])
            if v > rmax:
                rmax = v
            v = abs(k12[m])
            if v > rmax:
                rmax = v
        if rmax < steady_tol:
            status = 1
            break
        remaining = dt
        h = dt
        first_sub = True
        while remaining > 0.0:
            if h > remaining:
                h = remaining
            if first_sub:
                a1, a2 = k11, k12
            else:
                _rk4_rhs(
                    D1, D2, p1, p2, af, bf, lam1, lam2, gamma,
                    dA1, dA2, dB1, dB2, k11, k12,
                )
                a1, a2 = k11, k12
            half = 0.5 * h
            for m in range(M):
                y1[m] = D1[m] + half * a1[m]
                y2[m] = D2[m] + half * a2[m]
            _rk4_rhs(
                y1, y2, p1, p2, af, bf, lam1, lam2, gamma,
                dA1, dA2, dB1, dB2, k21, k22,
            )
            for m in range(M):
                y1[m] = D1[m] + half * k21[m]
                y2[m] = D2[m] + half * k22[m]
            _rk4_rhs(
                y1, y2, p1, p2, af, bf, lam1, lam2, gamma,
                dA1, dA2, dB1, dB2, k31, k32,
            )
            for m in range(M):
                y1[m] = D1[m] + h * k31[m]
                y2[m] = D2[m] + h * k32[m]
            _rk4_rhs(
                y1, y2, p1, p2, af, bf, lam1, lam2, gamma,
                dA1, dA2, dB1, dB2, k41, k42,
            )
            h6 = h / 6.0
            violated = False
            blown = False
            for m in range(M):
                v = D1[m] + h6 * (k11[m] + 2.0 * k21[m] + 2.0 * k31[m] + k41[m])
                if not np.isfinite(v):
                    blown = True
                    break
                if v < -CLAMP_TOL or v - p1[m] > CLAMP_TOL:
                    violated = True
                c1[m] = v
                v = D2[m] + h6 * (k12[m] + 2.0 * k22[m] + 2.0 * k32[m] + k42[m])
                if not np.isfinite(v):
                    blown = True
                    break
                if v < -CLAMP_TOL or v - p2[m] > CLAMP_TOL:
                    violated = True
                c2[m] = v
            if blown:
                return n_rec, 2, t + (dt - remaining)
            if violated and h > h_min:
                h *= 0.5
                first_sub = False
                continue
            for m in range(M):
                v = c1[m]
                if v < 0.0:
                    v = 0.0
                elif v > p1[m]:
                    v = p1[m]
                D1[m] = v if v > _TINY else 0.0
                v = c2[m]
                if v < 0.0:
                    v = 0.0
                elif v > p2[m]:
                    v = p2[m]
                D2[m] = v if v > _TINY else 0.0
            remaining -= h
            first_sub = False
        steps_done = s + 1
        t = steps_done * dt
        if steps_done % record_stride == 0:
            rec[n_rec, 0, :] = D1
            rec[n_rec, 1, :] = D2
            rec_t[n_rec] = t
            n_rec += 1
    if n_rec == 0 or rec_t[n_rec - 1] != t:
        rec[n_rec, 0, :] = D1
        rec[n_rec, 1, :] = D2
        rec_t[n_rec] = t
        n_rec += 1
    return n_rec, status, t


@dataclass
class MeanFieldTrajectory:
    """Sampled states of one integration run."""

    times: np.ndarray
    duped: np.ndarray
    steady_state_reached: bool
    dist: ClassDegreeDistribution
    strain: StrainParams
    solver: SolverConfig

    @property
    def final_field(self) -> DupedField:
        return DupedField(masses=self.duped[-1], reference=self.dist)

    @property
    def final_total(self) -> float:
        return float(self.duped[-1].sum())

    def total_curve(self) -> np.ndarray:
        return self.duped.sum(axis=(1, 2))

    def class_curves(self) -> np.ndarray:
        return 2.0 * self.duped.sum(axis=2)

    def summary(self) -> dict:
        per_class, total = duped_fraction(self.dist, self.duped[-1])
        return {
            "gamma": self.strain.gamma,
            "lambda_1": self.strain.lambda_1,
            "lambda_2": self.strain.lambda_2,
            "final_total": total,
            "final_class_1": float(per_class[0]),
            "final_class_2": float(per_class[1]),
            "steady_state_reached": self.steady_state_reached,
        }

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        a, b = self.dist.a, self.dist.b
        p = self.dist.masses
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "class", "a", "b", "p", "D"])
            for t, state in zip(self.times, self.duped):
                for i in (0, 1):
                    for m in range(a.shape[0]):
                        writer.writerow(
                            [repr(float(t)), i + 1, int(a[m]), int(b[m]),
                             repr(float(p[i, m])), repr(float(state[i, m]))]
                        )
        return path


def integrate(
    dist: ClassDegreeDistribution,
    strain: StrainParams,
    init: DupedField,
    solver: SolverConfig,
    record_dt: float | None = 1.0,
) -> MeanFieldTrajectory:
    """Advance the duped field until steady state or the time horizon.

    Classical RK4 with a fixed base step; a step that would leave the
    invariant region [0, p] by more than the clamp tolerance is retried at
    half size, and accepted states are clamped into the region.  The base
    step is capped by the stiffest linear rate, (lambda_max + gamma) *
    d_max, so the scheme stays inside its stability region even when
    compartments are far below their ceiling p (where the invariant guard
    cannot sense instability).  States are recorded roughly every
    ``record_dt`` (None records endpoints only).
    """
    d0 = _as_masses(dist, init)
    p = dist.masses
    w = _contact_weights(dist)
    den = w @ p.T
    stiffest = (max(strain.lambda_1, strain.lambda_2) + strain.gamma) * float(
        dist.degrees.max()
    )
    dt = solver.dt if stiffest <= 0 else min(solver.dt, 2.0 / stiffest)
    n_steps = int(math.ceil(solver.t_max / dt))
    if record_dt is None:
        stride = n_steps + 1
    else:
        stride = max(1, int(round(record_dt / dt)))
    max_rec = n_steps // stride + 3
    M = dist.n_compartments
    rec = np.empty((max_rec, 2, M))
    rec_t = np.empty(max_rec)
    D1 = np.ascontiguousarray(d0[0].copy())
    D2 = np.ascontiguousarray(d0[1].copy())
    af = np.ascontiguousarray(dist.a, dtype=np.float64)
    bf = np.ascontiguousarray(dist.b, dtype=np.float64)
    n_rec, status, t_end = _rk4_run(
        D1, D2,
        np.ascontiguousarray(p[0]), np.ascontiguousarray(p[1]),
        af, bf,
        strain.lambda_1, strain.lambda_2, strain.gamma,
        den[0, 0], den[0, 1], den[1, 0], den[1, 1],
        dt, n_steps, solver.steady_tol, stride,
        rec, rec_t,
    )
    if status == 2:
        raise NumericalBlowupError(t_end)
    return MeanFieldTrajectory(
        times=rec_t[:n_rec].copy(),
        duped=rec[:n_rec].copy(),
        steady_state_reached=status == 1,
        dist=dist,
        strain=strain,
        solver=solver,
    )


def _invades(
    dist: ClassDegreeDistribution,
    strain: StrainParams,
    solver: SolverConfig,
) -> bool:
    traj = integrate(
        dist, strain, seed_initial(dist, solver.seed_eps), solver, record_dt=None
    )
    return traj.final_total > 10.0 * solver.seed_eps


def find_invasion_threshold(
    dist: ClassDegreeDistribution,
    strain_template: StrainParams,
    solver: SolverConfig,
    bracket: tuple[float, float],
    width: float = THRESHOLD_WIDTH,
) -> float:
    """Bisect the correction rate separating invasion from extinction.

    A run invades when its long-time duped fraction exceeds ten times the
    seed fraction.  The bracket must straddle the transition: invasion at
    ``gamma_lo``, extinction at ``gamma_hi``.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 <= lo < hi:
        raise BracketError(f"invalid bracket ({lo}, {hi})")
    if not _invades(dist, strain_template.with_gamma(lo), solver):
        raise BracketError(f"no invasion at gamma_lo={lo}; widen the bracket")
    if _invades(dist, strain_template.with_gamma(hi), solver):
        raise BracketError(f"no extinction at gamma_hi={hi}; widen the bracket")
    while hi - lo >= width:
        mid = 0.5 * (lo + hi)
        if _invades(dist, strain_template.with_gamma(mid), solver):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def estimate_invasion_gamma(
    dist: ClassDegreeDistribution,
    strain_template: StrainParams,
    solver: SolverConfig | None = None,
    rel_tol: float = 1e-2,
) -> float:
    """Cheap estimate of the invasion threshold from linear growth rates.

    Integrates a tiny seed for a short window and measures the exponential
    growth rate of the total duped mass; bisects the correction rate until
    the growth rate changes sign.  Intended to seed brackets for
    :func:`find_invasion_threshold`, not to replace it.
    """
    if strain_template.lambda_1 == 0 and strain_template.lambda_2 == 0:
        return 0.0
    dt = solver.dt if solver is not None else 0.01
    probe = SolverConfig(dt=dt, t_max=12.0, steady_tol=1e-30, seed_eps=1e-9)

    def growth(gamma: float) -> float:
        traj = integrate(
            dist,
            strain_template.with_gamma(gamma),
            seed_initial(dist, probe.seed_eps),
            probe,
            record_dt=6.0,
        )
        curve = traj.total_curve()
        f_mid, f_end = curve[-2], curve[-1]
        if f_mid <= 0 or f_end <= 0:
            return -np.inf
        return math.log(f_end / f_mid) / (traj.times[-1] - traj.times[-2])

    lo, hi = 0.0, max(
        1.0, strain_template.lambda_1 + strain_template.lambda_2
    )
    for _ in range(60):
        if growth(hi) < 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise BracketError("growth rate never turned negative")
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if growth(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_invasion_threshold_auto(
    dist: ClassDegreeDistribution,
    strain_template: StrainParams,
    solver: SolverConfig,
) -> float:
    """Invasion threshold with a bracket seeded by the linear estimate."""
    guess = estimate_invasion_gamma(dist, strain_template, solver)
    if guess <= 0:
        raise BracketError("strain cannot invade at any correction rate")
    for lo_f, hi_f in ((0.7, 1.4), (0.4, 2.5), (0.1, 8.0)):
        try:
            return find_invasion_threshold(
                dist, strain_template, solver, (lo_f * guess, hi_f * guess)
            )
        except BracketError:
            continue
    raise BracketError(
        f"could not bracket the threshold around the estimate {guess:g}"
    )
