"""Composition of independently integrated misinformation strains.

Strains do not interact: the joint state of a compartment is the product of
its per-strain duped probabilities.  Profiles slice the composed state by
neighborhood make-up (same-class contact fraction) and by degree decile to
expose the echo-chamber and herd-correction structure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ensemble import ClassDegreeDistribution, degree_marginal
from .errors import ConfigurationError, ConsistencyError
from .meanfield import DupedField, StrainParams, _as_masses

N_DIVERSITY_BINS = 10
N_DEGREE_DECILES = 10

# which strain matches each class: the matching strain is the one the class
# is more susceptible to (strain "a" targets class 2, strain "b" class 1)
DEFAULT_MATCHING = {1: "b", 2: "a"}


@dataclass(frozen=True)
class StrainPair:
    """Two complementary strains; A targets class 2 (lambda_2 > lambda_1).

    Both strains share the correction rate unless ``allow_gamma_mismatch``
    is set.
    """

    strain_a: StrainParams
    strain_b: StrainParams
    allow_gamma_mismatch: bool = False

    def __post_init__(self):
        if self.strain_a.gamma != self.strain_b.gamma and not self.allow_gamma_mismatch:
            raise ConfigurationError(
                "strains must share gamma (pass allow_gamma_mismatch to override)"
            )

    @classmethod
    def mirrored(
        cls, lambda_mismatched: float, lambda_matched: float, gamma: float
    ) -> "StrainPair":
        """The paper's pair: A = (low, high), B = (high, low)."""
        return cls(
            strain_a=StrainParams(lambda_mismatched, lambda_matched, gamma),
            strain_b=StrainParams(lambda_matched, lambda_mismatched, gamma),
        )

    def with_gamma(self, gamma: float) -> "StrainPair":
        return StrainPair(
            strain_a=self.strain_a.with_gamma(gamma),
            strain_b=self.strain_b.with_gamma(gamma),
        )


@dataclass(frozen=True)
class JointStrainField:
    """Per-compartment probabilities of the four joint strain states."""

    p_none: np.ndarray
    p_only_a: np.ndarray
    p_only_b: np.ndarray
    p_both: np.ndarray
    reference: ClassDegreeDistribution

    def q_a(self) -> np.ndarray:
        return self.p_only_a + self.p_both

    def q_b(self) -> np.ndarray:
        return self.p_only_b + self.p_both

    def q_either(self) -> np.ndarray:
        return 1.0 - self.p_none

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        dist = self.reference
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["class", "a", "b", "p_none", "p_only_a", "p_only_b", "p_both"]
            )
            for i in (0, 1):
                for m in range(dist.n_compartments):
                    writer.writerow(
                        [
                            i + 1,
                            int(dist.a[m]),
                            int(dist.b[m]),
                            repr(float(self.p_none[i, m])),
                            repr(float(self.p_only_a[i, m])),
                            repr(float(self.p_only_b[i, m])),
                            repr(float(self.p_both[i, m])),
                        ]
                    )
        return path


def joint_state(
    dist: ClassDegreeDistribution, duped_a: DupedField, duped_b: DupedField
) -> JointStrainField:
    """Compose two independent strains into joint node-state probabilities.

    With q_s = D_s / p the per-compartment duped probability of strain s,
    p_both = q_a q_b and the marginals recover exactly:
    p_only_a + p_both == q_a.  Empty compartments get the all-none tuple.
    """
    da = _as_masses(dist, duped_a)
    db = _as_masses(dist, duped_b)
    p = dist.masses
    with np.errstate(invalid="ignore", divide="ignore"):
        qa = np.where(p > 0, np.clip(da / p, 0.0, 1.0), 0.0)
        qb = np.where(p > 0, np.clip(db / p, 0.0, 1.0), 0.0)
    both = qa * qb
    only_a = qa - both
    only_b = qb - both
    none = (1.0 - qa) * (1.0 - qb)
    return JointStrainField(
        p_none=none, p_only_a=only_a, p_only_b=only_b, p_both=both, reference=dist
    )


def same_class_fraction(dist: ClassDegreeDistribution, cls: int) -> np.ndarray:
    """Fraction of a compartment's contacts in the node's own class."""
    d = dist.degrees.astype(float)
    own = dist.a if cls == 1 else dist.b
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(d > 0, own / d, 0.0)


def diversity_bin_index(dist: ClassDegreeDistribution, cls: int) -> np.ndarray:
    """Equal-width bin of the same-class contact fraction (0 = most diverse)."""
    s = same_class_fraction(dist, cls)
    return np.minimum((s * N_DIVERSITY_BINS).astype(np.int64), N_DIVERSITY_BINS - 1)


def degree_decile_index(dist: ClassDegreeDistribution) -> np.ndarray:
    """Decile of the marginal degree-distribution mass, per compartment.

    Degree d lands in decile floor(10 * F(d-)) where F(d-) is the marginal
    mass strictly below d, so the deciles cut the mass, not the raw degree
    range; heavy-tailed marginals may leave some deciles without any degree.
    """
    marginal = degree_marginal(dist)
    degs = sorted(marginal)
    cum = 0.0
    decile_of: dict[int, int] = {}
    for deg in degs:
        decile_of[deg] = min(int(cum * N_DEGREE_DECILES), N_DEGREE_DECILES - 1)
        cum += marginal[deg]
    return np.asarray([decile_of[int(d)] for d in dist.degrees], dtype=np.int64)


@dataclass(frozen=True)
class ProfileCurve:
    """Mass-weighted duped probability per diversity bin."""

    bin_edges: np.ndarray
    values: np.ndarray
    masses: np.ndarray
    cls: int
    degree_band: tuple[int, int]
    empty: bool

    def populated(self) -> tuple[np.ndarray, np.ndarray]:
        """(bin centers, values) of the bins that carry mass."""
        centers = 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])
        keep = self.masses > 0
        return centers[keep], self.values[keep]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["class", "diversity_bin", "bin_lo", "bin_hi", "mass", "probability"]
            )
            for k in range(len(self.values)):
                writer.writerow(
                    [
                        self.cls,
                        k,
                        repr(float(self.bin_edges[k])),
                        repr(float(self.bin_edges[k + 1])),
                        repr(float(self.masses[k])),
                        "" if np.isnan(self.values[k]) else repr(float(self.values[k])),
                    ]
                )
        return path


def neighborhood_profile(
    dist: ClassDegreeDistribution,
    d_field: DupedField,
    cls: int,
    degree_band: tuple[int, int],
) -> ProfileCurve:
    """Duped probability vs same-class contact fraction, within a degree band.

    Bins the class-``cls`` compartments with total degree inside the band by
    same-class fraction and mass-averages D/p per bin; bins without mass
    carry NaN.  An entirely empty band is flagged rather than raised.
    """
    if cls not in (1, 2):
        raise ConfigurationError(f"class must be 1 or 2 (got {cls})")
    lo, hi = degree_band
    d = _as_masses(dist, d_field)
    i = cls - 1
    mask = (dist.degrees >= lo) & (dist.degrees <= hi)
    bins = diversity_bin_index(dist, cls)
    edges = np.linspace(0.0, 1.0, N_DIVERSITY_BINS + 1)
    mass = np.zeros(N_DIVERSITY_BINS)
    duped = np.zeros(N_DIVERSITY_BINS)
    np.add.at(mass, bins[mask], dist.masses[i, mask])
    np.add.at(duped, bins[mask], d[i, mask])
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(mass > 0, duped / mass, np.nan)
    return ProfileCurve(
        bin_edges=edges,
        values=values,
        masses=mass,
        cls=cls,
        degree_band=(int(lo), int(hi)),
        empty=not bool(mass.sum() > 0),
    )


@dataclass(frozen=True)
class MatchingProfile:
    """Matching-strain duped probability per (class, degree decile, diversity bin).

    ``matching`` holds p_both + p_only_matching (the probability of carrying
    the strain that targets the node's class); ``either`` holds 1 - p_none.
    Cells without mass are NaN.
    """

    matching: np.ndarray
    either: np.ndarray
    mass: np.ndarray
    matching_map: dict[int, str]

    def cell(self, cls: int, decile: int, div_bin: int) -> float:
        return float(self.matching[cls - 1, decile, div_bin])

    def diverse_vs_assortative_gap(self, decile: int, cls: int | None = None) -> float:
        """Assortative-bin minus most-diverse-bin matching probability.

        Bins are compared within one degree decile, between the highest and
        lowest same-class-fraction bins that carry mass.  Positive values
        mean echo chambers are more duped by their matching strain than
        diverse neighborhoods of the same connectivity (herd correction).
        With mirrored strains the two classes give the same answer; by
        default their mass-weighted mean is returned.
        """
        classes = (cls - 1,) if cls is not None else (0, 1)
        gaps, weights = [], []
        for i in classes:
            populated = np.flatnonzero(self.mass[i, decile] > 0)
            if populated.size < 2:
                continue
            assortative = populated[-1]
            diverse = populated[0]
            gaps.append(
                self.matching[i, decile, assortative]
                - self.matching[i, decile, diverse]
            )
            weights.append(self.mass[i, decile].sum())
        if not gaps:
            return float("nan")
        return float(np.average(gaps, weights=weights))

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "class",
                    "degree_decile",
                    "diversity_bin",
                    "mass",
                    "probability",
                    "probability_either",
                ]
            )
            for i in (0, 1):
                for dec in range(N_DEGREE_DECILES):
                    for k in range(N_DIVERSITY_BINS):
                        m = self.mass[i, dec, k]
                        if m == 0:
                            continue
                        writer.writerow(
                            [
                                i + 1,
                                dec,
                                k,
                                repr(float(m)),
                                repr(float(self.matching[i, dec, k])),
                                repr(float(self.either[i, dec, k])),
                            ]
                        )
        return path


def matching_profile(
    dist: ClassDegreeDistribution,
    joint: JointStrainField,
    matching: dict[int, str] | None = None,
) -> MatchingProfile:
    """Aggregate matching-strain duped probability into decile x bin cells."""
    if matching is None:
        matching = DEFAULT_MATCHING
    if set(matching) != {1, 2} or set(matching.values()) - {"a", "b"}:
        raise ConfigurationError(f"invalid matching map {matching}")
    if joint.reference is not dist and not np.array_equal(
        joint.reference.masses, dist.masses
    ):
        raise ConsistencyError("joint field lives on a different ensemble")
    deciles = degree_decile_index(dist)
    q = {"a": joint.q_a(), "b": joint.q_b()}
    q_either = joint.q_either()
    shape = (2, N_DEGREE_DECILES, N_DIVERSITY_BINS)
    mass = np.zeros(shape)
    match_mass = np.zeros(shape)
    either_mass = np.zeros(shape)
    for i, cls in enumerate((1, 2)):
        bins = diversity_bin_index(dist, cls)
        w = dist.masses[i]
        qm = q[matching[cls]][i]
        np.add.at(mass[i], (deciles, bins), w)
        np.add.at(match_mass[i], (deciles, bins), w * qm)
        np.add.at(either_mass[i], (deciles, bins), w * q_either[i])
    with np.errstate(invalid="ignore", divide="ignore"):
        matching_prob = np.where(mass > 0, match_mass / mass, np.nan)
        either_prob = np.where(mass > 0, either_mass / mass, np.nan)
    return MatchingProfile(
        matching=matching_prob,
        either=either_prob,
        mass=mass,
        matching_map=dict(matching),
    )
