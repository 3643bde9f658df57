"""Classifier-performance statistics for human deepfake-detection responses.

Human participant subgroups are treated as binary classifiers of video
authenticity (positive class = "fake"; a duped response is a false
negative).  Subgroups are compared through the Matthews correlation
coefficient of their confusion matrices, with significance assessed by a
bootstrap over resampled matrices.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, EmptyGroupError

AGE_BANDS = ("18-29", "30-49", "50-64", "65+")
RACES = ("white", "poc")
PERCEIVED_RACES = ("white", "poc", "maybe_poc", "uncertain")
VERDICTS = ("real", "fake")
GENDERS = ("male", "female", "nonbinary")

CSV_HEADER = (
    "participant_gender",
    "participant_age_band",
    "participant_race",
    "perceived_gender",
    "perceived_age_band",
    "perceived_race",
    "guess",
    "truth",
)

ATTRIBUTE_FIELDS = {
    "gender": ("participant_gender", "perceived_gender"),
    "age": ("participant_age_band", "perceived_age_band"),
    "race": ("participant_race", "perceived_race"),
}

SIGNIFICANCE_LEVEL = 0.95
DEFAULT_BOOTSTRAP_SAMPLES = 10_000


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts of guesses vs truth; positive class is "fake"."""

    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fn", "fp", "tn"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ConfigurationError(f"{name} must be a non-negative integer")
        if self.n < 1:
            raise ConfigurationError("confusion matrix must hold at least one response")

    @property
    def n(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def as_array(self) -> np.ndarray:
        return np.array([self.tp, self.fn, self.fp, self.tn], dtype=np.int64)

    def proportions(self) -> np.ndarray:
        return self.as_array() / self.n

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            self.tp + other.tp,
            self.fn + other.fn,
            self.fp + other.fp,
            self.tn + other.tn,
        )

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn}


def mcc(cm: ConfusionMatrix) -> float:
    """Matthews correlation coefficient in [-1, 1].

    (TP*TN - FP*FN) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN)); a zero factor in
    the denominator yields 0 by convention, which keeps bootstrap resamples
    well-defined when a margin empties.
    """
    tp, fn, fp, tn = cm.tp, cm.fn, cm.fp, cm.tn
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def accuracy(cm: ConfusionMatrix) -> float:
    """Fraction of correct guesses, (TP + TN) / N."""
    return (cm.tp + cm.tn) / cm.n


def _mcc_rows(counts: np.ndarray) -> np.ndarray:
    """Vectorized MCC over rows of (tp, fn, fp, tn) counts."""
    tp = counts[:, 0].astype(float)
    fn = counts[:, 1].astype(float)
    fp = counts[:, 2].astype(float)
    tn = counts[:, 3].astype(float)
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    num = tp * tn - fp * fn
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, num / np.sqrt(denom), 0.0)
    return out


def _accuracy_rows(counts: np.ndarray) -> np.ndarray:
    return (counts[:, 0] + counts[:, 3]) / counts.sum(axis=1)


@dataclass(frozen=True)
class CredibilityResult:
    """Bootstrap comparison of two confusion matrices.

    ``credibility`` is the fraction of resample pairs in which the first
    matrix scores higher than the second (ties count one half), so swapping
    the arguments under the same seed gives the complement.
    """

    mcc_a: float
    mcc_b: float
    credibility: float
    significant: bool
    n_samples: int
    metric: str = "mcc"

    def __post_init__(self):
        if self.significant != (self.credibility >= SIGNIFICANCE_LEVEL):
            raise ConfigurationError(
                "significance flag inconsistent with the 0.95 rule"
            )

    def to_dict(self) -> dict:
        return {
            "mcc_a": self.mcc_a,
            "mcc_b": self.mcc_b,
            "credibility": self.credibility,
            "significant": self.significant,
            "n_samples": self.n_samples,
            "metric": self.metric,
        }


def _resample_metric(
    cm: ConfusionMatrix, n_samples: int, seed: int, metric: str
) -> np.ndarray:
    # the resample stream is keyed to the matrix itself, not the argument
    # position: swapped calls reuse identical resamples, making the
    # complement property exact, and identical matrices tie on every draw
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, cm.tp, cm.fn, cm.fp, cm.tn])
    )
    counts = rng.multinomial(cm.n, cm.proportions(), size=n_samples)
    if metric == "mcc":
        return _mcc_rows(counts)
    return _accuracy_rows(counts)


def bootstrap_credibility(
    cm_a: ConfusionMatrix,
    cm_b: ConfusionMatrix,
    n_samples: int = DEFAULT_BOOTSTRAP_SAMPLES,
    seed: int = 0,
    metric: str = "mcc",
) -> CredibilityResult:
    """Credibility that the first group outperforms the second.

    Each matrix is resampled ``n_samples`` times from the four-category
    multinomial with its own observed proportions and its own N (responses
    are the resampling unit).  Credibility is the fraction of pairs where
    the first matrix's resampled score exceeds the second's, ties counting
    one half; 0.95 or more flags significance.
    """
    if metric not in ("mcc", "accuracy"):
        raise ConfigurationError(f"metric must be 'mcc' or 'accuracy' (got {metric})")
    if n_samples < 1:
        raise ConfigurationError("n_samples must be positive")
    scores_a = _resample_metric(cm_a, n_samples, seed, metric)
    scores_b = _resample_metric(cm_b, n_samples, seed, metric)
    wins = (scores_a > scores_b).sum() + 0.5 * (scores_a == scores_b).sum()
    credibility = float(wins / n_samples)
    return CredibilityResult(
        mcc_a=mcc(cm_a),
        mcc_b=mcc(cm_b),
        credibility=credibility,
        significant=credibility >= SIGNIFICANCE_LEVEL,
        n_samples=n_samples,
        metric=metric,
    )


@dataclass(frozen=True)
class ResponseRecord:
    """One coded survey response; empty perceived fields mean "not recorded"."""

    participant_gender: str
    participant_age_band: str
    participant_race: str
    perceived_gender: str
    perceived_age_band: str
    perceived_race: str
    guess: str
    truth: str

    def __post_init__(self):
        problems = []
        if self.participant_age_band not in AGE_BANDS:
            problems.append(f"participant_age_band={self.participant_age_band!r}")
        if self.participant_race not in RACES:
            problems.append(f"participant_race={self.participant_race!r}")
        if not self.participant_gender:
            problems.append("participant_gender is empty")
        if self.perceived_age_band and self.perceived_age_band not in AGE_BANDS:
            problems.append(f"perceived_age_band={self.perceived_age_band!r}")
        if self.perceived_race and self.perceived_race not in PERCEIVED_RACES:
            problems.append(f"perceived_race={self.perceived_race!r}")
        if self.guess not in VERDICTS:
            problems.append(f"guess={self.guess!r}")
        if self.truth not in VERDICTS:
            problems.append(f"truth={self.truth!r}")
        if problems:
            raise ConfigurationError("invalid record: " + ", ".join(problems))


def load_records(path: str | Path) -> list[ResponseRecord]:
    """Read coded responses from CSV with the canonical header."""
    path = Path(path)
    records = []
    errors = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_HEADER:
            raise ConfigurationError(
                f"{path}: header must be {','.join(CSV_HEADER)}"
            )
        for line_no, row in enumerate(reader, start=2):
            try:
                records.append(
                    ResponseRecord(**{k: (row[k] or "").strip() for k in CSV_HEADER})
                )
            except ConfigurationError as exc:
                errors.append(f"line {line_no}: {exc}")
    if errors:
        raise ConfigurationError(f"{path}: " + "; ".join(errors))
    return records


def aggregate(
    records: Iterable[ResponseRecord],
    participant_pred: Callable[[ResponseRecord], bool] | None = None,
    persona_pred: Callable[[ResponseRecord], bool] | None = None,
) -> ConfusionMatrix:
    """Confusion matrix over the records matching both predicates."""
    tp = fn = fp = tn = 0
    for rec in records:
        if participant_pred is not None and not participant_pred(rec):
            continue
        if persona_pred is not None and not persona_pred(rec):
            continue
        if rec.truth == "fake":
            if rec.guess == "fake":
                tp += 1
            else:
                fn += 1
        else:
            if rec.guess == "fake":
                fp += 1
            else:
                tn += 1
    if tp + fn + fp + tn == 0:
        raise EmptyGroupError("no records match the given predicates")
    return ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn)


@dataclass(frozen=True)
class PartitionResult:
    homophilic: ConfusionMatrix
    heterophilic: ConfusionMatrix
    n_excluded: int


def partition_homophily(
    records: Sequence[ResponseRecord], attribute: str
) -> PartitionResult:
    """Split responses by whether the perceived persona matches the viewer.

    Homophilic responses are those whose perceived persona attribute equals
    the participant's own; everything else is heterophilic, including
    "maybe_poc" and "uncertain" race perceptions (a hedged perception is not
    a match).  Records with the perceived attribute missing are excluded and
    tallied.
    """
    if attribute not in ATTRIBUTE_FIELDS:
        raise ConfigurationError(
            f"attribute must be one of {sorted(ATTRIBUTE_FIELDS)} (got {attribute!r})"
        )
    own_field, perceived_field = ATTRIBUTE_FIELDS[attribute]
    homophilic, heterophilic = [], []
    n_excluded = 0
    for rec in records:
        perceived = getattr(rec, perceived_field)
        if not perceived:
            n_excluded += 1
            continue
        if perceived == getattr(rec, own_field):
            homophilic.append(rec)
        else:
            heterophilic.append(rec)
    if not homophilic:
        raise EmptyGroupError(f"no homophilic responses for attribute {attribute!r}")
    if not heterophilic:
        raise EmptyGroupError(f"no heterophilic responses for attribute {attribute!r}")
    return PartitionResult(
        homophilic=aggregate(homophilic),
        heterophilic=aggregate(heterophilic),
        n_excluded=n_excluded,
    )
