"""Classify alpha values from their Lyapunov profiles and pick one; online alpha switching."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .lle import LyapunovProfile
from .numeric import Polynomial
from .solvers import Method, SolverParams, SolverTrace, run_solver

WELL_BEHAVED = "well_behaved"
POOR = "poor"


@dataclass(frozen=True)
class SelectionCriteria:
    min_negative_fraction: float = 0.8
    max_transient_fraction: float = 0.3
    max_positive_excursion: float = 0.5
    late_window_fraction: float = 0.5

    def __post_init__(self):
        for name in ("min_negative_fraction", "max_transient_fraction", "late_window_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if not self.max_positive_excursion > 0:
            raise ValueError("max_positive_excursion must be > 0")


@dataclass(frozen=True)
class ProfileFeatures:
    negative_fraction: float
    transient_end_index: int
    max_excursion: float
    mean_late_lambda1: float
    length: int


def profile_features(p, criteria: SelectionCriteria = SelectionCriteria()) -> ProfileFeatures:
    """Summary numbers of one profile (a :class:`LyapunovProfile` or a lambda_1 sequence)."""
    lam = np.asarray(p.lambda1 if isinstance(p, LyapunovProfile) else p, dtype=float)
    n = len(lam)
    if n == 0:
        raise ValueError("empty profile")
    neg = lam < 0
    nonneg = np.flatnonzero(~neg)
    transient = 0 if nonneg.size == 0 else int(nonneg[-1]) + 1
    late = max(1, math.ceil(criteria.late_window_fraction * n))
    return ProfileFeatures(
        negative_fraction=float(neg.mean()),
        transient_end_index=transient,
        max_excursion=max(0.0, float(lam.max())),
        mean_late_lambda1=float(lam[-late:].mean()),
        length=n,
    )


def classify_alpha(features: ProfileFeatures, criteria: SelectionCriteria = SelectionCriteria()) -> str:
    ok = (
        features.negative_fraction >= criteria.min_negative_fraction
        and features.transient_end_index <= criteria.max_transient_fraction * features.length
        and features.max_excursion <= criteria.max_positive_excursion
    )
    return WELL_BEHAVED if ok else POOR


@dataclass
class AlphaRecord:
    alpha: float
    negative_fraction: float
    transient_end_index: int
    max_excursion: float
    mean_late_lambda1: float
    classification: str
    profiles: list = field(default_factory=list)


@dataclass
class TuningReport:
    per_alpha: list[AlphaRecord]
    selected_alpha: float
    observable: str
    case_label: str
    flagged: bool = False
    criteria: Optional[SelectionCriteria] = None

    @property
    def selected(self) -> AlphaRecord:
        return next(r for r in self.per_alpha if r.alpha == self.selected_alpha)

    def to_dict(self) -> dict:
        return {
            "selected_alpha": self.selected_alpha,
            "flagged": self.flagged,
            "observable": self.observable,
            "case_label": self.case_label,
            "criteria": asdict(self.criteria) if self.criteria else None,
            "per_alpha": [asdict(r) for r in self.per_alpha],
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read_json(cls, path) -> "TuningReport":
        d = json.loads(Path(path).read_text())
        return cls(
            per_alpha=[AlphaRecord(**r) for r in d["per_alpha"]],
            selected_alpha=d["selected_alpha"],
            observable=d["observable"],
            case_label=d["case_label"],
            flagged=d["flagged"],
            criteria=SelectionCriteria(**d["criteria"]) if d["criteria"] else None,
        )


def _label(p) -> str:
    if isinstance(p, LyapunovProfile):
        return f"case{p.case_label}_{p.observable.value}"
    return ""


def _record(alpha: float, profiles: Sequence, criteria: SelectionCriteria) -> AlphaRecord:
    # an alpha is well behaved only if every profile is; lambda means are averaged
    feats = [profile_features(p, criteria) for p in profiles]
    classes = [classify_alpha(ft, criteria) for ft in feats]
    detail = [
        dict(asdict(ft), profile=_label(p), classification=c)
        for p, ft, c in zip(profiles, feats, classes)
    ]
    return AlphaRecord(
        alpha=float(alpha),
        negative_fraction=float(np.mean([ft.negative_fraction for ft in feats])),
        transient_end_index=max(ft.transient_end_index for ft in feats),
        max_excursion=max(ft.max_excursion for ft in feats),
        mean_late_lambda1=float(np.mean([ft.mean_late_lambda1 for ft in feats])),
        classification=WELL_BEHAVED if all(c == WELL_BEHAVED for c in classes) else POOR,
        profiles=detail,
    )


def select_alpha(
    profiles_by_alpha: Mapping[float, object],
    criteria: SelectionCriteria = SelectionCriteria(),
) -> TuningReport:
    """Pick the well-behaved alpha with the most negative late-window lambda_1.

    Values of the mapping are a single profile or a sequence of profiles (one
    per observable and case). Ties go to the shorter transient, then the
    smaller alpha. When nothing is well behaved the alpha with the largest
    negative fraction is returned and the report is flagged.
    """
    if not profiles_by_alpha:
        raise ValueError("no alpha candidates")
    records = []
    observables, cases = set(), set()
    for alpha, profs in profiles_by_alpha.items():
        if isinstance(profs, LyapunovProfile) or (
            len(profs) > 0 and not isinstance(profs[0], (LyapunovProfile, list, tuple, np.ndarray))
        ):
            profs = [profs]
        for p in profs:
            if isinstance(p, LyapunovProfile):
                observables.add(p.observable.value)
                cases.add(p.case_label)
        records.append(_record(alpha, profs, criteria))

    good = [r for r in records if r.classification == WELL_BEHAVED]
    if good:
        best = min(good, key=lambda r: (r.mean_late_lambda1, r.transient_end_index, r.alpha))
        flagged = False
    else:
        best = min(records, key=lambda r: (-r.negative_fraction, r.alpha))
        flagged = True
    return TuningReport(
        per_alpha=records,
        selected_alpha=best.alpha,
        observable="+".join(sorted(observables)),
        case_label="+".join(sorted(cases)),
        flagged=flagged,
        criteria=criteria,
    )


@dataclass(frozen=True)
class WatchConfig:
    window_len: int = 8
    patience: int = 3
    log_floor: float = 1e-30

    def __post_init__(self):
        if self.window_len < 2 or self.patience < 1:
            raise ValueError("window_len must be >= 2 and patience >= 1")


@dataclass
class Switch:
    iteration: int
    from_alpha: float
    to_alpha: float
    slope: float


def trailing_slope(values: Sequence[float], floor: float = 1e-30) -> float:
    """Least-squares slope of ``ln(v + floor)`` against the step index."""
    y = np.log(np.asarray(values, dtype=float) + floor)
    t = np.arange(len(y), dtype=float)
    t -= t.mean()
    return float(np.dot(t, y - y.mean()) / np.dot(t, t))


class _AlphaWatch:
    """Advance through the candidates when the trailing step-norm slope stays positive."""

    def __init__(self, candidates: Sequence[float], watch: WatchConfig):
        self.candidates = [float(a) for a in candidates]
        self.watch = watch
        self.index = 0
        self.strikes = 0
        self.switches: list[Switch] = []

    def __call__(self, k: int, step_norms) -> float:
        w = self.watch.window_len
        if len(self.candidates) > 1 and len(step_norms) >= w:
            slope = trailing_slope(step_norms[-w:], self.watch.log_floor)
            self.strikes = self.strikes + 1 if slope > 0 else 0
            if self.strikes >= self.watch.patience:
                old = self.candidates[self.index]
                self.index = (self.index + 1) % len(self.candidates)
                self.switches.append(Switch(k, old, self.candidates[self.index], slope))
                self.strikes = 0
        return self.candidates[self.index]


def adaptive_solve(
    f: Polynomial,
    x0,
    params: SolverParams,
    alpha_candidates: Sequence[float],
    watch: WatchConfig = WatchConfig(),
) -> tuple[SolverTrace, list[Switch]]:
    """INVM with online alpha switching.

    After every iteration past ``window_len`` the slope of ``ln s_k`` over the
    trailing window is a single-trajectory instability proxy. ``patience``
    consecutive positive slopes move to the next candidate (cyclically). The
    trace is continuous across switches; ``trace.alphas`` records the alpha
    used at each step.
    """
    if len(alpha_candidates) == 0:
        raise ValueError("need at least one alpha candidate")
    controller = _AlphaWatch(alpha_candidates, watch)
    start = SolverParams(
        float(alpha_candidates[0]), params.beta, params.max_iters, params.tol, params.divergence_cap
    )
    trace = run_solver(f, x0, start, Method.INVM, alpha_controller=controller)
    return trace, controller.switches
