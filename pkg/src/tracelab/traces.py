"""The asymptotic trace hierarchy and its empirical estimators.

The exact side pairs diagonal classes with (collared) currents.  The
empirical side realizes the window integral of the i-th eigenform as the
pairing of the i-th eigenvector with the letter-count vector of the points
in [-T, T]; with the integer eigenvector convention of the built-in
example this pairing, divided by Vol(B_0) L(i,j,T) T^{s_i}, is the
oscillation profile Psi whose running sup tends to 1 along the canonical
scales T = nu_1^n.  Truncated traces are expanded by subtracting, index by
index, the exact trace times the measured pairing; what remains at the
target index, normalized the same way, estimates the target trace.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .delone import DeloneSegment, WindowFamily, boundary_collar_count, counts_in_window
from .eigen import EigenError, EigenStructure
from .kernels import (
    EquivariantKernel,
    RestrictedMatrix,
    diagonal_class,
    poly_of_kernel,
    poly_trace_restricted,
)

__all__ = [
    "Schedule",
    "DeviationSeries",
    "PsiProfile",
    "IDSCurve",
    "tau",
    "deviation_series",
    "limsup_estimate",
    "psi_profile",
    "fit_exponent",
    "ids_curve",
    "shubin_check",
    "refined_shubin_check",
    "commutator_trace_test",
]


def worker_count() -> int:
    raw = os.environ.get("TRACE_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_ordered(fn, items):
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class Schedule:
    """Geometric sampling schedule T = phase * expansion^n.

    Phases are drawn log-uniformly from [1, expansion); the canonical
    schedule (a single phase 1) samples the exact renormalization scales,
    along which the oscillation profiles of a self-similar system attain
    their normalized limits.
    """

    expansion: float
    n_max: int
    phases: tuple[float, ...]

    @classmethod
    def geometric(cls, expansion: float, n_max: int = 10, n_phases: int = 8,
                  seed: int = 0) -> "Schedule":
        if n_phases < 1:
            raise ValueError("need at least one phase")
        if n_phases == 1:
            phases = (1.0,)
        else:
            rng = np.random.default_rng(seed)
            phases = tuple(sorted(float(np.exp(u)) for u in
                                  rng.uniform(0.0, math.log(expansion), n_phases)))
        return cls(float(expansion), int(n_max), phases)

    @classmethod
    def canonical(cls, expansion: float, n_max: int = 10) -> "Schedule":
        return cls(float(expansion), int(n_max), (1.0,))

    def times(self):
        """All (phase_index, n, T) samples, T exact int where possible."""
        out = []
        for pi, t0 in enumerate(self.phases):
            for n in range(self.n_max + 1):
                t = t0 * self.expansion**n
                if t0 == 1.0 and float(self.expansion).is_integer():
                    t = int(round(self.expansion)) ** n
                out.append((pi, n, t))
        return out

    @property
    def t_max(self) -> float:
        return max(float(t) for _, _, t in self.times())


def pairing(segment: DeloneSegment, entry, t):
    """<v_i, N(T)>: eigenvector against the window letter counts.

    Exact when both sides are exact; a folded complex pair yields the
    euclidean magnitude of its two real components (convention flagged in
    the profile, the scalar statement only covers real eigendirections).
    """
    counts = counts_in_window(segment, t)
    if entry.pair:
        u = float(entry.vec[:, 0] @ counts)
        v = float(entry.vec[:, 1] @ counts)
        return math.hypot(u, v)
    if entry.vec_exact is not None:
        return sum((Fraction(x) * int(c) for x, c in zip(entry.vec_exact, counts)), Fraction(0))
    return float(entry.vec @ counts)


def _norm_factor(entry, t, vol0: float) -> float:
    t = float(t)
    lt = math.log(t) ** entry.logpow if entry.logpow else 1.0
    return vol0 * lt * t**entry.s


def tau(kernel: EquivariantKernel, label, structure: EigenStructure,
        convention: str = "integer", segment: DeloneSegment | None = None,
        schedule: Schedule | None = None):
    """Trace value at one expanding index.

    The exact path projects the diagonal class onto the collared current.
    ``convention="scale-form"`` rescales by the measured oscillation sup so
    that the profile normalizes to 1 (requires segment and schedule).
    """
    entry = structure.entry(label)
    if not entry.in_plus:
        raise EigenError(f"index {tuple(label)} outside the expanding set")
    value = diagonal_class(kernel, structure).projection(label)
    if convention == "integer":
        return value
    if convention == "scale-form":
        if segment is None or schedule is None:
            raise ValueError("scale-form convention needs a segment and schedule")
        prof = psi_profile(label, structure, segment, schedule)
        return float(value) * prof.sup
    raise ValueError(f"unknown convention {convention!r}")


@dataclass(frozen=True)
class DeviationSeries:
    """Truncated traces with successive eigen-term remainders."""

    operator: str
    target: tuple[int, int, int]
    lower_labels: tuple[tuple[int, int, int], ...]
    schedule: Schedule
    rows: tuple[dict, ...]  # phase, n, T, raw, remainder, normalized
    vol0: float

    def column(self, key: str) -> np.ndarray:
        return np.array([float(r[key]) for r in self.rows])

    def to_csv(self) -> str:
        header = ["phase", "n", "T", "raw", "remainder", "normalized"]
        lines = [",".join(header)]
        for r in self.rows:
            lines.append(
                ",".join(
                    [str(r["phase"]), str(r["n"]), format(float(r["T"]), ".12g"),
                     format(float(r["raw"]), ".12g"), format(float(r["remainder"]), ".12g"),
                     format(float(r["normalized"]), ".12g")]
                )
            )
        return "\n".join(lines) + "\n"


def deviation_series(kernel: EquivariantKernel, structure: EigenStructure,
                     segment: DeloneSegment, schedule: Schedule,
                     target_label, window: WindowFamily = WindowFamily(),
                     raw_fn=None) -> DeviationSeries:
    """Remainders of tr(A|_{B_T}) after subtracting every dominating index.

    Each subtracted term is the exact trace at the lower index times the
    measured eigen-pairing of the window counts, so for classes resolved by
    the base letters the remainder at the target index is exactly the
    target term.  ``raw_fn`` may replace the truncated-trace evaluation
    (used by the refined polynomial check).
    """
    if schedule.n_max < 3:
        raise ValueError("schedule too short: need at least 4 scales")
    target = structure.entry(target_label)
    if not target.in_plus:
        raise EigenError(f"index {tuple(target_label)} outside the expanding set")
    lower = structure.lower_set(target_label)
    taus = {e.label: tau(kernel, e.label, structure) for e in lower}

    def raw_default(t):
        return kernel.diagonal_trace(segment, t)

    raw = raw_fn if raw_fn is not None else raw_default

    def one(sample):
        pi, n, t = sample
        tr = raw(t)
        rem = tr
        for e in lower:
            rem = rem - taus[e.label] * pairing(segment, e, t)
        normalized = float(rem) / _norm_factor(target, t, window.base_volume)
        return {
            "phase": pi, "n": n, "T": t, "raw": tr, "remainder": rem,
            "normalized": normalized,
        }

    rows = tuple(_map_ordered(one, schedule.times()))
    return DeviationSeries(
        operator=kernel.name, target=target.label,
        lower_labels=tuple(e.label for e in lower), schedule=schedule, rows=rows,
        vol0=window.base_volume,
    )


@dataclass(frozen=True)
class LimsupEstimate:
    value: float
    diagnostic: float  # relative change of the statistic over the last scale
    stabilized: bool
    per_phase: tuple[float, ...]
    convergent_mode: bool


def limsup_estimate(series: DeviationSeries, rel_change_tol: float = 0.10) -> LimsupEstimate:
    """Estimate of the limsup of the normalized remainder.

    Oscillating indices (anything below the leading one) report the running
    maximum of |normalized remainder| over the top half of the scales, per
    phase, then the max across phases.  The leading index has a convergent
    rather than oscillating series, so its estimate is the last-scale value
    per phase.  The diagnostic is the relative change of the reported
    statistic when the last scale is dropped.
    """
    convergent = len(series.lower_labels) == 0
    n_max = series.schedule.n_max
    half = n_max // 2

    def stat(upto: int) -> tuple[float, list[float]]:
        per_phase = []
        for pi in range(len(series.schedule.phases)):
            vals = [
                abs(float(r["normalized"]))
                for r in series.rows
                if r["phase"] == pi and half <= r["n"] <= upto
            ]
            if not vals:
                per_phase.append(0.0)
            elif convergent:
                per_phase.append(vals[-1])
            else:
                per_phase.append(max(vals))
        return max(per_phase), per_phase

    full, per_phase = stat(n_max)
    prev, _ = stat(n_max - 1)
    denom = max(abs(full), 1e-300)
    diag = abs(full - prev) / denom
    return LimsupEstimate(
        value=full, diagnostic=diag, stabilized=diag <= rel_change_tol,
        per_phase=tuple(per_phase), convergent_mode=convergent,
    )


@dataclass(frozen=True)
class PsiProfile:
    label: tuple[int, int, int]
    rows: tuple[dict, ...]  # phase, n, T, psi, running_sup
    sup: float
    pair_convention: bool  # magnitude of a folded 2d block


def psi_profile(label, structure: EigenStructure, segment: DeloneSegment,
                schedule: Schedule, window: WindowFamily = WindowFamily()) -> PsiProfile:
    """Oscillation profile: normalized eigen-pairing of the window counts."""
    entry = structure.entry(label)
    if not entry.in_plus:
        raise EigenError(f"index {tuple(label)} outside the expanding set")
    rows = []
    running = 0.0
    for pi, n, t in schedule.times():
        psi = float(pairing(segment, entry, t)) / _norm_factor(entry, t, window.base_volume)
        running = max(running, abs(psi))
        rows.append({"phase": pi, "n": n, "T": t, "psi": psi, "running_sup": running})
    return PsiProfile(label=entry.label, rows=tuple(rows), sup=running,
                      pair_convention=entry.pair)


def fit_exponent(ts, values, groups=None, min_points: int = 4) -> tuple[float, float, float]:
    """Envelope log-log fit: per-scale maxima of |values| against T.

    ``groups`` labels the scale of each sample (the schedule index n);
    samples sharing a scale are collapsed to the largest magnitude, which
    tames the oscillation across phases, and log|max| is least-squares
    fitted against log T.  Returns (slope, intercept, rms residual).
    """
    ts = [float(t) for t in ts]
    values = [abs(float(v)) for v in values]
    if groups is None:
        groups = range(len(ts))
    by_scale: dict[object, tuple[float, float]] = {}
    for key, t, v in zip(groups, ts, values):
        cur = by_scale.get(key)
        if cur is None or v > cur[1]:
            by_scale[key] = (t, v)
    pts = [(math.log(t), math.log(v)) for t, v in by_scale.values() if v > 0]
    if len(pts) < min_points:
        raise ValueError(f"need at least {min_points} positive magnitudes to fit")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    a = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = float(np.sqrt(np.mean((a @ np.array([slope, intercept]) - y) ** 2)))
    return float(slope), float(intercept), resid


@dataclass(frozen=True)
class IDSCurve:
    operator: str
    window: float
    volume: float
    eigenvalues: np.ndarray  # sorted ascending
    moments: tuple[float, ...]  # rho_T(x^m) for m = 0..4

    def counting(self, e: float) -> float:
        """n_T(E): eigenvalues <= E per unit volume."""
        return float(np.searchsorted(self.eigenvalues, e, side="right")) / self.volume

    @property
    def total_mass(self) -> float:
        return len(self.eigenvalues) / self.volume

    def to_csv(self) -> str:
        lines = ["E,n_T"]
        for k, e in enumerate(self.eigenvalues):
            lines.append(f"{format(float(e), '.12g')},{format((k + 1) / self.volume, '.12g')}")
        return "\n".join(lines) + "\n"


def ids_curve(kernel: EquivariantKernel, segment: DeloneSegment, t,
              window: WindowFamily = WindowFamily(), max_moment: int = 4) -> IDSCurve:
    """Spectrum of the restriction with its counting function and moments."""
    if not kernel.is_selfadjoint(tol=1e-12):
        raise ValueError("integrated density of states needs a self-adjoint operator")
    matrix = kernel.restrict(segment, t)
    vals = np.sort(matrix.eigenvalues())
    vol = window.volume(float(t))
    moments = tuple(float(np.sum(vals**m)) / vol for m in range(max_moment + 1))
    return IDSCurve(kernel.name, float(t), vol, vals, moments)


@dataclass(frozen=True)
class ShubinReport:
    operator: str
    poly: tuple
    tau1: object  # exact leading trace of phi(A)
    rows: tuple[dict, ...]  # T, rho_T, gap
    slope: float
    intercept: float
    residual: float


def shubin_check(kernel: EquivariantKernel, coefficients, structure: EigenStructure,
                 segment: DeloneSegment, schedule: Schedule,
                 window: WindowFamily = WindowFamily()) -> ShubinReport:
    """Trace-per-volume convergence of a polynomial of a self-adjoint kernel.

    rho_T(phi) = tr(phi(A|_{B_T})) / Vol(B_T) is compared against the exact
    leading trace of phi(A) computed through the collared class; the gap is
    envelope-fitted against T.
    """
    if not kernel.is_selfadjoint(tol=1e-12):
        raise ValueError("Shubin check needs a self-adjoint operator")
    poly_kernel = poly_of_kernel(kernel, coefficients)
    leading = next(e.label for e in structure.plus_entries)
    tau1 = diagonal_class(poly_kernel, structure).projection(leading)

    def one(sample):
        pi, n, t = sample
        matrix = kernel.restrict(segment, t)
        rho = poly_trace_restricted(matrix, coefficients, method="power") / window.volume(float(t))
        return {"phase": pi, "n": n, "T": t, "rho": rho, "gap": rho - float(tau1)}

    rows = tuple(_map_ordered(one, schedule.times()))
    slope, intercept, resid = fit_exponent(
        [r["T"] for r in rows], [r["gap"] for r in rows], groups=[r["n"] for r in rows]
    )
    return ShubinReport(
        operator=kernel.name, poly=tuple(coefficients), tau1=tau1, rows=rows,
        slope=slope, intercept=intercept, residual=resid,
    )


def refined_shubin_check(kernel: EquivariantKernel, coefficients,
                         structure: EigenStructure, segment: DeloneSegment,
                         schedule: Schedule, target_label,
                         window: WindowFamily = WindowFamily()):
    """Deviation analysis of tr(phi(A|_{B_T})) at one expanding index.

    The subtracted terms use the exact traces of the polynomial kernel
    phi(A); the restricted-then-evaluated trace differs from the truncated
    trace of phi(A) by a window-independent boundary defect, so the
    remainder estimates tau_target(phi(A)).  Returns the series, its
    limsup estimate, and the exact target value.
    """
    poly_kernel = poly_of_kernel(kernel, coefficients)

    def raw(t):
        matrix = kernel.restrict(segment, t)
        return poly_trace_restricted(matrix, coefficients, method="power")

    series = deviation_series(
        poly_kernel, structure, segment, schedule, target_label, window=window, raw_fn=raw
    )
    estimate = limsup_estimate(series)
    exact = tau(poly_kernel, target_label, structure)
    return series, estimate, exact


@dataclass(frozen=True)
class CommutatorReport:
    max_abs_trace: float
    budget: float
    rows: tuple[dict, ...]
    passed: bool


def commutator_trace_test(a: EquivariantKernel, b: EquivariantKernel,
                          segment: DeloneSegment, schedule: Schedule) -> CommutatorReport:
    """Windowed commutator traces against the measured boundary budget.

    Interior pairs cancel exactly, so the windowed trace of ab - ba is
    bounded by the number of points within the combined range of the
    boundary times the largest local interaction sum; in one dimension that
    bound is independent of T.
    """
    comm = a * b - b * a
    r_star = max(a.range_metric, b.range_metric)
    local = _interaction_bound(a, b)
    rows = []
    worst = 0.0
    budget = 0.0
    for pi, n, t in schedule.times():
        val = abs(float(comm.diagonal_trace(segment, t)))
        cap = boundary_collar_count(segment, t, r_star) * local
        rows.append({"phase": pi, "n": n, "T": t, "abs_trace": val, "budget": cap})
        worst = max(worst, val)
        budget = max(budget, cap)
    passed = all(r["abs_trace"] <= r["budget"] + 1e-9 for r in rows)
    return CommutatorReport(max_abs_trace=worst, budget=budget, rows=tuple(rows), passed=passed)


def _abs_kernel(k: EquivariantKernel) -> EquivariantKernel:
    table = {w: tuple(abs(v) for v in vals) for w, vals in k.table.items()}
    return EquivariantKernel(k.rule, k.radius, k.span, table, k.range_metric,
                             k.equiv_radius, name=f"abs({k.name})")


def _interaction_bound(a: EquivariantKernel, b: EquivariantKernel) -> float:
    """max_p sum_x |a(p,x) b(x,p)| + |b(p,x) a(x,p)|."""
    prod = _abs_kernel(a) * _abs_kernel(b) + _abs_kernel(b) * _abs_kernel(a)
    return max(float(vals[prod.span]) for vals in prod.table.values())
