"""Finite-range equivariant kernels and their *-algebra.

A kernel is stored as a value table over collared letters: the value of
``k(p, q)`` depends only on the radius-r letter window around p and the
index offset of q (in one dimension the points are linearly ordered, so a
finite metric range translates into a finite index span).  Products,
adjoints and polynomials are computed symbolically on these tables by
reading sub-windows out of a wider context, which keeps the algebra exact
over the rationals whenever the inputs are rational.

Restrictions to a window of a materialized segment are banded matrices
(index-offset diagonals); boundary rows simply drop couplings to points
outside the window, which is the open restriction to l2 of the window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Number

import numpy as np
import scipy.linalg

from .collar import CollaredRule, CollarError, collar
from .delone import DeloneSegment, WindowError
from .eigen import EigenStructure
from .rules import SubstitutionRule, perron_data

__all__ = [
    "EquivariantKernel",
    "RestrictedMatrix",
    "ClassVector",
    "identity_kernel",
    "zero_kernel",
    "laplacian",
    "tile_projection",
    "hamiltonian",
    "balanced_hamiltonian",
    "custom_kernel",
    "random_kernel",
    "poly_of_kernel",
    "diagonal_class",
]

_collar_cache: dict[tuple, CollaredRule] = {}


def collar_for(rule: SubstitutionRule, radius: int) -> CollaredRule:
    key = (id(rule), radius)
    if key not in _collar_cache:
        _collar_cache[key] = collar(rule, radius)
    return _collar_cache[key]


def _eps(rule: SubstitutionRule) -> float:
    return 0.5 * min(float(x) for x in rule.lengths)


@dataclass(frozen=True)
class EquivariantKernel:
    """A finite-range kernel determined by local patterns.

    ``table[window]`` is a tuple of 2*span+1 values; entry span+d is the
    value of k(p, p+d) when the radius-r window at p is ``window``.
    ``range_metric`` and ``equiv_radius`` carry the conservative metric
    bookkeeping (R and R' of the kernel definition).
    """

    rule: SubstitutionRule
    radius: int
    span: int
    table: dict[str, tuple]
    range_metric: float
    equiv_radius: float
    name: str = "kernel"
    _caches: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        width = 2 * self.span + 1
        for win, vals in self.table.items():
            if len(vals) != width:
                raise ValueError(f"window {win!r}: expected {width} values")

    # ------------------------------------------------------------------ data
    @property
    def collared(self) -> CollaredRule:
        return collar_for(self.rule, self.radius)

    @property
    def exact(self) -> bool:
        return all(
            isinstance(v, (int, Fraction)) for vals in self.table.values() for v in vals
        )

    def value(self, window: str, delta: int):
        if abs(delta) > self.span:
            return Fraction(0) if self.exact else 0.0
        return self.table[window][self.span + delta]

    def sup_norm_bound(self) -> float:
        """Row-sum bound: max over patterns of sum |k(p, q)|."""
        return max(sum(abs(float(v)) for v in vals) for vals in self.table.values())

    def max_abs_entry(self) -> float:
        return max(abs(float(v)) for vals in self.table.values() for v in vals)

    def is_selfadjoint(self, tol: float = 0.0) -> bool:
        diff = self - self.adjoint()
        bound = max(abs(complex(v)) for vals in diff.table.values() for v in vals)
        return bound <= tol

    # -------------------------------------------------------------- algebra
    def with_radius(self, radius: int) -> "EquivariantKernel":
        """Re-key the table on a wider context; values are unchanged."""
        if radius < self.radius:
            raise ValueError("cannot shrink the context radius")
        if radius == self.radius:
            return self
        wide = collar_for(self.rule, radius)
        shift = radius - self.radius
        table = {}
        for win in wide.windows:
            sub = win[shift : len(win) - shift]
            table[win] = self.table[sub]
        return EquivariantKernel(
            rule=self.rule,
            radius=radius,
            span=self.span,
            table=table,
            range_metric=self.range_metric,
            equiv_radius=self.equiv_radius,
            name=self.name,
        )

    def _sub_window(self, win: str, offset: int, radius: int) -> str:
        c = (len(win) - 1) // 2 + offset
        return win[c - radius : c + radius + 1]

    def __add__(self, other):
        if not isinstance(other, EquivariantKernel):
            return NotImplemented
        r = max(self.radius, other.radius)
        d = max(self.span, other.span)
        a, b = self.with_radius(r), other.with_radius(r)
        zero = Fraction(0) if (self.exact and other.exact) else 0.0
        table = {}
        for win in collar_for(self.rule, r).windows:
            va = _padded(a.table[win], a.span, d, zero)
            vb = _padded(b.table[win], b.span, d, zero)
            table[win] = tuple(x + y for x, y in zip(va, vb))
        return EquivariantKernel(
            rule=self.rule, radius=r, span=d, table=table,
            range_metric=max(self.range_metric, other.range_metric),
            equiv_radius=max(self.equiv_radius, other.equiv_radius),
            name=f"({self.name}+{other.name})",
        )

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, EquivariantKernel):
            return _convolve(self, other)
        if isinstance(other, Number):
            c = other if isinstance(other, (int, Fraction)) and self.exact else _as_number(other)
            table = {w: tuple(c * v for v in vals) for w, vals in self.table.items()}
            return EquivariantKernel(
                rule=self.rule, radius=self.radius, span=self.span, table=table,
                range_metric=self.range_metric, equiv_radius=self.equiv_radius,
                name=f"({other}*{self.name})",
            )
        return NotImplemented

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise ValueError("kernel powers must be nonnegative integers")
        out = identity_kernel(self.rule)
        for _ in range(n):
            out = out * self
        return out

    def adjoint(self) -> "EquivariantKernel":
        r = self.radius + self.span
        wide = collar_for(self.rule, r)
        zero = Fraction(0) if self.exact else 0.0
        table = {}
        for win in wide.windows:
            vals = []
            for delta in range(-self.span, self.span + 1):
                sub = self._sub_window_static(win, r, delta, self.radius)
                v = self.table[sub][self.span - delta]
                vals.append(_conj(v) if v else zero)
            table[win] = tuple(vals)
        return EquivariantKernel(
            rule=self.rule, radius=r, span=self.span, table=table,
            range_metric=self.range_metric,
            equiv_radius=self.equiv_radius + self.range_metric,
            name=f"adj({self.name})",
        )

    @staticmethod
    def _sub_window_static(win: str, center_radius: int, offset: int, radius: int) -> str:
        c = center_radius + offset
        return win[c - radius : c + radius + 1]

    # ------------------------------------------------------- segment facing
    def _value_matrix(self) -> np.ndarray:
        key = "value_matrix"
        if key not in self._caches:
            coll = self.collared
            mat = np.zeros((coll.size, 2 * self.span + 1), dtype=complex if self._has_complex() else float)
            for w, vals in self.table.items():
                mat[coll.window_index(w)] = [_as_number(v) for v in vals]
            self._caches[key] = mat.real if not self._has_complex() else mat
        return self._caches[key]

    def _has_complex(self) -> bool:
        return any(isinstance(v, complex) for vals in self.table.values() for v in vals)

    def _window_ids(self, segment: DeloneSegment, i0: int, i1: int) -> np.ndarray:
        ids = segment.collared_ids(self.collared)
        lo, hi = i0 - self.radius, i1 - self.radius
        if lo < 0 or hi > len(ids):
            raise WindowError("segment margin too small for the kernel context")
        return ids[lo:hi]

    def diagonal_values(self, segment: DeloneSegment, i0: int, i1: int) -> np.ndarray:
        ids = self._window_ids(segment, i0, i1)
        return self._value_matrix()[ids, self.span]

    def diagonal_trace(self, segment: DeloneSegment, t):
        """tr of the diagonal over the closed window [-t, t]; exact when possible."""
        counts = segment.collared_counts(self.collared, t)
        if self.exact and segment.exact:
            coll = self.collared
            total = Fraction(0)
            for w, vals in self.table.items():
                c = int(counts[coll.window_index(w)])
                if c:
                    total += Fraction(vals[self.span]) * c
            return total
        diag = self._value_matrix()[:, self.span]
        return float(counts @ diag)

    def restrict(self, segment: DeloneSegment, t) -> "RestrictedMatrix":
        """Restriction to l2 of the points in [-t, t] as a banded matrix."""
        margin = self.range_metric + self.equiv_radius
        if float(t) + margin > segment.extent:
            raise WindowError(
                f"segment extent {segment.extent} too small for window {float(t)} "
                f"plus kernel margin {margin}"
            )
        i0, i1 = segment.window_slice(t)
        ids = self._window_ids(segment, i0, i1)
        vm = self._value_matrix()
        n = i1 - i0
        bands = {}
        for d in range(-self.span, self.span + 1):
            col = vm[ids, self.span + d]
            band = np.zeros(n, dtype=col.dtype)
            lo, hi = max(0, -d), n - max(0, d)
            if lo < hi:
                band[lo:hi] = col[lo:hi]
            bands[d] = band
        return RestrictedMatrix(
            kernel=self, segment=segment, window=float(t), i0=i0, i1=i1, bands=bands
        )


def _padded(vals: tuple, span: int, new_span: int, zero) -> tuple:
    pad = (zero,) * (new_span - span)
    return pad + tuple(vals) + pad


def _conj(v):
    return v.conjugate() if isinstance(v, complex) else v


def _as_number(v):
    return complex(v) if isinstance(v, complex) else float(v)


def _convolve(a: EquivariantKernel, b: EquivariantKernel) -> EquivariantKernel:
    """(a b)(p, q) = sum_x a(p, x) b(x, q), evaluated per collared letter."""
    if a.rule is not b.rule and a.rule != b.rule:
        raise ValueError("kernels over different rules")
    span = a.span + b.span
    r = max(a.radius, a.span + b.radius)
    wide = collar_for(a.rule, r)
    exact = a.exact and b.exact
    zero = Fraction(0) if exact else 0.0
    table = {}
    for win in wide.windows:
        sub_a = EquivariantKernel._sub_window_static(win, r, 0, a.radius)
        row_a = a.table[sub_a]
        out = [zero] * (2 * span + 1)
        for d1 in range(-a.span, a.span + 1):
            va = row_a[a.span + d1]
            if not va:
                continue
            sub_b = EquivariantKernel._sub_window_static(win, r, d1, b.radius)
            row_b = b.table[sub_b]
            for d2 in range(-b.span, b.span + 1):
                vb = row_b[b.span + d2]
                if vb:
                    out[span + d1 + d2] += va * vb
        table[win] = tuple(out)
    return EquivariantKernel(
        rule=a.rule, radius=r, span=span, table=table,
        range_metric=a.range_metric + b.range_metric,
        equiv_radius=a.equiv_radius + a.range_metric + b.equiv_radius,
        name=f"({a.name}*{b.name})",
    )


# --------------------------------------------------------------- constructors
def identity_kernel(rule: SubstitutionRule) -> EquivariantKernel:
    table = {a: (Fraction(1),) for a in rule.alphabet}
    return EquivariantKernel(rule, 0, 0, table, 0.0, 0.0, name="identity")


def zero_kernel(rule: SubstitutionRule) -> EquivariantKernel:
    table = {a: (Fraction(0),) for a in rule.alphabet}
    return EquivariantKernel(rule, 0, 0, table, 0.0, 0.0, name="zero")


def laplacian(rule: SubstitutionRule) -> EquivariantKernel:
    """Nearest-neighbor Laplacian: diagonal 1, -1/2 to both index neighbors."""
    half = Fraction(-1, 2)
    table = {a: (half, Fraction(1), half) for a in rule.alphabet}
    maxlen = max(float(x) for x in rule.lengths)
    return EquivariantKernel(
        rule, 0, 1, table, range_metric=maxlen + _eps(rule), equiv_radius=maxlen,
        name="laplacian",
    )


def tile_projection(rule: SubstitutionRule, letter: str) -> EquivariantKernel:
    rule.index(letter)
    table = {a: (Fraction(1 if a == letter else 0),) for a in rule.alphabet}
    return EquivariantKernel(rule, 0, 0, table, 0.0, 0.0, name=f"proj({letter})")


def hamiltonian(rule: SubstitutionRule, *coefficients) -> EquivariantKernel:
    """Laplacian plus a per-letter potential, coefficients in alphabet order."""
    if len(coefficients) != rule.size:
        raise ValueError(f"expected {rule.size} potential coefficients")
    out = laplacian(rule)
    for c, letter in zip(coefficients, rule.alphabet):
        if c:
            coeff = c if isinstance(c, (int, Fraction)) else float(c)
            out = out + coeff * tile_projection(rule, letter)
    return EquivariantKernel(
        rule, out.radius, out.span, out.table, out.range_metric, out.equiv_radius,
        name="hamiltonian(" + ",".join(str(c) for c in coefficients) + ")",
    )


def balanced_hamiltonian(rule: SubstitutionRule) -> EquivariantKernel:
    """Laplacian minus the density-weighted tile-length potential.

    The potential at a point of type L is -density * length(L), which makes
    the trace per unit volume vanish: the diagonal class equals the
    all-ones class minus density times the length vector, whose leading
    projection cancels exactly.
    """
    pd = perron_data(rule)
    coeffs = [-(pd.density * th) for th in pd.lengths]
    out = hamiltonian(rule, *coeffs)
    return EquivariantKernel(
        rule, out.radius, out.span, out.table, out.range_metric, out.equiv_radius,
        name="h0",
    )


def custom_kernel(rule: SubstitutionRule, radius: int, span: int, table: dict,
                  name: str = "custom", enforce_range: float | None = None) -> EquivariantKernel:
    """Kernel from an explicit pattern table.

    ``table`` maps radius-r windows to 2*span+1 values; missing legal
    windows raise.  ``enforce_range`` zeroes values whose metric offset
    reaches the given range (requires radius >= span so the offsets are
    determined by the window).
    """
    coll = collar_for(rule, radius)
    missing = [w for w in coll.windows if w not in table]
    if missing:
        raise CollarError(f"custom table missing windows: {missing[:5]}")
    tbl = {w: tuple(table[w]) for w in coll.windows}
    if enforce_range is not None:
        if radius < span:
            raise ValueError("enforce_range requires radius >= span")
        tbl = {
            w: tuple(
                v if abs(_metric_offset(rule, w, d)) < enforce_range else Fraction(0)
                for d, v in zip(range(-span, span + 1), vals)
            )
            for w, vals in tbl.items()
        }
    rng = enforce_range if enforce_range is not None else span * max(float(x) for x in rule.lengths) + _eps(rule)
    return EquivariantKernel(
        rule, radius, span, tbl,
        range_metric=float(rng),
        equiv_radius=radius * max(float(x) for x in rule.lengths) + _eps(rule),
        name=name,
    )


def _metric_offset(rule: SubstitutionRule, window: str, d: int) -> float:
    r = (len(window) - 1) // 2
    if d >= 0:
        return float(sum(float(rule.length_of(c)) for c in window[r : r + d]))
    return -float(sum(float(rule.length_of(c)) for c in window[r + d : r]))


def random_kernel(rule: SubstitutionRule, rng: np.random.Generator, max_range: float = 3.0,
                  radius: int | None = None, exact: bool = True) -> EquivariantKernel:
    """Random rational equivariant kernel of bounded metric range (tests)."""
    span = max(1, int(max_range / min(float(x) for x in rule.lengths)))
    r = radius if radius is not None else span
    coll = collar_for(rule, max(r, span))
    table = {}
    for w in coll.windows:
        vals = []
        for d in range(-span, span + 1):
            num = int(rng.integers(-4, 5))
            den = int(rng.integers(1, 5))
            vals.append(Fraction(num, den) if exact else num / den)
        table[w] = tuple(vals)
    return custom_kernel(rule, max(r, span), span, table, name="random", enforce_range=max_range)


# ----------------------------------------------------------------- restriction
@dataclass
class RestrictedMatrix:
    """Banded restriction of a kernel to the points of a closed window."""

    kernel: EquivariantKernel
    segment: DeloneSegment
    window: float
    i0: int
    i1: int
    bands: dict[int, np.ndarray]

    @property
    def n(self) -> int:
        return self.i1 - self.i0

    @property
    def hermitian(self) -> bool:
        for d, band in self.bands.items():
            other = self.bands.get(-d)
            if other is None:
                return False
            lo, hi = max(0, -d), self.n - max(0, d)
            if not np.allclose(band[lo:hi], np.conj(other[lo + d : hi + d]) if d else np.conj(other[lo:hi]), atol=1e-12):
                return False
        return True

    def entry(self, i: int, j: int):
        d = j - i
        if abs(d) > self.kernel.span or not (0 <= i < self.n) or not (0 <= j < self.n):
            return 0.0
        return self.bands[d][i]

    def trace(self):
        """Diagonal sum; exact rationals when kernel and segment are exact."""
        if self.kernel.exact and self.segment.exact:
            return self.kernel.diagonal_trace(self.segment, _window_frac(self.segment, self.window))
        return float(np.sum(self.bands[0]))

    def to_dense(self) -> np.ndarray:
        n = self.n
        out = np.zeros((n, n), dtype=self.bands[0].dtype)
        for d, band in self.bands.items():
            lo, hi = max(0, -d), n - max(0, d)
            if lo < hi:
                idx = np.arange(lo, hi)
                out[idx, idx + d] = band[lo:hi]
        return out

    def multiply(self, other: "RestrictedMatrix | dict") -> dict[int, np.ndarray]:
        return _band_multiply(self.bands, other.bands if isinstance(other, RestrictedMatrix) else other, self.n)

    def power_bands(self, m: int) -> dict[int, np.ndarray]:
        out = {0: np.ones(self.n, dtype=self.bands[0].dtype)}
        for _ in range(m):
            out = _band_multiply(out, self.bands, self.n)
        return out

    def power_trace(self, m: int) -> float:
        return float(np.sum(self.power_bands(m)[0]).real)

    def eigenvalues(self) -> np.ndarray:
        if not self.hermitian:
            raise ValueError("eigenvalue path requires a self-adjoint restriction")
        if self.n > 20000:
            raise ValueError("restricted matrix too large for a dense eigensolve")
        span = self.kernel.span
        if span <= 32 and self.n > 64:
            ab = np.zeros((span + 1, self.n))
            for d in range(0, span + 1):
                band = self.bands[d].real
                ab[d, : self.n - d] = band[: self.n - d]
            return scipy.linalg.eig_banded(ab, lower=True, eigvals_only=True)
        return scipy.linalg.eigh(self.to_dense().real, eigvals_only=True)


def _window_frac(segment: DeloneSegment, t: float):
    if segment.exact and float(t) == int(t):
        return int(t)
    return t


def _band_multiply(a: dict[int, np.ndarray], b: dict[int, np.ndarray], n: int) -> dict[int, np.ndarray]:
    out: dict[int, np.ndarray] = {}
    for d, band_a in a.items():
        for f, band_b in b.items():
            e = d + f
            # valid rows i: 0 <= i < n, 0 <= i + d < n, 0 <= i + e < n
            lo = max(0, -d, -e)
            hi = min(n, n - d, n - e)
            if lo >= hi:
                continue
            contrib = band_a[lo:hi] * band_b[lo + d : hi + d]
            acc = out.setdefault(e, np.zeros(n, dtype=np.result_type(band_a, band_b)))
            acc[lo:hi] += contrib
    return out


def kernels_equal(a: EquivariantKernel, b: EquivariantKernel, tol: float = 0.0) -> bool:
    """Algebraic equality: same values on every legal pattern and offset."""
    r = max(a.radius, b.radius)
    d = max(a.span, b.span)
    wa, wb = a.with_radius(r), b.with_radius(r)
    zero = Fraction(0)
    for win in collar_for(a.rule, r).windows:
        va = _padded(wa.table[win], wa.span, d, zero)
        vb = _padded(wb.table[win], wb.span, d, zero)
        for x, y in zip(va, vb):
            if tol == 0.0:
                if x != y:
                    return False
            elif abs(complex(x) - complex(y)) > tol:
                return False
    return True


# ----------------------------------------------------------------- polynomials
def poly_of_kernel(kernel: EquivariantKernel, coefficients) -> EquivariantKernel:
    """Polynomial in the kernel algebra; coefficients ascending in degree."""
    out = zero_kernel(kernel.rule)
    power = identity_kernel(kernel.rule)
    for k, c in enumerate(coefficients):
        if c:
            out = out + c * power
        if k < len(coefficients) - 1:
            power = power * kernel
    return out


def poly_trace_restricted(matrix: RestrictedMatrix, coefficients, method: str = "auto") -> float:
    """tr(phi(A|_B)) by symmetric eigendecomposition or banded power traces."""
    coeffs = [float(c) for c in coefficients]
    if method == "auto":
        method = "eig" if matrix.n <= 3000 else "power"
    if method == "eig":
        vals = matrix.eigenvalues()
        powers = np.ones_like(vals)
        total = 0.0
        for c in coeffs:
            total += c * float(np.sum(powers))
            powers = powers * vals
        return total
    total = coeffs[0] * matrix.n if coeffs else 0.0
    bands = {0: np.ones(matrix.n)}
    for c in coeffs[1:]:
        bands = _band_multiply(bands, matrix.bands, matrix.n)
        if c:
            total += c * float(np.sum(bands[0]).real)
    return total


# -------------------------------------------------------------------- classes
@dataclass(frozen=True)
class ClassVector:
    """Diagonal class of a kernel over a collared alphabet, with its
    projections onto the expanding eigen-indices of the base structure."""

    collar_radius: int
    windows: tuple[str, ...]
    coefficients: tuple
    projections: dict[tuple, object]
    residual_norm: float  # class minus its expanding base projections
    exact: bool

    def projection(self, label) -> object:
        return self.projections[tuple(label)]


def diagonal_class(kernel: EquivariantKernel, structure: EigenStructure) -> ClassVector:
    """Pattern-indexed diagonal values with eigen-projections.

    The collar radius is the kernel's own context radius; the projections
    pair the diagonal against collared currents, right eigenvectors of the
    collared matrix that push forward to the base currents letterwise.
    """
    coll = kernel.collared
    diag = tuple(kernel.table[w][kernel.span] for w in coll.windows)
    currents = coll.lift_structure_currents(structure)
    exact = kernel.exact and all(
        isinstance(g[0], Fraction) for g in currents.values()
    ) if currents else kernel.exact
    projections = {}
    for label, g in currents.items():
        if exact:
            projections[label] = sum(
                (Fraction(gi) * Fraction(ci) for gi, ci in zip(g, diag)), Fraction(0)
            )
        else:
            projections[label] = float(
                np.dot([float(x) for x in g], [float(x) for x in diag])
            )
    # residual after removing the expanding base components
    resid = np.array([float(x) for x in diag])
    for e in structure.plus_entries:
        if e.pair:
            continue
        lifted = np.array([float(e.vec[coll.projection[j]]) for j in range(coll.size)])
        resid = resid - float(projections[e.label]) * lifted
    return ClassVector(
        collar_radius=kernel.radius,
        windows=coll.windows,
        coefficients=diag,
        projections=projections,
        residual_norm=float(np.max(np.abs(resid))) if len(resid) else 0.0,
        exact=exact,
    )
