"""Eigen-structure of the induced cohomology action.

For a one-dimensional substitution the induced action on the top
cohomology is represented by the transpose of the occurrence-count matrix.
This module computes its generalized eigen-structure (values, Jordan
chains, dual currents), the growth exponents s_i = log|nu_i| / log nu_1,
the log-power exponents, and the rapidly-expanding index set, which in one
dimension consists of every index with |nu_i| >= 1.

Exact path: integer eigenvalues are factored out of the characteristic
polynomial and their chains solved in rational arithmetic; everything else
falls back to double precision.  Eigenvectors of the rational path are
scaled to primitive integer vectors whose last nonzero entry is positive
(the sign choice under which the built-in three-letter example reproduces
its published eigenvector table); floating vectors use unit sup-norm with
the same sign rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import exactlin

__all__ = ["EigenIndex", "EigenStructure", "eigen_structure", "EigenError"]

JORDAN_RANK_RTOL = 1e-8


class EigenError(ValueError):
    pass


@dataclass(frozen=True)
class EigenIndex:
    """One index (i, j, k): eigenvalue i, Jordan height j, chain k."""

    i: int
    j: int
    k: int
    value: complex | float | Fraction
    modulus: float
    s: float  # log|nu_i| / log nu_1
    logpow: int  # exponent of log T in L(i, j, T)
    in_plus: bool
    strict: bool  # strict inequality in the expansion threshold
    pair: bool  # folded complex-conjugate pair (two real columns)
    vec: np.ndarray  # (m,) or (m, 2) float
    cur: np.ndarray  # dual row(s), same shape
    vec_exact: tuple | None = None
    cur_exact: tuple | None = None

    @property
    def label(self) -> tuple[int, int, int]:
        return (self.i, self.j, self.k)

    def growth_key(self) -> tuple[float, int]:
        """Indices sort by L(i,j,T) T^{s_i}; larger key = faster growth."""
        return (self.s, self.logpow)


@dataclass(frozen=True)
class EigenStructure:
    matrix: np.ndarray  # the occurrence-count matrix itself
    expansion: float
    expansion_exact: Fraction | None
    entries: tuple[EigenIndex, ...]
    basis: np.ndarray  # columns: generalized eigenvectors, entry order
    currents: np.ndarray  # rows: dual basis, entry order
    exact: bool  # every eigenvalue handled in rational arithmetic
    jordan_uncertain: bool = False

    @property
    def plus_entries(self) -> tuple[EigenIndex, ...]:
        return tuple(e for e in self.entries if e.in_plus)

    def entry(self, label: tuple[int, int, int]) -> EigenIndex:
        for e in self.entries:
            if e.label == tuple(label):
                return e
        raise KeyError(f"no eigen index {label}")

    def lower_set(self, label) -> tuple[EigenIndex, ...]:
        """Indices of I+ whose growth dominates-or-ties the target, target excluded."""
        target = self.entry(label)
        if not target.in_plus:
            raise EigenError(f"index {tuple(label)} outside the expanding set")
        out = []
        for e in self.plus_entries:
            if e.label == target.label:
                continue
            if e.growth_key() >= target.growth_key():
                out.append(e)
        return tuple(out)


def _sort_key(value: complex) -> tuple:
    # modulus descending, then real part ascending (puts -2 before 2, the
    # order used by the built-in example), then positive imaginary first
    return (-abs(value), value.real, -abs(value.imag), -value.imag)


def eigen_structure(matrix: np.ndarray, expansion=None) -> EigenStructure:
    """Generalized eigen-structure of the transposed occurrence matrix.

    ``expansion`` may pass a known dominant eigenvalue; otherwise it is
    recomputed.  Raises :class:`EigenError` when the dominant eigenvalue is
    not simple, real, positive and strictly dominant.
    """
    matrix = np.asarray(matrix)
    m = matrix.shape[0]
    coeffs = exactlin.char_poly(exactlin.frac_matrix(matrix.tolist()))
    int_roots = exactlin.integer_roots(coeffs)
    work = list(coeffs)
    for r in int_roots:
        work = exactlin.poly_deflate(work, Fraction(r))
    float_roots = np.roots([float(c) for c in work]) if len(work) > 1 else np.array([])

    float_items: list[complex] = [complex(z) for z in float_roots]
    int_mult = {r: int_roots.count(r) for r in set(int_roots)}

    transpose_f = matrix.T.astype(float)
    transpose_q = exactlin.transpose(exactlin.frac_matrix(matrix.tolist()))

    groups: list[dict] = []
    for r in sorted(int_mult):
        chains = exactlin.jordan_chains(transpose_q, Fraction(r))
        assert sum(len(c) for c in chains) == int_mult[r]
        groups.append({"value": complex(r), "exact": Fraction(r), "chains": chains})

    jordan_uncertain = False
    used = np.zeros(len(float_items), bool)
    for a, za in enumerate(float_items):
        if used[a]:
            continue
        used[a] = True
        if abs(za.imag) < 1e-9:
            groups.append({"value": complex(za.real), "exact": None, "chains": None})
        else:
            # find the conjugate partner
            partner = None
            for b in range(a + 1, len(float_items)):
                if not used[b] and abs(float_items[b] - za.conjugate()) < 1e-8 * max(1, abs(za)):
                    partner = b
                    break
            if partner is None:
                jordan_uncertain = True
                groups.append({"value": za, "exact": None, "chains": None})
            else:
                used[partner] = True
                rep = za if za.imag > 0 else za.conjugate()
                groups.append({"value": rep, "exact": None, "chains": None, "pair": True})

    groups.sort(key=lambda g: _sort_key(g["value"]))

    nu1_group = groups[0]
    nu1c = nu1_group["value"]
    if abs(nu1c.imag) > 0 or nu1c.real <= 0:
        raise EigenError("dominant eigenvalue must be real and positive")
    if len(groups) > 1 and abs(groups[1]["value"]) >= abs(nu1c) - 1e-12 * abs(nu1c):
        raise EigenError("dominant eigenvalue is not strictly dominant")
    if nu1_group["chains"] is not None and (
        len(nu1_group["chains"]) != 1 or len(nu1_group["chains"][0]) != 1
    ):
        raise EigenError("dominant eigenvalue is not simple")
    nu1 = nu1c.real
    log_nu1 = np.log(nu1)

    # assemble entries and basis columns
    entries_raw = []
    columns: list[np.ndarray] = []
    columns_exact: list[tuple | None] = []
    all_exact = True
    for i, g in enumerate(groups, start=1):
        val = g["value"]
        mod = abs(val)
        s = float(np.log(mod) / log_nu1) if mod > 0 else float("-inf")
        in_plus = mod >= 1 - 1e-12
        strict = mod > 1 + 1e-12
        if g["exact"] is not None:
            in_plus, strict = abs(g["exact"]) >= 1, abs(g["exact"]) > 1
        if g["chains"] is not None:
            for k, chain in enumerate(g["chains"], start=1):
                scale = _chain_scale(chain[0])
                for j, raw in enumerate(chain, start=1):
                    vec_q = tuple(x * scale for x in raw)
                    vec_f = np.array([float(x) for x in vec_q])
                    logpow = (j - 1) if strict else j
                    entries_raw.append(
                        dict(i=i, j=j, k=k, value=g["exact"], modulus=mod,
                             s=s, logpow=logpow, in_plus=in_plus, strict=strict, pair=False,
                             vec=vec_f, vec_exact=vec_q)
                    )
                    columns.append(vec_f)
                    columns_exact.append(vec_q)
        else:
            all_exact = False
            if g.get("pair"):
                w = _float_eigvec_complex(transpose_f, val)
                u, v = w.real.copy(), w.imag.copy()
                block = np.stack([u, v], axis=1)
                entries_raw.append(
                    dict(i=i, j=1, k=1, value=val, modulus=mod, s=s, logpow=0 if strict else 1,
                         in_plus=in_plus, strict=strict, pair=True, vec=block, vec_exact=None)
                )
                columns.append(u)
                columns.append(v)
                columns_exact.extend([None, None])
            else:
                vec = _float_eigvec_real(transpose_f, val.real)
                entries_raw.append(
                    dict(i=i, j=1, k=1, value=float(val.real), modulus=mod, s=s,
                         logpow=0 if strict else 1, in_plus=in_plus, strict=strict, pair=False,
                         vec=vec, vec_exact=None)
                )
                columns.append(vec)
                columns_exact.append(None)

    basis = np.stack(columns, axis=1)
    if all_exact:
        v_exact = [[col[r] for col in columns_exact] for r in range(m)]
        g_exact = exactlin.inverse(v_exact)
        currents = np.array([[float(x) for x in row] for row in g_exact])
    else:
        g_exact = None
        currents = np.linalg.inv(basis)

    # attach current rows to entries
    entries: list[EigenIndex] = []
    col = 0
    for raw in entries_raw:
        width = 2 if raw["pair"] else 1
        cur_f = currents[col : col + width]
        cur_f = cur_f[0] if width == 1 else cur_f.T
        vec = raw.pop("vec")
        vec_exact = raw.pop("vec_exact")
        cur_exact = tuple(g_exact[col]) if g_exact is not None else None
        entries.append(
            EigenIndex(**raw, vec=vec, cur=cur_f, vec_exact=vec_exact, cur_exact=cur_exact)
        )
        col += width

    # residual check on every reported pair
    _check_residuals(matrix.T.astype(float), entries)

    return EigenStructure(
        matrix=np.asarray(matrix),
        expansion=nu1,
        expansion_exact=nu1_group["exact"],
        entries=tuple(entries),
        basis=basis,
        currents=currents,
        exact=all_exact,
        jordan_uncertain=jordan_uncertain,
    )


def _chain_scale(eigvec) -> Fraction:
    prim = exactlin.primitive_integer(eigvec)
    nz = next(idx for idx, x in enumerate(eigvec) if x != 0)
    return Fraction(prim[nz]) / Fraction(eigvec[nz])


def _float_eigvec_real(a: np.ndarray, value: float) -> np.ndarray:
    vals, vecs = np.linalg.eig(a)
    k = int(np.argmin(np.abs(vals - value)))
    v = vecs[:, k].real
    v = v / np.max(np.abs(v))
    last = next((x for x in v[::-1] if abs(x) > 1e-12), 1.0)
    if last < 0:
        v = -v
    return v


def _float_eigvec_complex(a: np.ndarray, value: complex) -> np.ndarray:
    vals, vecs = np.linalg.eig(a)
    k = int(np.argmin(np.abs(vals - value)))
    v = vecs[:, k]
    v = v / np.max(np.abs(v))
    return v


def _check_residuals(at: np.ndarray, entries: list[EigenIndex]) -> None:
    by_label = {e.label: e for e in entries}
    for e in entries:
        if e.pair:
            continue
        v = e.vec
        resid = at @ v - float(e.value.real if isinstance(e.value, complex) else e.value) * v
        if e.j > 1:
            resid = resid - by_label[(e.i, e.j - 1, e.k)].vec
        tol = 1e-9 * max(1.0, float(np.max(np.abs(v)))) * max(1.0, float(np.max(np.abs(at))))
        if np.max(np.abs(resid)) > tol:
            raise EigenError(f"eigen residual too large for index {e.label}")
