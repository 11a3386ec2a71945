"""Exact linear algebra over the rationals.

Small dense routines on lists of :class:`fractions.Fraction`, used wherever
the substitution data is integral and the answers are expected to be exact
rationals (characteristic polynomials, eigenvectors for integer eigenvalues,
dual bases, constrained solves for collared currents).  Matrices are plain
``list[list[Fraction]]``; everything here is O(n^3) and meant for the small
matrices that show up in substitution analysis.
"""

from __future__ import annotations

from fractions import Fraction
from math import gcd

Vec = "list[Fraction]"
Mat = "list[list[Fraction]]"


def frac_matrix(rows) -> list[list[Fraction]]:
    return [[Fraction(x) for x in row] for row in rows]


def identity(n: int) -> list[list[Fraction]]:
    return [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]


def mat_mul(a, b):
    n, k, m = len(a), len(b), len(b[0])
    return [[sum((a[i][t] * b[t][j] for t in range(k)), Fraction(0)) for j in range(m)] for i in range(n)]


def mat_vec(a, v):
    return [sum((a[i][j] * v[j] for j in range(len(v))), Fraction(0)) for i in range(len(a))]


def mat_sub(a, b):
    return [[x - y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def mat_scale(a, c):
    c = Fraction(c)
    return [[c * x for x in row] for row in a]


def transpose(a):
    return [list(col) for col in zip(*a)]


def rref(rows: list[list[Fraction]]) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row echelon form; returns (rref rows, pivot column indices)."""
    rows = [list(r) for r in rows]
    ncols = len(rows[0]) if rows else 0
    pivots: list[int] = []
    r = 0
    for col in range(ncols):
        sel = next((i for i in range(r, len(rows)) if rows[i][col] != 0), None)
        if sel is None:
            continue
        rows[r], rows[sel] = rows[sel], rows[r]
        pv = rows[r][col]
        rows[r] = [x / pv for x in rows[r]]
        for i in range(len(rows)):
            if i != r and rows[i][col] != 0:
                f = rows[i][col]
                rows[i] = [x - f * y for x, y in zip(rows[i], rows[r])]
        pivots.append(col)
        r += 1
        if r == len(rows):
            break
    return rows, pivots


def solve_affine(a, b) -> tuple[list[Fraction] | None, list[list[Fraction]]]:
    """One solution of ``a x = b`` plus a nullspace basis, or (None, []) if inconsistent."""
    n = len(a[0])
    aug = [list(row) + [bi] for row, bi in zip(a, b)]
    red, pivots = rref(aug)
    if n in pivots:
        return None, []
    x = [Fraction(0)] * n
    for i, col in enumerate(pivots):
        x[col] = red[i][n]
    free = [c for c in range(n) if c not in pivots]
    null = []
    for fc in free:
        v = [Fraction(0)] * n
        v[fc] = Fraction(1)
        for i, col in enumerate(pivots):
            v[col] = -red[i][fc]
        null.append(v)
    return x, null


def nullspace(a) -> list[list[Fraction]]:
    _, null = solve_affine(a, [Fraction(0)] * len(a))
    return null


def inverse(a) -> list[list[Fraction]]:
    n = len(a)
    aug = [list(row) + ident_row for row, ident_row in zip(a, identity(n))]
    red, pivots = rref(aug)
    if pivots != list(range(n)):
        raise ValueError("matrix is singular")
    return [row[n:] for row in red]


def char_poly(a) -> list[Fraction]:
    """Coefficients of det(xI - a), highest power first (monic)."""
    # Faddeev-LeVerrier: exact over Q.
    n = len(a)
    coeffs = [Fraction(1)]
    m = identity(n)
    for k in range(1, n + 1):
        m = mat_mul(a, m)
        c = -sum((m[i][i] for i in range(n)), Fraction(0)) / k
        coeffs.append(c)
        for i in range(n):
            m[i][i] += c
    return coeffs


def poly_eval(coeffs, x):
    acc = Fraction(0) if isinstance(x, (int, Fraction)) else 0.0
    for c in coeffs:
        acc = acc * x + c
    return acc


def poly_deflate(coeffs, root):
    """Divide a monic polynomial by (x - root); root must be exact."""
    out = [coeffs[0]]
    for c in coeffs[1:-1]:
        out.append(c + out[-1] * root)
    rem = coeffs[-1] + out[-1] * root
    if rem != 0:
        raise ValueError("not a root")
    return out


def integer_roots(coeffs) -> list[int]:
    """Integer roots (with multiplicity) of a monic integer polynomial.

    By the rational root theorem these are the only possible rational roots,
    and they divide the constant term.
    """
    roots = []
    work = list(coeffs)
    while len(work) > 1:
        const = work[-1]
        if const == 0:
            roots.append(0)
            work = work[:-1]
            continue
        cnum = abs(int(const))
        cand = sorted({d for d in range(1, cnum + 1) if cnum % d == 0})
        found = None
        for d in cand:
            for r in (d, -d):
                if poly_eval(work, Fraction(r)) == 0:
                    found = r
                    break
            if found is not None:
                break
        if found is None:
            break
        roots.append(found)
        work = poly_deflate(work, Fraction(found))
    return roots


def primitive_integer(vec) -> list[int]:
    """Scale a rational vector to a primitive integer vector, last nonzero entry > 0.

    The sign choice matches the eigenvector tables used for the built-in
    three-letter example, whose vectors all end in a positive entry.
    """
    fracs = [Fraction(x) for x in vec]
    den = 1
    for f in fracs:
        den = den * f.denominator // gcd(den, f.denominator)
    ints = [int(f * den) for f in fracs]
    g = 0
    for v in ints:
        g = gcd(g, abs(v))
    if g:
        ints = [v // g for v in ints]
    last = next((v for v in reversed(ints) if v != 0), 0)
    if last < 0:
        ints = [-v for v in ints]
    return ints


def jordan_chains(a, eigenvalue) -> list[list[list[Fraction]]]:
    """Jordan chains of ``a`` for an exact eigenvalue.

    Returns one list per chain, ordered from the eigenvector (height 1)
    upward, so chain[j] satisfies (a - w) chain[j] = chain[j-1].
    """
    n = len(a)
    w = Fraction(eigenvalue)
    b = mat_sub(a, mat_scale(identity(n), w))
    powers = [identity(n)]
    kernels = [[]]
    while True:
        powers.append(mat_mul(b, powers[-1]))
        ker = nullspace(powers[-1])
        kernels.append(ker)
        if len(ker) == (len(kernels[-2]) if len(kernels) > 1 else 0):
            kernels.pop()
            powers.pop()
            break
        if len(powers) > n + 1:
            break
    height = len(kernels) - 1
    if height == 0:
        return []

    def _rank(vecs):
        if not vecs:
            return 0
        _, piv = rref([list(v) for v in vecs])
        return len(piv)

    chains = []
    used: list[list[Fraction]] = []
    for k in range(height, 0, -1):
        for cand in kernels[k]:
            pool = kernels[k - 1] + used
            if _rank(pool + [cand]) == _rank(pool):
                continue
            chain_top_down = [cand]
            for _ in range(k - 1):
                chain_top_down.append(mat_vec(b, chain_top_down[-1]))
            chain = chain_top_down[::-1]
            chains.append(chain)
            for v in chain:
                used.append(v)
    total = sum(len(c) for c in chains)
    assert total == len(kernels[height]), "jordan chain extraction incomplete"
    return chains
