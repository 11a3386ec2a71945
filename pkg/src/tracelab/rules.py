"""One-dimensional substitution rules.

A substitution assigns to each letter of a finite alphabet a nonempty word
over the same alphabet, together with a positive tile length per letter.
The lengths must form a left eigenvector of the occurrence-count matrix for
its dominant eigenvalue, so that the geometric model is exactly self-similar
under the expansion.  This module owns parsing, the occurrence-count
(abelianization) matrix, primitivity/properness/aperiodicity checks, word
generation, and Perron data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import exactlin

__all__ = [
    "RuleError",
    "SubstitutionRule",
    "TwoSidedWord",
    "PerronData",
    "parse_rule",
    "abelianize",
    "check_primitive",
    "check_proper",
    "perron_data",
    "substitute_word",
    "generate_fixed_word",
]


class RuleError(ValueError):
    """Invalid rule file or rule data."""


class SeedError(ValueError):
    """Seed pair not admissible for word generation."""


class TwoSidedWord(NamedTuple):
    """A two-sided word ``left . right`` with the marker at the origin."""

    left: str
    right: str

    def __str__(self) -> str:
        return f"{self.left}.{self.right}"


@dataclass(frozen=True)
class SubstitutionRule:
    """Alphabet, letter images, and tile lengths of a substitution.

    ``lengths`` holds one positive length per letter, in alphabet order.
    Entries are :class:`~fractions.Fraction` when the rule is exactly
    rational and ``float`` otherwise (e.g. defaulted lengths of a rule
    with irrational expansion).
    """

    alphabet: tuple[str, ...]
    images: dict[str, str]
    lengths: tuple[Fraction | float, ...] | None = None
    lengths_given: bool = True

    def __post_init__(self):
        letters = set(self.alphabet)
        if len(letters) != len(self.alphabet):
            raise RuleError("duplicate letters in alphabet")
        for letter, image in self.images.items():
            if not image:
                raise RuleError(f"empty image for letter {letter!r}")
            bad = set(image) - letters
            if bad:
                raise RuleError(f"image of {letter!r} uses unknown letters {sorted(bad)}")
        if set(self.images) != letters:
            raise RuleError("images must cover the whole alphabet")
        if self.lengths is None:
            object.__setattr__(self, "lengths", _default_lengths(self.alphabet, self.images))
            object.__setattr__(self, "lengths_given", False)
        if len(self.lengths) != len(self.alphabet):
            raise RuleError("one length per letter required")
        if any((x <= 0) for x in self.lengths):
            raise RuleError("tile lengths must be positive")
        _check_length_eigenvector(self)

    @property
    def size(self) -> int:
        return len(self.alphabet)

    @property
    def exact(self) -> bool:
        return all(isinstance(x, (int, Fraction)) for x in self.lengths)

    def index(self, letter: str) -> int:
        try:
            return self.alphabet.index(letter)
        except ValueError:
            raise RuleError(f"unknown letter {letter!r}") from None

    def length_of(self, letter: str):
        return self.lengths[self.index(letter)]

    # numpy views used by the geometry layer
    def image_arrays(self):
        lut = {c: i for i, c in enumerate(self.alphabet)}
        return [np.array([lut[c] for c in self.images[a]], dtype=np.int8) for a in self.alphabet]


def parse_rule(text: str) -> SubstitutionRule:
    """Parse the line-oriented rule grammar.

    One ``<letter> -> <word>`` per line, an optional ``lengths v1 v2 ...``
    line (values in first-appearance order of the letters), ``#`` comments.
    Letters are single non-whitespace code points.
    """
    alphabet: list[str] = []
    images: dict[str, str] = {}
    lengths_tokens: list[str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.split()[0] == "lengths":
            if lengths_tokens is not None:
                raise RuleError(f"line {lineno}: duplicate lengths line")
            lengths_tokens = line.split()[1:]
            continue
        if "->" not in line:
            raise RuleError(f"line {lineno}: expected '<letter> -> <word>'")
        lhs, rhs = (part.strip() for part in line.split("->", 1))
        if len(lhs) != 1:
            raise RuleError(f"line {lineno}: left side must be a single letter")
        word = "".join(rhs.split())
        if not word:
            raise RuleError(f"line {lineno}: empty image for {lhs!r}")
        if lhs in images:
            raise RuleError(f"line {lineno}: duplicate image for {lhs!r}")
        if lhs not in alphabet:
            alphabet.append(lhs)
        for c in word:
            if c not in alphabet:
                alphabet.append(c)
        images[lhs] = word
    if not images:
        raise RuleError("no substitution lines found")
    missing = [a for a in alphabet if a not in images]
    if missing:
        raise RuleError(f"letters {missing} appear in images but have no image")

    if lengths_tokens is not None:
        if len(lengths_tokens) != len(alphabet):
            raise RuleError(
                f"lengths line has {len(lengths_tokens)} values for {len(alphabet)} letters"
            )
        vals: list[Fraction | float] = []
        for tok in lengths_tokens:
            try:
                vals.append(Fraction(tok))
            except ValueError:
                vals.append(float(tok))
        return SubstitutionRule(tuple(alphabet), images, tuple(vals), lengths_given=True)

    return SubstitutionRule(tuple(alphabet), images)


def abelianize(rule: SubstitutionRule) -> np.ndarray:
    """Occurrence-count matrix: entry (L, L') = number of L in image(L')."""
    m = rule.size
    mat = np.zeros((m, m), dtype=np.int64)
    for j, letter in enumerate(rule.alphabet):
        for c in rule.images[letter]:
            mat[rule.index(c), j] += 1
    return mat


def abelianization_vector(rule: SubstitutionRule, word: str) -> np.ndarray:
    vec = np.zeros(rule.size, dtype=np.int64)
    for c in word:
        vec[rule.index(c)] += 1
    return vec


def check_primitive(matrix: np.ndarray) -> tuple[bool, int | None]:
    """Primitivity with the Wielandt bound (m-1)^2 + 1 on the witness power."""
    m = matrix.shape[0]
    if (matrix < 0).any():
        raise ValueError("matrix must be nonnegative")
    bound = (m - 1) ** 2 + 1
    power = np.eye(m, dtype=object)
    base = matrix.astype(object)
    for k in range(1, bound + 1):
        power = power @ base
        if (power > 0).all():
            return True, k
    return False, None


def check_proper(rule: SubstitutionRule) -> bool:
    """True iff all images share their first letter and share their last letter."""
    firsts = {rule.images[a][0] for a in rule.alphabet}
    lasts = {rule.images[a][-1] for a in rule.alphabet}
    return len(firsts) == 1 and len(lasts) == 1


def substitute_word(rule: SubstitutionRule, word: str) -> str:
    for c in word:
        if c not in rule.images:
            raise RuleError(f"unknown letter {c!r}")
    return "".join(rule.images[c] for c in word)


class PerronData(NamedTuple):
    expansion: Fraction | float
    lengths: tuple
    frequencies: tuple
    density: Fraction | float
    exact: bool


def perron_data(rule: SubstitutionRule) -> PerronData:
    """Expansion, length vector, letter frequencies, and point density.

    Frequencies are the right dominant eigenvector normalized so that
    sum(freq * length) = 1; the density of the point set is then sum(freq).
    Exact rationals are returned whenever the expansion is a rational root
    of the characteristic polynomial and the lengths are rational.
    """
    mat = abelianize(rule)
    prim, _ = check_primitive(mat)
    if not prim:
        raise RuleError("rule is not primitive")
    nu1, exact_nu = _dominant_eigenvalue(mat)
    if exact_nu and rule.exact:
        rows = exactlin.frac_matrix(mat.tolist())
        shifted = exactlin.mat_sub(rows, exactlin.mat_scale(exactlin.identity(rule.size), nu1))
        null = exactlin.nullspace(shifted)
        assert len(null) == 1, "dominant eigenvalue of a primitive matrix is simple"
        freq_raw = null[0]
        if freq_raw[0] < 0:
            freq_raw = [-x for x in freq_raw]
        scale = sum((Fraction(th) * f for th, f in zip(rule.lengths, freq_raw)), Fraction(0))
        freqs = tuple(f / scale for f in freq_raw)
        density = sum(freqs, Fraction(0))
        return PerronData(nu1, tuple(rule.lengths), freqs, density, True)
    vals, vecs = np.linalg.eig(mat.astype(float))
    k = int(np.argmax(vals.real))
    freq_raw = np.abs(vecs[:, k].real)
    theta = np.array([float(x) for x in rule.lengths])
    freqs = freq_raw / float(freq_raw @ theta)
    return PerronData(float(nu1), tuple(float(x) for x in rule.lengths), tuple(freqs), float(freqs.sum()), False)


def is_periodic(rule: SubstitutionRule, depth: int = 8) -> bool:
    """Heuristic periodicity flag: the depth-``depth`` one-sided word has a
    period no longer than half its length."""
    seed = rule.images[rule.alphabet[0]][0]
    w = seed
    for _ in range(depth):
        w = substitute_word(rule, w)
        if len(w) > 4096:
            w = w[:4096]
    # smallest period via the KMP failure function
    fail = [0] * len(w)
    k = 0
    for i in range(1, len(w)):
        while k and w[i] != w[k]:
            k = fail[k - 1]
        if w[i] == w[k]:
            k += 1
        fail[i] = k
    period = len(w) - fail[-1]
    return period <= len(w) // 2


def nesting_power(rule: SubstitutionRule, seed: tuple[str, str]) -> int | None:
    """Smallest p <= m^2 with sigma^p(L-) ending in L- and sigma^p(L+) starting with L+."""
    lm, lp = seed
    wl, wr = lm, lp
    for p in range(1, rule.size**2 + 1):
        wl, wr = substitute_word(rule, wl), substitute_word(rule, wr)
        if wl.endswith(lm) and wr.startswith(lp):
            return p
    return None


def seed_is_legal(rule: SubstitutionRule, seed: tuple[str, str], depth: int = 6) -> bool:
    """Whether the two-letter word L-L+ occurs in the language."""
    pair = seed[0] + seed[1]
    w = rule.alphabet[0]
    seen = set()
    for _ in range(depth + rule.size):
        w = substitute_word(rule, w)
        if len(w) > 200_000:
            w = w[:200_000]
        pairs = frozenset(w[i : i + 2] for i in range(len(w) - 1))
        if pair in pairs:
            return True
        if pairs in seen:
            break
        seen.add(pairs)
    return False


def validate_seed(rule: SubstitutionRule, seed: tuple[str, str]) -> int:
    """Check admissibility, returning the substitution power used per step.

    Proper rules accept every legal adjacent pair with single steps; other
    rules need a power p <= m^2 under which the seed letters reproduce
    themselves on the correct sides.
    """
    for letter in seed:
        if letter not in rule.images:
            raise SeedError(f"unknown seed letter {letter!r}")
    if not seed_is_legal(rule, seed):
        raise SeedError(f"seed {seed[0]}.{seed[1]} does not occur in the language")
    if check_proper(rule):
        return 1
    p = nesting_power(rule, seed)
    if p is None:
        raise SeedError(f"seed {seed[0]}.{seed[1]} does not nest under any power <= {rule.size**2}")
    return p


def generate_fixed_word(rule: SubstitutionRule, seed: tuple[str, str], depth: int) -> TwoSidedWord:
    """The literal two-sided word sigma^(p n)(L-) . sigma^(p n)(L+).

    For proper rules p = 1 and successive depths converge to the unique
    two-sided fixed word; they are prefix/suffix nested at the marker
    exactly when sigma(L-) ends in L- and sigma(L+) starts with L+.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    p = validate_seed(rule, seed)
    left, right = seed
    for _ in range(depth * p):
        left = substitute_word(rule, left)
        right = substitute_word(rule, right)
    return TwoSidedWord(left, right)


def _default_lengths(alphabet, images) -> tuple:
    """Left dominant eigenvector scaled so its smallest entry is 1."""
    m = len(alphabet)
    mat = np.zeros((m, m), dtype=np.int64)
    idx = {c: i for i, c in enumerate(alphabet)}
    for j, letter in enumerate(alphabet):
        for c in images[letter]:
            mat[idx[c], j] += 1
    nu1, exact_nu = _dominant_eigenvalue(mat)
    if exact_nu:
        rows = exactlin.frac_matrix(mat.T.tolist())
        shifted = exactlin.mat_sub(rows, exactlin.mat_scale(exactlin.identity(m), nu1))
        null = exactlin.nullspace(shifted)
        theta = null[0]
        if theta[0] < 0:
            theta = [-x for x in theta]
        smallest = min(theta)
        return tuple(x / smallest for x in theta)
    vals, vecs = np.linalg.eig(mat.T.astype(float))
    k = int(np.argmax(vals.real))
    theta = np.abs(vecs[:, k].real)
    return tuple(float(x) for x in theta / theta.min())


def _dominant_eigenvalue(mat: np.ndarray):
    """Dominant eigenvalue, exact when it is an integer root of the
    characteristic polynomial (always an integer if rational, since the
    polynomial is monic with integer coefficients)."""
    coeffs = exactlin.char_poly(exactlin.frac_matrix(mat.tolist()))
    vals = np.linalg.eigvals(mat.astype(float))
    nu1_f = float(max(vals.real))
    for r in exactlin.integer_roots(coeffs):
        if abs(r - nu1_f) < 1e-6 * max(1.0, abs(nu1_f)):
            return Fraction(r), True
    return nu1_f, False


def _check_length_eigenvector(rule: SubstitutionRule) -> None:
    mat = abelianize(rule)
    nu1, exact_nu = _dominant_eigenvalue(mat)
    if rule.exact and exact_nu:
        theta = [Fraction(x) for x in rule.lengths]
        left = exactlin.mat_vec(exactlin.transpose(exactlin.frac_matrix(mat.tolist())), theta)
        if any(l != nu1 * t for l, t in zip(left, theta)):
            raise RuleError(
                "tile lengths are not a left eigenvector of the occurrence matrix "
                f"for the expansion {nu1}"
            )
        return
    theta = np.array([float(x) for x in rule.lengths])
    resid = theta @ mat.astype(float) - float(nu1) * theta
    if np.max(np.abs(resid)) > 1e-10 * max(1.0, float(np.max(np.abs(theta))) * abs(float(nu1))):
        raise RuleError("tile lengths are not a left eigenvector for the expansion")


def warn_if_periodic(rule: SubstitutionRule) -> bool:
    periodic = is_periodic(rule)
    if periodic:
        warnings.warn("substitution generates a periodic word; the trace hierarchy is trivial")
    return periodic
