"""Letter collaring: local contexts as an induced substitution.

A radius-r collared letter is a legal (2r+1)-letter window of the language,
read as "r letters of left context, the letter, r letters of right
context".  Substitution acts on collared letters (the context of each image
letter is read off inside the image of the collared window), giving an
induced occurrence matrix that intertwines with the base one through the
center-letter projection.  Collaring converts pattern-dependent diagonal
data into letter-dependent data, which is what makes exact trace
projections of product kernels possible.

The dual objects live here too: a collared current for a base eigenvalue is
a right eigenvector of the collared matrix whose letterwise pushforward is
the base current.  For Jordan chains the currents satisfy the reversed
chain relation and are lifted top-down.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import exactlin
from .eigen import EigenStructure
from .rules import SubstitutionRule, substitute_word

__all__ = ["CollarError", "CollaredRule", "collar", "legal_windows"]

_ENUM_CAP = 1_000_000  # truncation cap for the enumeration word


class CollarError(RuntimeError):
    pass


def _expand_letters(rule: SubstitutionRule, w: np.ndarray) -> np.ndarray:
    images = rule.image_arrays()
    img_len = np.array([len(a) for a in images], dtype=np.int64)
    table = np.full((rule.size, int(img_len.max())), -1, dtype=np.int8)
    for i, arr in enumerate(images):
        table[i, : len(arr)] = arr
    counts = img_len[w]
    total = int(counts.sum())
    offsets = np.zeros(len(w), dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    rep = np.repeat(w, counts)
    idx = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts)
    return table[rep, idx]


def _window_codes(letters: np.ndarray, m: int, length: int) -> np.ndarray:
    n = len(letters)
    if n < length:
        return np.empty(0, dtype=np.int64)
    code = np.zeros(n - length + 1, dtype=np.int64)
    for k in range(length):
        code *= m
        code += letters[k : n - length + 1 + k]
    return code


def legal_windows(rule: SubstitutionRule, length: int) -> tuple[str, ...]:
    """All legal factors of the given length, by iterating the substitution
    until the factor set is stable for three consecutive rounds."""
    if length == 0:
        return ("",)
    m = rule.size
    if m**length > 2**62:
        raise CollarError("window length too large to encode")
    w = np.array([0], dtype=np.int8)
    stable = 0
    prev: frozenset | None = None
    for _ in range(64):
        w = _expand_letters(rule, w)
        if len(w) > _ENUM_CAP:
            w = w[:_ENUM_CAP]
        cur = frozenset(np.unique(_window_codes(w, m, length)).tolist())
        if cur == prev:
            stable += 1
            if stable >= 3 and len(w) >= min(_ENUM_CAP, 64 * length):
                return tuple(sorted(_decode(code, m, length, rule.alphabet) for code in cur))
        else:
            stable = 0
        prev = cur
    raise CollarError(f"factor enumeration did not stabilize for length {length}")


def _decode(code: int, m: int, length: int, alphabet) -> str:
    out = []
    for _ in range(length):
        out.append(alphabet[code % m])
        code //= m
    return "".join(reversed(out))


@dataclass(frozen=True)
class CollaredRule:
    """Radius-r collared alphabet with its induced substitution."""

    base: SubstitutionRule
    radius: int
    windows: tuple[str, ...]
    images: tuple[tuple[int, ...], ...]  # induced image words, window indices
    matrix: np.ndarray  # collared occurrence matrix, int64
    projection: tuple[int, ...]  # window index -> base letter index
    _caches: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.windows)

    def window_index(self, window: str) -> int:
        try:
            return self._index_map[window]
        except KeyError:
            raise CollarError(f"window {window!r} is not in the collared alphabet") from None

    @property
    def _index_map(self) -> dict[str, int]:
        if "index_map" not in self._caches:
            self._caches["index_map"] = {w: i for i, w in enumerate(self.windows)}
        return self._caches["index_map"]

    def projection_matrix(self) -> np.ndarray:
        p = np.zeros((self.base.size, self.size), dtype=np.int64)
        for j, a in enumerate(self.projection):
            p[a, j] = 1
        return p

    def id_array(self, letters: np.ndarray) -> np.ndarray:
        """Collared-letter id at each interior position of a letter array.

        Output has length ``len(letters) - 2 * radius`` and is aligned so
        that entry t is the id of the window centered at position
        ``t + radius``.  Raises :class:`CollarError` on an illegal window.
        """
        r = self.radius
        letters = np.asarray(letters)
        n = len(letters)
        if n < 2 * r + 1:
            return np.empty(0, dtype=np.int32)
        if r == 0:
            out = letters.astype(np.int32)
            if np.any(out >= self.size) or np.any(out < 0):
                raise CollarError("letter out of range")
            return out
        m = self.base.size
        width = 2 * r + 1
        code = np.zeros(n - width + 1, dtype=np.int64)
        for k in range(width):
            code *= m
            code += letters[k : n - width + 1 + k]
        lut = self._code_lut(m, width)
        out = lut[code]
        if np.any(out < 0):
            bad = int(code[np.argmin(out)])
            raise CollarError(f"illegal window encountered (code {bad})")
        return out

    def _code_lut(self, m: int, width: int) -> np.ndarray:
        key = "code_lut"
        if key not in self._caches:
            if m**width > 50_000_000:
                raise CollarError("collared window space too large to tabulate")
            lut = np.full(m**width, -1, dtype=np.int32)
            letter_index = {c: i for i, c in enumerate(self.base.alphabet)}
            for idx, win in enumerate(self.windows):
                code = 0
                for c in win:
                    code = code * m + letter_index[c]
                lut[code] = idx
            self._caches[key] = lut
        return self._caches[key]

    def frequencies(self):
        """Collared letter frequencies: the lifted leading current."""
        structure_freqs = self._caches.get("frequencies")
        if structure_freqs is None:
            from .rules import perron_data

            pd = perron_data(self.base)
            structure_freqs = self.lift_current(
                pd.expansion, list(pd.frequencies), exact=pd.exact
            )
            self._caches["frequencies"] = structure_freqs
        return structure_freqs

    def lift_current(self, eigenvalue, base_current, exact: bool, rhs=None):
        """Solve  (M_c - w) g = rhs,  P g = base_current  for the collared current.

        ``rhs`` carries the previous chain member (reversed chain relation);
        omitted for plain eigenvectors.
        """
        mc = self.size
        p = self.projection_matrix()
        if exact:
            w = Fraction(eigenvalue)
            rows = [
                [Fraction(int(self.matrix[i, j])) - (w if i == j else 0) for j in range(mc)]
                for i in range(mc)
            ]
            rows += [[Fraction(int(p[a, j])) for j in range(mc)] for a in range(p.shape[0])]
            b = [Fraction(x) for x in (rhs if rhs is not None else [0] * mc)]
            b += [Fraction(x) for x in base_current]
            sol, null = exactlin.solve_affine(rows, b)
            if sol is None:
                raise CollarError(
                    f"no collared current for eigenvalue {eigenvalue} at radius {self.radius}"
                )
            if null:
                # ambiguity along pushforward-free eigendirections; keep the
                # particular solution, which the cross-radius stability test
                # will vet against the next collar
                pass
            return tuple(sol)
        a = np.vstack(
            [self.matrix.astype(float) - float(eigenvalue) * np.eye(mc), p.astype(float)]
        )
        b = np.concatenate(
            [
                np.asarray(rhs, dtype=float) if rhs is not None else np.zeros(mc),
                np.asarray(base_current, dtype=float),
            ]
        )
        sol, residual, *_ = np.linalg.lstsq(a, b, rcond=None)
        if np.linalg.norm(a @ sol - b) > 1e-8 * max(1.0, np.linalg.norm(b)):
            raise CollarError(
                f"no collared current for eigenvalue {eigenvalue} at radius {self.radius}"
            )
        return tuple(float(x) for x in sol)

    def lift_structure_currents(self, structure: EigenStructure) -> dict[tuple, tuple]:
        """Collared currents for every expanding index of a base structure."""
        key = ("currents", id(structure))
        if key in self._caches:
            return self._caches[key]
        out: dict[tuple, tuple] = {}
        # process chains top-down: for a chain (i, j=1..h, k) the currents obey
        # M_c g_j = nu g_j + g_{j+1}, with g_{h+1} = 0
        by_chain: dict[tuple, list] = {}
        for e in structure.plus_entries:
            by_chain.setdefault((e.i, e.k), []).append(e)
        for chain_entries in by_chain.values():
            chain_entries.sort(key=lambda e: -e.j)
            prev = None
            for e in chain_entries:
                if e.pair:
                    raise CollarError("collared currents for complex pairs are not supported")
                exact = e.cur_exact is not None and structure.expansion_exact is not None
                base_cur = list(e.cur_exact) if exact else [float(x) for x in e.cur]
                value = e.value if exact else complex(e.value).real
                g = self.lift_current(value, base_cur, exact=exact, rhs=prev)
                out[e.label] = g
                prev = g
        self._caches[key] = out
        return out


def collar(rule: SubstitutionRule, radius: int) -> CollaredRule:
    """Build the radius-r collared substitution for a primitive rule."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        windows = tuple(rule.alphabet)
        images = tuple(
            tuple(rule.index(c) for c in rule.images[a]) for a in rule.alphabet
        )
        from .rules import abelianize

        return CollaredRule(
            base=rule,
            radius=0,
            windows=windows,
            images=images,
            matrix=abelianize(rule),
            projection=tuple(range(rule.size)),
        )
    width = 2 * radius + 1
    windows = legal_windows(rule, width)
    index_map = {w: i for i, w in enumerate(windows)}
    mc = len(windows)
    matrix = np.zeros((mc, mc), dtype=np.int64)
    images = []
    projection = []
    for win in windows:
        sw = substitute_word(rule, win)
        off = len(substitute_word(rule, win[:radius])) if radius else 0
        center_image = rule.images[win[radius]]
        img: list[int] = []
        for t in range(len(center_image)):
            pos = off + t
            key = sw[pos - radius : pos + radius + 1]
            idx = index_map.get(key)
            assert idx is not None, (
                f"collared alphabet not closed: window {key!r} arises from {win!r}"
            )
            img.append(idx)
            matrix[idx, index_map[win]] += 1
        images.append(tuple(img))
        projection.append(rule.index(win[radius]))
    return CollaredRule(
        base=rule,
        radius=radius,
        windows=windows,
        images=tuple(images),
        matrix=matrix,
        projection=tuple(projection),
    )
