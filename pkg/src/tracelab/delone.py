"""Finite segments of the geometric Delone set.

Points are tile left endpoints of the two-sided fixed word; a point carries
the label of the tile to its right, and the rightmost materialized point
carries the label of the tile it would start.  Windows [-T, T] are closed,
so tr of the restriction of a diagonal-one kernel equals the point count
with no edge ambiguity.

Generation is canonical: for a proper rule the right half is a prefix of
the unique one-sided fixed word of the common image-initial letter and the
left half a suffix of the fixed word of the common image-final letter, so
window content does not depend on how deep the word was grown (the literal
per-depth seed words agree with this limit on ever larger central patches
but are not nested for arbitrary seeds).  Non-proper rules use the seed
re-occurrence power found by :func:`tracelab.rules.validate_seed`.

Coordinates are kept exact: rational tile lengths are rescaled by their
common denominator and accumulated in int64, so there is no drift over
millions of points; irrational lengths fall back to float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd

import numpy as np

from .collar import CollaredRule
from .rules import SubstitutionRule, check_proper, validate_seed

__all__ = [
    "DeloneSegment",
    "WindowFamily",
    "build_segment",
    "counts_in_window",
    "local_pattern",
    "boundary_collar_count",
]


class WindowError(ValueError):
    """Query exceeds the materialized segment."""


@dataclass(frozen=True)
class WindowFamily:
    """The one-parameter window family B_T = [-b T, b T] with Vol = 2 b T."""

    base_halfwidth: float = 1.0

    @property
    def base_volume(self) -> float:
        return 2.0 * self.base_halfwidth

    def volume(self, t: float) -> float:
        return self.base_volume * t

    def halfwidth(self, t: float) -> float:
        return self.base_halfwidth * t

    boundary_size: int = 2  # |dB_T| in one dimension


@dataclass(frozen=True)
class DeloneSegment:
    """Materialized points of the fixed word in a symmetric window."""

    rule: SubstitutionRule
    seed: tuple[str, str]
    step_power: int  # substitution power used per generation step
    letters: np.ndarray  # int8 labels, one per point (tile to its right)
    origin: int  # index of the point at coordinate 0
    scale: int  # positions are pos_scaled / scale (scale == 0 -> float mode)
    pos_scaled: np.ndarray  # int64 (exact mode) or float64 (scale == 0)
    extent: float  # queries are valid for |x| <= extent
    _caches: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.letters)

    @property
    def exact(self) -> bool:
        return self.scale > 0

    def positions(self) -> np.ndarray:
        """Point coordinates as float64."""
        if self.scale > 0:
            return self.pos_scaled / self.scale
        return self.pos_scaled

    def coordinate(self, i: int):
        if self.scale > 0:
            return Fraction(int(self.pos_scaled[i]), self.scale)
        return float(self.pos_scaled[i])

    def _scaled(self, x) -> float:
        if self.scale > 0:
            if isinstance(x, (int, Fraction)):
                f = Fraction(x) * self.scale
                return float(f) if f.denominator != 1 else int(f)
            return float(x) * self.scale
        return float(x)

    def window_slice(self, t) -> tuple[int, int]:
        """Index range [i0, i1) of points with coordinate in [-t, t]."""
        if float(t) < 0:
            raise WindowError("window halfwidth must be >= 0")
        if float(t) > self.extent:
            raise WindowError(f"window {float(t)} exceeds segment extent {self.extent}")
        ts = self._scaled(t)
        i0 = int(np.searchsorted(self.pos_scaled, -ts, side="left"))
        i1 = int(np.searchsorted(self.pos_scaled, ts, side="right"))
        return i0, i1

    def label_string(self, i0: int, i1: int) -> str:
        return "".join(self.rule.alphabet[k] for k in self.letters[i0:i1])

    def collared_ids(self, collared: CollaredRule) -> np.ndarray:
        """Cached collared-letter ids aligned to point indices.

        Entry t of the returned array is the id for point index
        ``t + collared.radius``; indices within ``radius`` of the segment
        ends have no id.
        """
        key = ("ids", collared.radius, id(collared))
        if key not in self._caches:
            self._caches[key] = collared.id_array(self.letters)
        return self._caches[key]

    def window_counts(self, t) -> np.ndarray:
        """Cached per-letter point counts in the closed window [-t, t]."""
        key = ("counts", self._scaled(t))
        if key not in self._caches:
            i0, i1 = self.window_slice(t)
            self._caches[key] = np.bincount(
                self.letters[i0:i1], minlength=self.rule.size
            ).astype(np.int64)
        return self._caches[key]

    def collared_counts(self, collared: CollaredRule, t) -> np.ndarray:
        """Cached per-collared-letter counts in the closed window [-t, t]."""
        key = ("ccounts", collared.radius, id(collared), self._scaled(t))
        if key not in self._caches:
            i0, i1 = self.window_slice(t)
            ids = self.collared_ids(collared)
            lo, hi = i0 - collared.radius, i1 - collared.radius
            if lo < 0 or hi > len(ids):
                raise WindowError("segment margin too small for the collar radius")
            self._caches[key] = np.bincount(ids[lo:hi], minlength=collared.size).astype(np.int64)
        return self._caches[key]

    def to_csv(self) -> str:
        lines = ["index,coordinate,label"]
        pos = self.positions()
        for i in range(len(self.letters)):
            coord = format(float(pos[i]), ".12g")
            lines.append(f"{i - self.origin},{coord},{self.rule.alphabet[self.letters[i]]}")
        return "\n".join(lines) + "\n"


def _common_scale(lengths) -> int:
    den = 1
    for x in lengths:
        f = Fraction(x)
        den = den * f.denominator // gcd(den, f.denominator)
    return den


def _grow_word(rule: SubstitutionRule, start: str, target_scaled: int | float, side: str,
               scale: int, power: int) -> np.ndarray:
    """Letters of the fixed word on one side, covering the target length.

    Keeps only a prefix (right side) or suffix (left side) after each round;
    prefixes of image words are prefixes of the image of a prefix, so the
    result is the canonical fixed-word content regardless of depth.
    """
    lut = {c: i for i, c in enumerate(rule.alphabet)}
    if scale > 0:
        theta = np.array([int(Fraction(x) * scale) for x in rule.lengths], dtype=np.int64)
    else:
        theta = np.array([float(x) for x in rule.lengths])
    images = rule.image_arrays()
    img_len = np.array([len(a) for a in images], dtype=np.int64)
    table = np.full((rule.size, int(img_len.max())), -1, dtype=np.int8)
    for i, arr in enumerate(images):
        table[i, : len(arr)] = arr

    def expand(w: np.ndarray) -> np.ndarray:
        for _ in range(power):
            counts = img_len[w]
            total = int(counts.sum())
            offsets = np.zeros(len(w), dtype=np.int64)
            np.cumsum(counts[:-1], out=offsets[1:])
            rep = np.repeat(w, counts)
            idx = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts)
            w = table[rep, idx]
        return w

    w = np.array([lut[c] for c in start], dtype=np.int8)
    while theta[w].sum() < target_scaled:
        w = expand(w)
        lengths = theta[w] if side == "right" else theta[w[::-1]]
        cum = np.cumsum(lengths)
        k = min(int(np.searchsorted(cum, target_scaled, side="left")) + 1, len(w))
        w = w[:k] if side == "right" else w[len(w) - k :]
    return w


def build_segment(rule: SubstitutionRule, seed: tuple[str, str], window: float,
                  margin: float | None = None) -> DeloneSegment:
    """Materialize all points of the fixed word in [-T, T] plus a margin.

    The margin (default: 64 max tile lengths) leaves room for kernel
    contexts and boundary queries beyond the nominal window.
    """
    if float(window) <= 0:
        raise WindowError("window must be positive")
    power = validate_seed(rule, seed)
    maxlen = max(float(x) for x in rule.lengths)
    if margin is None:
        margin = 64.0 * maxlen
    target = float(window) + float(margin) + 2.0 * maxlen

    if check_proper(rule):
        right_start = rule.images[rule.alphabet[0]][0]
        left_start = rule.images[rule.alphabet[0]][-1]
    else:
        left_start, right_start = seed

    scale = _common_scale(rule.lengths) if rule.exact else 0
    target_scaled = int(np.ceil(target * scale)) if scale else target
    wl = _grow_word(rule, left_start, target_scaled, "left", scale, power)
    wr = _grow_word(rule, right_start, target_scaled, "right", scale, power)

    letters = np.concatenate([wl, wr])
    origin = len(wl)
    if scale > 0:
        theta = np.array([int(Fraction(x) * scale) for x in rule.lengths], dtype=np.int64)
        pos = np.empty(len(letters), dtype=np.int64)
    else:
        theta = np.array([float(x) for x in rule.lengths])
        pos = np.empty(len(letters), dtype=np.float64)
    gaps = theta[letters]
    pos[origin] = 0
    if origin + 1 < len(letters):
        pos[origin + 1 :] = np.cumsum(gaps[origin:-1])
    pos[:origin] = -np.cumsum(gaps[:origin][::-1])[::-1]

    extent_scaled = min(-pos[0], pos[-1])
    extent = float(extent_scaled / scale) if scale else float(extent_scaled)
    return DeloneSegment(
        rule=rule,
        seed=tuple(seed),
        step_power=power,
        letters=letters,
        origin=origin,
        scale=scale,
        pos_scaled=pos,
        extent=extent,
    )


def counts_in_window(segment: DeloneSegment, t) -> np.ndarray:
    """Exact per-letter point counts in the closed window [-t, t]."""
    return segment.window_counts(t)


def point_count(segment: DeloneSegment, t) -> int:
    i0, i1 = segment.window_slice(t)
    return i1 - i0


def local_pattern(segment: DeloneSegment, point_index: int, radius) -> tuple:
    """Canonical local-pattern key at a point: offsets and labels within the
    metric radius, translated so the point sits at 0."""
    pos = segment.pos_scaled
    center = pos[point_index]
    rs = segment._scaled(radius)
    if center - rs < pos[0] or center + rs > pos[-1]:
        raise WindowError("insufficient margin for the requested pattern radius")
    i0 = int(np.searchsorted(pos, center - rs, side="left"))
    i1 = int(np.searchsorted(pos, center + rs, side="right"))
    offsets = []
    for i in range(i0, i1):
        if segment.scale > 0:
            offsets.append(Fraction(int(pos[i] - center), segment.scale))
        else:
            offsets.append(float(pos[i] - center))
    labels = tuple(segment.rule.alphabet[k] for k in segment.letters[i0:i1])
    return tuple(zip(offsets, labels))


def boundary_collar_count(segment: DeloneSegment, t, r) -> int:
    """Number of points within distance r of the window boundary {-t, t}."""
    if float(r) < 0:
        raise ValueError("collar distance must be >= 0")
    pos = segment.pos_scaled
    ts, rs = segment._scaled(t), segment._scaled(r)
    ranges = []
    for edge in (-ts, ts):
        i0 = int(np.searchsorted(pos, edge - rs, side="left"))
        i1 = int(np.searchsorted(pos, edge + rs, side="right"))
        ranges.append((i0, i1))
    (a0, a1), (b0, b1) = ranges
    overlap = max(0, min(a1, b1) - max(a0, b0))
    return (a1 - a0) + (b1 - b0) - overlap
