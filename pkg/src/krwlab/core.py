"""Lattice geometry, killing fields, exhaustions, seeded randomness and estimates.

Everything here is immutable after construction. Killing fields evaluate on
single points (``field(x)``) and on point arrays of shape (n, d)
(``field.evaluate(points)``); exhaustions produce finite point sets.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_DIM = 5


def as_point(x, d: int | None = None) -> tuple:
    """Normalize ``x`` to an integer tuple, broadcasting a scalar 0 to the origin."""
    if isinstance(x, (int, np.integer)):
        if d is None or d == 1:
            return (int(x),)
        if int(x) != 0:
            raise ValueError("scalar points other than 0 need d == 1")
        return (0,) * d
    p = tuple(int(c) for c in x)
    if d is not None and len(p) != d:
        raise ValueError(f"point {p} has dimension {len(p)}, expected {d}")
    return p


def check_dim(d: int) -> int:
    if not 1 <= int(d) <= MAX_DIM:
        raise ValueError(f"dimension must lie in 1..{MAX_DIM}, got {d}")
    return int(d)


def unit_steps(d: int) -> np.ndarray:
    """The 2d unit vectors, ordered +e1, -e1, +e2, -e2, ..."""
    steps = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        steps[2 * i, i] = 1
        steps[2 * i + 1, i] = -1
    return steps


def neighbors(x) -> list[tuple]:
    """Nearest neighbours of ``x`` in Z^d."""
    p = as_point(x)
    out = []
    for i in range(len(p)):
        for s in (1, -1):
            q = list(p)
            q[i] += s
            out.append(tuple(q))
    return out


def norm(x) -> float:
    return math.sqrt(sum(c * c for c in as_point(x)))


# ---------------------------------------------------------------------------
# killing fields

class KillingField:
    """Base class. Subclasses implement ``evaluate`` on an (n, d) integer array."""

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> float:
        p = np.asarray([as_point(x)], dtype=np.int64)
        return float(self.evaluate(p)[0])

    def radial_profile(self) -> Callable[[np.ndarray], np.ndarray] | None:
        """Function of |x| if the field is radial, else None."""
        return None

    def support_radius(self) -> float | None:
        """Radius beyond which the field vanishes, if it has bounded support."""
        return None

    def is_zero(self) -> bool:
        return False

    def describe(self) -> dict:
        raise NotImplementedError

    def fingerprint(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _radii(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    return np.sqrt(np.sum(pts * pts, axis=1))


@dataclass(frozen=True)
class Zero(KillingField):
    def evaluate(self, points):
        return np.zeros(len(points))

    def radial_profile(self):
        return lambda r: np.zeros_like(np.asarray(r, dtype=float))

    def support_radius(self):
        return 0.0

    def is_zero(self):
        return True

    def describe(self):
        return {"kind": "zero"}


@dataclass(frozen=True)
class Constant(KillingField):
    """Spatially constant killing probability (or rate, in the continuum)."""
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("constant killing must lie in [0, 1]")

    def evaluate(self, points):
        return np.full(len(points), float(self.rate))

    def radial_profile(self):
        return lambda r: np.full_like(np.asarray(r, dtype=float), self.rate)

    def is_zero(self):
        return self.rate == 0.0

    def describe(self):
        return {"kind": "constant", "rate": self.rate}


@dataclass(frozen=True)
class IndicatorSet(KillingField):
    """Killing probability ``rate`` on a finite set of points, zero elsewhere."""
    points: tuple
    rate: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rate <= 1.0:
            raise ValueError("indicator rate must lie in (0, 1]")
        pts = tuple(sorted(as_point(p) for p in self.points))
        if len({len(p) for p in pts}) > 1:
            raise ValueError("indicator points have mixed dimensions")
        object.__setattr__(self, "points", pts)

    def evaluate(self, points):
        pts = np.asarray(points, dtype=np.int64)
        if pts.ndim == 1:
            pts = pts[:, None]
        out = np.zeros(len(pts))
        for p in self.points:
            out[np.all(pts == np.asarray(p), axis=1)] = self.rate
        return out

    def support_radius(self):
        return max((norm(p) for p in self.points), default=0.0)

    def is_zero(self):
        return len(self.points) == 0

    def describe(self):
        return {"kind": "indicator", "points": [list(p) for p in self.points], "rate": self.rate}


@dataclass(frozen=True)
class PowerLaw(KillingField):
    """x -> min(1, |x|^-alpha); equals 1 at the origin."""
    alpha: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    def radial_profile(self):
        a = self.alpha

        def prof(r):
            r = np.asarray(r, dtype=float)
            v = np.where(r > 0, np.power(np.where(r > 0, r, 1.0), -a), 1.0)
            return np.minimum(1.0, v)
        return prof

    def evaluate(self, points):
        return self.radial_profile()(_radii(points))

    def describe(self):
        return {"kind": "power", "alpha": self.alpha}


@dataclass(frozen=True)
class LogCorrected(KillingField):
    """x -> min(1, c / (|x|^2 ln max(|x|, e)))."""
    c: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")

    def radial_profile(self):
        c = self.c

        def prof(r):
            r = np.asarray(r, dtype=float)
            den = r * r * np.log(np.maximum(r, math.e))
            v = np.where(den > 0, c / np.where(den > 0, den, 1.0), 1.0)
            return np.minimum(1.0, v)
        return prof

    def evaluate(self, points):
        return self.radial_profile()(_radii(points))

    def describe(self):
        return {"kind": "logcorr", "c": self.c}


@dataclass(frozen=True)
class RadialProfile(KillingField):
    """Piecewise-linear function of |x| through (radii, values).

    Constant extrapolation beyond both ends; an optional ``exact`` table of
    point values overrides the profile (used for the origin and for small
    symmetry classes of estimated killing tables).
    """
    radii: tuple
    values: tuple
    exact: tuple = ()

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.shape != v.shape or r.ndim != 1 or len(r) == 0:
            raise ValueError("radii and values must be equal-length 1-D sequences")
        if np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        if np.any((v < 0) | (v > 1)):
            raise ValueError("profile values must lie in [0, 1]")
        for p, val in self.exact:
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"exact value at {p} outside [0, 1]")
        object.__setattr__(self, "radii", tuple(float(x) for x in r))
        object.__setattr__(self, "values", tuple(float(x) for x in v))
        object.__setattr__(self, "exact", tuple((tuple(p), float(val)) for p, val in self.exact))

    def radial_profile(self):
        if self.exact:
            return None
        r, v = np.asarray(self.radii), np.asarray(self.values)
        return lambda x: np.interp(np.asarray(x, dtype=float), r, v)

    def evaluate(self, points):
        pts = np.asarray(points, dtype=np.int64)
        if pts.ndim == 1:
            pts = pts[:, None]
        out = np.interp(_radii(pts), np.asarray(self.radii), np.asarray(self.values))
        if self.exact:
            table = dict(self.exact)
            key = _class_keys(pts)
            for i, kk in enumerate(key):
                val = table.get(kk)
                if val is not None:
                    out[i] = val
        return out

    def describe(self):
        return {"kind": "radial", "radii": list(self.radii), "values": list(self.values),
                "exact": [[list(p), v] for p, v in self.exact]}


def _class_keys(points: np.ndarray) -> list[tuple]:
    """Canonical representative under coordinate permutations and sign flips."""
    a = np.sort(np.abs(np.asarray(points, dtype=np.int64)), axis=1)[:, ::-1]
    return [tuple(int(c) for c in row) for row in a]


def symmetry_class(x) -> tuple:
    return _class_keys(np.asarray([as_point(x)]))[0]


@dataclass(frozen=True)
class Tabulated(KillingField):
    """Explicit point -> value table with a default outside it.

    ``default`` is either a number or another KillingField.
    """
    table: tuple
    default: object = 0.0

    def __init__(self, table, default=0.0):
        items = table.items() if isinstance(table, dict) else table
        norm_items = []
        for p, v in items:
            v = float(v)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"tabulated value {v} at {p} outside [0, 1]")
            norm_items.append((as_point(p), v))
        if isinstance(default, (int, float)) and not 0.0 <= default <= 1.0:
            raise ValueError("default value outside [0, 1]")
        object.__setattr__(self, "table", tuple(sorted(norm_items)))
        object.__setattr__(self, "default", default)

    def evaluate(self, points):
        pts = np.asarray(points, dtype=np.int64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if isinstance(self.default, KillingField):
            out = self.default.evaluate(pts)
        else:
            out = np.full(len(pts), float(self.default))
        lookup = dict(self.table)
        for i, row in enumerate(pts):
            v = lookup.get(tuple(int(c) for c in row))
            if v is not None:
                out[i] = v
        return out

    def support_radius(self):
        if isinstance(self.default, KillingField):
            inner = self.default.support_radius()
            if inner is None:
                return None
        elif self.default != 0:
            return None
        else:
            inner = 0.0
        nz = [norm(p) for p, v in self.table if v > 0]
        return max(nz + [inner])

    def is_zero(self):
        dz = self.default.is_zero() if isinstance(self.default, KillingField) else self.default == 0
        return dz and all(v == 0 for _, v in self.table)

    def describe(self):
        dflt = self.default.describe() if isinstance(self.default, KillingField) else self.default
        return {"kind": "tabulated", "table": [[list(p), v] for p, v in self.table], "default": dflt}


def eval_killing(k: KillingField, x) -> float:
    return k(x)


def parse_killing(spec: str | dict, d: int | None = None) -> KillingField:
    """Build a killing field from a compact string or a config mapping.

    Strings: ``zero``, ``const:0.1``, ``power:1.6``, ``logcorr:1``,
    ``indicator:<pt>[;<pt>...]:<rate>`` where a point is ``0`` (the origin)
    or comma-separated coordinates.
    """
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "zero":
            return Zero()
        if kind == "constant":
            return Constant(float(spec["rate"]))
        if kind == "power":
            return PowerLaw(float(spec["alpha"]))
        if kind == "logcorr":
            return LogCorrected(float(spec.get("c", 1.0)))
        if kind == "indicator":
            pts = [as_point(p, d) for p in spec.get("points", [0])]
            return IndicatorSet(tuple(pts), float(spec.get("rate", 1.0)))
        if kind == "tabulated":
            dflt = spec.get("default", 0.0)
            if isinstance(dflt, dict):
                dflt = parse_killing(dflt, d)
            return Tabulated([(p, v) for p, v in spec["table"]], dflt)
        if kind == "radial":
            return RadialProfile(tuple(spec["radii"]), tuple(spec["values"]),
                                 tuple((tuple(p), v) for p, v in spec.get("exact", [])))
        raise ValueError(f"unknown killing kind {kind!r}")
    parts = spec.strip().split(":")
    head = parts[0].lower()
    try:
        if head == "zero":
            return Zero()
        if head in ("const", "constant"):
            return Constant(float(parts[1]))
        if head == "power":
            return PowerLaw(float(parts[1]))
        if head == "logcorr":
            return LogCorrected(float(parts[1]) if len(parts) > 1 else 1.0)
        if head == "indicator":
            rate = float(parts[2]) if len(parts) > 2 else 1.0
            pts = []
            for tok in parts[1].split(";"):
                tok = tok.strip()
                if tok == "0":
                    pts.append(as_point(0, d))
                else:
                    pts.append(as_point([int(c) for c in tok.split(",")], d))
            return IndicatorSet(tuple(pts), rate)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"bad killing spec {spec!r}: {exc}") from exc
    raise ValueError(f"unknown killing spec {spec!r}")


# ---------------------------------------------------------------------------
# exhaustions

def ball_points(radius: float, d: int, first: tuple[int, int] | None = None) -> np.ndarray:
    """Lattice points with |x| <= radius, in lexicographic order.

    ``first`` optionally restricts the first coordinate to a closed range.
    """
    d = check_dim(d)
    if radius < 0:
        return np.zeros((0, d), dtype=np.int64)
    m = int(math.floor(radius + 1e-9))
    r2 = radius * radius + 1e-9
    lo, hi = (-m, m) if first is None else (max(-m, first[0]), min(m, first[1]))
    # build slice by slice to keep peak memory near the output size
    axis = np.arange(lo, hi + 1, dtype=np.int64)
    if d == 1:
        return axis[:, None].copy()
    rest = ball_points(radius, d - 1)
    rest_sq = np.sum(rest * rest, axis=1)
    chunks = []
    for a in axis:
        sel = rest[rest_sq + a * a <= r2]
        chunks.append(np.column_stack([np.full(len(sel), a, dtype=np.int64), sel]))
    return np.concatenate(chunks)


class Exhaustion:
    """Increasing family R -> Lambda_R of finite subsets of Z^d."""

    def contains(self, points: np.ndarray, R) -> np.ndarray:
        raise NotImplementedError

    def domain(self, R, d: int) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    def fingerprint(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Ball(Exhaustion):
    """Lambda_R = {x : |x| <= R}."""

    def contains(self, points, R):
        return _radii(points) <= R + 1e-9

    def domain(self, R, d):
        return ball_points(float(R), d)

    def describe(self):
        return {"kind": "ball"}


@dataclass(frozen=True)
class BallPlusHalfSpace(Exhaustion):
    """(B(R) union {sign * x[axis] >= 0}) intersected with B(factor * R).

    With the default axis 0 and sign -1 the added half-space is {x_1 <= 0}.
    """
    axis: int = 0
    sign: int = -1
    factor: float = 8.0

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.factor < 1:
            raise ValueError("truncation factor must be >= 1 so the truncation radius is >= R")

    def truncation(self, R) -> float:
        return self.factor * R

    def contains(self, points, R):
        pts = np.asarray(points)
        if pts.ndim == 1:
            pts = pts[:, None]
        rad = _radii(pts)
        half = self.sign * pts[:, self.axis] >= 0
        return ((rad <= R + 1e-9) | half) & (rad <= self.truncation(R) + 1e-9)

    def domain(self, R, d):
        d = check_dim(d)
        if self.axis >= d:
            raise ValueError("half-space axis exceeds dimension")
        big = float(self.truncation(R))
        # half-ball of radius big on the kept side, plus the rest of B(R)
        if self.sign > 0:
            parts = [ball_points(float(R), d, (-10**9, -1)), ball_points(big, d, (0, 10**9))]
        else:
            parts = [ball_points(big, d, (-10**9, 0)), ball_points(float(R), d, (1, 10**9))]
        pts = np.concatenate(parts)
        if self.axis != 0:
            perm = list(range(d))
            perm[0], perm[self.axis] = perm[self.axis], perm[0]
            pts = pts[:, perm]
        order = np.lexsort(pts.T[::-1])
        return pts[order]

    def describe(self):
        return {"kind": "halfspace", "axis": self.axis, "sign": self.sign, "factor": self.factor}


@dataclass(frozen=True)
class Segment1D(Exhaustion):
    """Lambda_R = [-b_minus * R, b_plus * R] in Z."""
    b_minus: float = 1.0
    b_plus: float = 1.0

    def __post_init__(self):
        if self.b_minus <= 0 or self.b_plus <= 0:
            raise ValueError("segment factors must be positive")

    def bounds(self, R) -> tuple[int, int]:
        return -int(math.floor(self.b_minus * R + 1e-9)), int(math.floor(self.b_plus * R + 1e-9))

    def contains(self, points, R):
        pts = np.asarray(points).reshape(len(points), -1)
        lo, hi = self.bounds(R)
        return (pts[:, 0] >= lo) & (pts[:, 0] <= hi)

    def domain(self, R, d=1):
        if d != 1:
            raise ValueError("Segment1D lives in d = 1")
        lo, hi = self.bounds(R)
        return np.arange(lo, hi + 1, dtype=np.int64)[:, None]

    def describe(self):
        return {"kind": "segment", "b_minus": self.b_minus, "b_plus": self.b_plus}


@dataclass(frozen=True)
class ExplicitList(Exhaustion):
    """Explicit finite sets; index R selects ``sets[R]``."""
    sets: tuple

    def __init__(self, sets):
        norm_sets = tuple(tuple(sorted(as_point(p) for p in s)) for s in sets)
        for a, b in zip(norm_sets, norm_sets[1:]):
            if not set(a) <= set(b):
                raise ValueError("explicit exhaustion sets must be nested")
        object.__setattr__(self, "sets", norm_sets)

    def _set(self, R):
        R = int(R)
        if not 0 <= R < len(self.sets):
            raise IndexError(f"exhaustion index {R} out of range")
        return self.sets[R]

    def contains(self, points, R):
        s = set(self._set(R))
        return np.array([tuple(int(c) for c in np.atleast_1d(p)) in s for p in points])

    def domain(self, R, d=None):
        s = self._set(R)
        if d is not None and s and len(s[0]) != d:
            raise ValueError("dimension mismatch with explicit sets")
        return np.asarray(s, dtype=np.int64).reshape(len(s), -1)

    def describe(self):
        return {"kind": "explicit", "sets": [[list(p) for p in s] for s in self.sets]}


def parse_exhaustion(spec: str | dict) -> Exhaustion:
    """``ball``, ``halfspace[:axis,sign[,factor]]``, ``segment:b_minus,b_plus``."""
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "ball":
            return Ball()
        if kind == "halfspace":
            return BallPlusHalfSpace(int(spec.get("axis", 0)), int(spec.get("sign", -1)),
                                     float(spec.get("factor", 8.0)))
        if kind == "segment":
            return Segment1D(float(spec["b_minus"]), float(spec["b_plus"]))
        if kind == "explicit":
            return ExplicitList(spec["sets"])
        raise ValueError(f"unknown exhaustion kind {kind!r}")
    parts = spec.split(":")
    head = parts[0].lower()
    if head == "ball":
        return Ball()
    if head == "halfspace":
        if len(parts) == 1:
            return BallPlusHalfSpace()
        vals = parts[1].split(",")
        factor = float(vals[2]) if len(vals) > 2 else 8.0
        return BallPlusHalfSpace(int(vals[0]), int(vals[1]), factor)
    if head == "segment":
        a, b = parts[1].split(",")
        return Segment1D(float(a), float(b))
    raise ValueError(f"unknown exhaustion spec {spec!r}")


# ---------------------------------------------------------------------------
# escape set and trapping

def in_escape_set(k: KillingField, x, search_radius: float) -> bool:
    """Breadth-first search for a path from x to |y| >= search_radius with k < 1."""
    start = as_point(x)
    if norm(start) > search_radius:
        raise ValueError("search_radius must be >= |x|")
    if k(start) >= 1.0:
        return False
    r2 = search_radius * search_radius
    seen = {start}
    queue = deque([start])
    while queue:
        p = queue.popleft()
        if sum(c * c for c in p) >= r2:
            return True
        for q in neighbors(p):
            if q in seen:
                continue
            seen.add(q)
            if k(q) < 1.0:
                queue.append(q)
    return False


TRAPPED, NOT_TRAPPED, INCONCLUSIVE = "Trapped", "NotTrapped", "Inconclusive"


def _unit_sphere_area(d: int) -> float:
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def trapping_partial_sums(k: KillingField, d: int, cutoff: float, lattice_radius: float = 24.0,
                          points_per_octave: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Partial sums S_M of |x|^(2-d) k(x) over |x| <= M on a geometric grid of M.

    Exact lattice sums up to ``lattice_radius``; beyond it radial fields are
    integrated against the continuum shell volume, fields with bounded support
    contribute nothing.
    """
    d = check_dim(d)
    m0 = min(float(cutoff), lattice_radius)
    pts = ball_points(m0, d)
    rad = _radii(pts)
    nz = rad > 0
    weights = np.zeros(len(pts))
    weights[nz] = rad[nz] ** (2 - d) * k.evaluate(pts[nz])
    n_oct = max(1, int(math.ceil(math.log2(max(cutoff, 2.0)))))
    grid = np.unique(np.concatenate([
        2.0 ** (np.arange(points_per_octave * n_oct + 1) / points_per_octave),
        [cutoff]]))
    grid = grid[grid <= cutoff]
    sums = np.empty(len(grid))
    prof = k.radial_profile()
    supp = k.support_radius()
    if prof is None and (supp is None or supp > m0):
        raise ValueError("non-radial field with support beyond the lattice window")
    area = _unit_sphere_area(d)
    base = weights.sum()
    # continuum tail: d S = area * r^(d-1) * r^(2-d) k(r) dr = area * r k(r) dr
    if prof is not None and cutoff > m0:
        t = np.geomspace(m0, cutoff, 4000)
        integrand = area * t * prof(t)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(t))])
    for i, M in enumerate(grid):
        if M <= m0:
            sums[i] = weights[rad <= M + 1e-9].sum()
        elif prof is None:
            sums[i] = base
        else:
            sums[i] = base + np.interp(M, t, cum)
    return grid, sums


def trapping_classifier(k: KillingField, d: int, cutoff: float = 1e12) -> str:
    """Classify a killing field as Trapped / NotTrapped / Inconclusive.

    d <= 2: any field that is not identically zero traps the recurrent walk.
    d >= 3: the shell increments of the partial sums are fitted on a log-log
    scale over the last two decades below the cutoff; a slope above -0.1
    indicates divergence (logarithmic or faster), a stable slope below -0.2
    indicates convergence.
    """
    d = check_dim(d)
    if d <= 2:
        return NOT_TRAPPED if k.is_zero() else TRAPPED
    if k.is_zero():
        return NOT_TRAPPED
    supp = k.support_radius()
    if supp is not None and supp < cutoff:
        # finite support, and k < 1 escapes exist beyond it: the sum is finite
        return NOT_TRAPPED
    grid, sums = trapping_partial_sums(k, d, cutoff)
    inc = np.diff(sums)
    mid = np.sqrt(grid[1:] * grid[:-1])
    ok = inc > 0
    if ok.sum() < 8:
        return INCONCLUSIVE
    lm, li = np.log(mid[ok]), np.log(inc[ok])
    top = lm.max()
    late = lm >= top - math.log(100.0)
    early = (lm >= top - math.log(1e4)) & (lm < top - math.log(100.0))
    s_late = np.polyfit(lm[late], li[late], 1)[0]
    # increments per geometric step ~ M^slope; divergent iff slope >= 0 asymptotically
    if s_late > -0.1:
        return TRAPPED
    if early.sum() >= 4:
        s_early = np.polyfit(lm[early], li[early], 1)[0]
        if s_late < -0.2 and abs(s_late - s_early) < 0.05:
            return NOT_TRAPPED
    elif s_late < -0.2:
        return NOT_TRAPPED
    return INCONCLUSIVE


# ---------------------------------------------------------------------------
# randomness and estimates

@dataclass(frozen=True)
class RandomStream:
    """Reproducible random stream identified by (seed, stream_id)."""
    seed: int = 0
    stream_id: int = 0

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(int(self.seed) % 2**64, spawn_key=(int(self.stream_id),))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def kernel_seed(self) -> int:
        """32-bit seed for compiled kernels that keep their own generator."""
        return int(self.seed_sequence().generate_state(1, dtype=np.uint32)[0])

    def child(self, i: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_id * 1_000_003 + 1 + int(i))


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int
    seed: int | None = None
    stream_id: int | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("an estimate needs at least one sample")
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")

    @classmethod
    def from_samples(cls, samples, stream: RandomStream | None = None, **info) -> "Estimate":
        x = np.asarray(samples, dtype=float)
        n = len(x)
        sd = float(x.std(ddof=1)) if n > 1 else 0.0
        return cls(float(x.mean()), sd / math.sqrt(n), n,
                   None if stream is None else stream.seed,
                   None if stream is None else stream.stream_id, dict(info))

    @classmethod
    def from_counts(cls, hits: int, n: int, stream: RandomStream | None = None, **info) -> "Estimate":
        """Bernoulli estimate; stderr uses the sample standard deviation."""
        p = hits / n
        var = p * (1 - p) * n / (n - 1) if n > 1 else 0.0
        return cls(p, math.sqrt(var / n), n,
                   None if stream is None else stream.seed,
                   None if stream is None else stream.stream_id, dict(info))

    def zscore(self, other: "Estimate | float") -> float:
        if isinstance(other, Estimate):
            s = math.hypot(self.stderr, other.stderr)
            diff = self.mean - other.mean
        else:
            s = self.stderr
            diff = self.mean - float(other)
        if s == 0:
            return 0.0 if diff == 0 else math.inf
        return abs(diff) / s
