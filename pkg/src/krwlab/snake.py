"""Galton-Watson trees, tree-indexed walks and the infinite snake.

Two samplers live here.  The *full* samplers build whole trees breadth first
(used for export, for the conditioned snake, and as a reference).  The *lazy*
sampler answers one question, "does the tree-indexed walk ever visit 0?",
without building the tree: a node whose label is at L1 distance D from 0 can
only matter if its subtree has height >= D, so every node carries an interval
[lo, hi) known to contain its subtree height, and the height law of a GW tree
(G(h) = P[height >= h], G(h+1) = 1 - f(1 - G(h)) with f the offspring pgf)
lets us sample relevance and the conditioned offspring exactly.  Irrelevant
subtrees are discarded unexamined, which makes the hit probability cheap to
estimate far from the origin where trees are large but hits are rare.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np

from . import report
from .core import (Ball, Estimate, Exhaustion, RadialProfile, RandomStream, as_point, ball_points,
                   check_dim, norm, symmetry_class, unit_steps)

log = logging.getLogger(__name__)

HINF = np.int64(2**62)          # "height unbounded"
HMAX_DEFAULT = 1 << 18          # size of the tabulated height tail

# kernel outcome codes
MISS, HIT, CAPPED = 0, 1, -1
ESCAPED, KILLED, INCONCLUSIVE = 1, 0, -1


# ---------------------------------------------------------------------------
# offspring laws

class OffspringLaw:
    """Offspring distribution on {0, 1, ..., n_max} (or the Geometric(1/2) law).

    Critical laws (mean 1, not the point mass at 1) are required unless
    ``critical=False``, which exists only for the degenerate point-bush law
    ``delta_0`` used to reduce the snake to a plain walk.
    """

    GEOM_TRUNC = 64   # tail beyond this index is below 2^-65

    def __init__(self, pmf, name: str | None = None, critical: bool = True, _exact=None):
        p = np.asarray(pmf, dtype=float)
        if p.ndim != 1 or len(p) == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("offspring pmf must be a finite nonnegative vector")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"offspring pmf sums to {p.sum():.15g}, not 1")
        if len(p) > 1 and p[1] >= 1.0 - 1e-15:
            raise ValueError("mu = delta_1 is degenerate: every tree is an infinite line")
        self.pmf = p
        self.name = name or "finite"
        self._exact = _exact
        m = float(np.dot(np.arange(len(p)), p))
        if critical and abs(m - 1.0) > 1e-9:
            raise ValueError(f"offspring law has mean {m:.12g}; a critical law (mean 1) is required")
        self.critical = critical

    @classmethod
    def geometric(cls) -> "OffspringLaw":
        """mu(i) = 2^-(i+1)."""
        n = cls.GEOM_TRUNC
        p = 0.5 ** np.arange(1, n + 2)
        p[-1] += 1.0 - p.sum()   # fold the (2^-65) tail into the last atom
        return cls(p, name="geometric", _exact="geometric")

    @classmethod
    def binary(cls) -> "OffspringLaw":
        return cls([0.5, 0.0, 0.5], name="binary")

    @classmethod
    def point_bush(cls) -> "OffspringLaw":
        """delta_0: every bush is a single vertex (not critical; reduction tests only)."""
        return cls([1.0], name="delta0", critical=False)

    @classmethod
    def parse(cls, spec) -> "OffspringLaw":
        if isinstance(spec, OffspringLaw):
            return spec
        if isinstance(spec, dict):
            n = max(int(i) for i in spec)
            p = np.zeros(n + 1)
            for i, v in spec.items():
                p[int(i)] = float(v)
            return cls(p)
        s = str(spec).strip().lower()
        if s in ("geometric", "geom", "geometric(1/2)"):
            return cls.geometric()
        if s in ("binary", "0,2"):
            return cls.binary()
        if s in ("delta0", "point"):
            return cls.point_bush()
        if s.startswith("pmf:"):
            return cls([float(v) for v in s[4:].split(",")])
        raise ValueError(f"unknown offspring law {spec!r}")

    def describe(self) -> dict:
        if self._exact == "geometric":
            return {"kind": "geometric"}
        return {"kind": "pmf", "pmf": [float(v) for v in self.pmf]}

    @property
    def is_geometric(self) -> bool:
        return self._exact == "geometric"

    def prob(self, i: int) -> float:
        if self._exact == "geometric":
            return 0.5 ** (i + 1) if i >= 0 else 0.0
        return float(self.pmf[i]) if 0 <= i < len(self.pmf) else 0.0

    def size_biased(self, i: int) -> float:
        """mu*(i) = i mu(i)."""
        return i * self.prob(i)

    @property
    def mean(self) -> float:
        return 1.0 if self._exact == "geometric" else float(np.dot(np.arange(len(self.pmf)), self.pmf))

    @property
    def variance(self) -> float:
        if self._exact == "geometric":
            return 2.0
        i = np.arange(len(self.pmf))
        return float(np.dot(i * i, self.pmf) - self.mean ** 2)

    @property
    def root_pmf(self) -> np.ndarray:
        """Law of the number of non-spine children of a spine vertex: (i+1) mu(i+1)."""
        if not self.critical:
            return np.array([1.0])
        i = np.arange(1, len(self.pmf))
        q = i * self.pmf[1:]
        return q / q.sum()

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.pmf)
        c[-1] = 1.0
        return c

    @property
    def root_cdf(self) -> np.ndarray:
        c = np.cumsum(self.root_pmf)
        c[-1] = 1.0
        return c

    def pgf(self, s):
        return np.polynomial.polynomial.polyval(s, self.pmf)

    def height_tail(self, hmax: int = HMAX_DEFAULT) -> np.ndarray:
        """G[h] = P[height of a GW tree >= h] for h = 0..hmax."""
        return _height_tail_cached(self._key(), hmax)

    def _key(self):
        return (self._exact, tuple(self.pmf.tolist()))

    def __repr__(self):
        return f"OffspringLaw({self.name})"


@lru_cache(maxsize=8)
def _height_tail_cached(key, hmax):
    exact, pmf = key
    if exact == "geometric":
        return 1.0 / (np.arange(hmax + 1, dtype=float) + 1.0)
    return _height_tail(np.asarray(pmf), hmax)


@numba.njit(cache=True)
def _height_tail(pmf, hmax):
    G = np.empty(hmax + 1)
    G[0] = 1.0
    for h in range(hmax):
        g = G[h]
        acc = 0.0
        if g >= 1.0:
            for c in range(1, pmf.shape[0]):
                acc += pmf[c]
        else:
            lg = math.log1p(-g)
            for c in range(1, pmf.shape[0]):
                # 1 - (1-g)^c, accurate for small g
                acc += pmf[c] * (-math.expm1(c * lg))
        G[h + 1] = acc
    return G


# ---------------------------------------------------------------------------
# labelled trees

@dataclass
class LabeledTree:
    """Rooted tree stored by parent pointers in breadth-first order (root = 0)."""
    parent: np.ndarray
    labels: np.ndarray | None = None
    capped: bool = False
    spine: np.ndarray | None = None     # node indices u_0, u_1, ...
    bush: np.ndarray | None = None      # bush index per node (-1 if none)

    @property
    def size(self) -> int:
        return len(self.parent)

    def children(self, i: int) -> np.ndarray:
        return np.nonzero(self.parent == i)[0]

    def root_degree(self) -> int:
        return int(np.count_nonzero(self.parent == 0))

    def depth(self) -> np.ndarray:
        dep = np.zeros(self.size, dtype=np.int64)
        for i in range(1, self.size):
            dep[i] = dep[self.parent[i]] + 1
        return dep

    def check(self) -> None:
        """Raise if the parent structure or the walk increments are malformed."""
        if self.size == 0 or self.parent[0] != -1:
            raise ValueError("node 0 must be the root")
        if np.any(self.parent[1:] < 0) or np.any(self.parent[1:] >= np.arange(1, self.size)):
            raise ValueError("parents must precede children")
        if self.labels is not None and self.size > 1:
            step = self.labels[1:] - self.labels[self.parent[1:]]
            if np.any(np.abs(step).sum(axis=1) != 1):
                raise ValueError("a parent-child displacement is not a unit vector")

    def contains_label(self, point) -> bool:
        if self.labels is None:
            raise ValueError("tree is unlabelled")
        p = np.asarray(point)
        return bool(np.any(np.all(self.labels == p, axis=1)))

    def to_edge_list(self, path=None) -> str:
        """Text export: a header, then one line 'node parent x1 .. xd [spine bush]' per node."""
        d = 0 if self.labels is None else self.labels.shape[1]
        cols = ["node", "parent"] + [f"x{i + 1}" for i in range(d)]
        extra = self.bush is not None
        if extra:
            cols += ["spine", "bush"]
        on_spine = np.zeros(self.size, dtype=bool)
        if self.spine is not None:
            on_spine[self.spine] = True
        lines = ["# " + " ".join(cols)]
        for i in range(self.size):
            row = [str(i), str(int(self.parent[i]))]
            if d:
                row += [str(int(v)) for v in self.labels[i]]
            if extra:
                row += [str(int(on_spine[i])), str(int(self.bush[i]))]
            lines.append(" ".join(row))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


@numba.njit(cache=True)
def _draw(cdf):
    u = np.random.random()
    c = np.searchsorted(cdf, u, side="right")
    return min(c, cdf.shape[0] - 1)


@numba.njit(cache=True)
def _gw_parents(cdf, root_cdf, multitype, cap, seed):
    np.random.seed(seed)
    parent = np.empty(cap, dtype=np.int64)
    parent[0] = -1
    n = 1
    head = 0
    capped = False
    while head < n:
        c = _draw(root_cdf) if (multitype and head == 0) else _draw(cdf)
        for _ in range(c):
            if n >= cap:
                capped = True
                break
            parent[n] = head
            n += 1
        if capped:
            break
        head += 1
    return parent[:n].copy(), capped


@numba.njit(cache=True)
def _gw_sizes(cdf, root_cdf, multitype, cap, samples, seed):
    # sizes and root degrees of many trees; size == cap marks a capped tree
    np.random.seed(seed)
    sizes = np.empty(samples, dtype=np.int64)
    roots = np.empty(samples, dtype=np.int64)
    sub = np.empty(samples, dtype=np.int64)   # size of the first root child's subtree (-1 if none)
    for s in range(samples):
        pending = _draw(root_cdf) if multitype else _draw(cdf)
        roots[s] = pending
        n = 1 + pending
        if multitype and pending > 0:
            # first root child subtree sized separately
            m = 1
            todo = 1
            while todo > 0 and m < cap:
                c = _draw(cdf)
                todo += c - 1
                m += c
            sub[s] = min(m, cap)
            n += m - 1
            pending -= 1
        else:
            sub[s] = -1
        while pending > 0 and n < cap:
            c = _draw(cdf)
            pending += c - 1
            n += c
        sizes[s] = min(n, cap)
    return sizes, roots, sub


def sample_gw_tree(law: OffspringLaw, node_cap: int = 10**7, stream: RandomStream | None = None,
                   multitype: bool = False) -> LabeledTree:
    """Breadth-first critical GW tree; ``capped`` is set (not raised) at the node cap."""
    if node_cap < 1:
        raise ValueError("node_cap must be >= 1")
    stream = stream or RandomStream(0)
    parent, capped = _gw_parents(law.cdf, law.root_cdf, multitype, int(node_cap), stream.kernel_seed())
    return LabeledTree(parent, capped=bool(capped))


def sample_multitype_tree(law: OffspringLaw, node_cap: int = 10**7,
                          stream: RandomStream | None = None) -> LabeledTree:
    """Root has i children with probability mu*(i+1); every other vertex uses mu."""
    return sample_gw_tree(law, node_cap, stream, multitype=True)


def tree_size_sample(law: OffspringLaw, samples: int, node_cap: int = 10**6,
                     stream: RandomStream | None = None, multitype: bool = False):
    """Vectorised sizes, root degrees and first-child subtree sizes of many trees."""
    stream = stream or RandomStream(0)
    return _gw_sizes(law.cdf, law.root_cdf, multitype, int(node_cap), int(samples), stream.kernel_seed())


@numba.njit(cache=True)
def _walk_labels(parent, start, seed):
    np.random.seed(seed)
    n = parent.shape[0]
    d = start.shape[0]
    lab = np.empty((n, d), dtype=np.int64)
    lab[0] = start
    for i in range(1, n):
        lab[i] = lab[parent[i]]
        j = np.random.randint(2 * d)
        lab[i, j // 2] += 1 if j % 2 == 0 else -1
    return lab


def index_walk(tree: LabeledTree, start, d: int, stream: RandomStream | None = None) -> LabeledTree:
    """Label the root with ``start`` and give each edge an independent uniform unit step."""
    check_dim(d)
    stream = stream or RandomStream(0)
    s = np.asarray(as_point(start, d), dtype=np.int64)
    lab = _walk_labels(tree.parent, s, stream.kernel_seed())
    return LabeledTree(tree.parent, lab, tree.capped, tree.spine, tree.bush)


# ---------------------------------------------------------------------------
# lazy hit-the-origin sampler

@numba.njit(cache=True)
def _G(G, h):
    if h >= HINF:
        return 0.0
    return G[h]


@numba.njit(cache=True)
def _step(lab, d):
    j = np.random.randint(2 * d)
    lab[j // 2] += 1 if j % 2 == 0 else -1


@numba.njit(cache=True)
def _l1(v):
    s = 0
    for c in v:
        s += abs(c)
    return s


@numba.njit(cache=True)
def _lazy_hits(root, pmf, geo, root_cdf, G, cap, st_lab, st_lo, st_hi, lab):
    """1 if the multitype-tree-indexed walk from ``root`` visits 0, 0 if not, -1 if capped.

    ``cap`` bounds the number of relevant vertices expanded.  ``geo`` marks the
    Geometric(1/2) law, whose conditioned offspring normaliser has a closed form.
    """
    d = root.shape[0]
    if _l1(root) == 0:
        return HIT
    hmax = G.shape[0] - 1
    nmax = pmf.shape[0] - 1
    top = 0
    c = _draw(root_cdf)
    for _ in range(c):
        st_lab[top] = root
        _step(st_lab[top], d)
        st_lo[top] = 0
        st_hi[top] = HINF
        top += 1
    expanded = 0
    while top > 0:
        top -= 1
        lab[:] = st_lab[top]
        lo = st_lo[top]
        hi = st_hi[top]
        D = _l1(lab)
        if D == 0:
            return HIT
        m = max(D, lo)
        if m >= hi:
            continue
        if m > hmax or (hi < HINF and hi > hmax):
            return CAPPED
        Ghi = _G(G, hi)
        den = G[lo] - Ghi
        p = (G[m] - Ghi) / den if den > 0 else 0.0
        if np.random.random() >= p:
            continue
        # relevant: height in [m, hi)
        expanded += 1
        if expanded > cap or top + nmax >= st_lo.shape[0]:
            return CAPPED
        Gb = _G(G, hi - 1) if hi < HINF else 0.0       # P[child height >= hi-1]
        Ga = G[m - 1]                                     # P[child height >= m-1]
        Fa = 1.0 - Ga
        Fb = 1.0 - Gb
        q = (Ga - Gb) / Fb                                # P[child is "mid" | height < hi-1]
        # P[c children] is proportional to mu(c) (Fb^c - Fa^c) = mu(c) (Fb - Fa) S_c with
        # S_1 = 1, S_{c+1} = Fb S_c + Fa^c; the common factor (Fb - Fa) is dropped
        if geo:
            tot = 1.0 / ((1.0 + Gb) * (1.0 + Ga))
        else:
            tot = 0.0
            sc = 1.0
            apow = 1.0
            for cc in range(1, nmax + 1):
                tot += pmf[cc] * sc
                apow *= Fa
                sc = Fb * sc + apow
        u = np.random.random() * tot
        acc = 0.0
        nc = 0
        sc = 1.0
        apow = 1.0
        for cc in range(1, nmax + 1):
            w = pmf[cc] * sc
            if w > 0:
                nc = cc
            acc += w
            if u < acc:
                break
            apow *= Fa
            sc = Fb * sc + apow
        # index of the first mid child
        if q >= 1.0:
            J = 0
        else:
            lq = math.log1p(-q)
            A = -math.expm1(nc * lq)
            J = int(math.floor(math.log1p(-np.random.random() * A) / lq))
            J = min(max(J, 0), nc - 1)
        for j in range(nc):
            mid = j == J or (j > J and np.random.random() < q)
            if mid:
                clo, chi = m - 1, hi - 1 if hi < HINF else HINF
            else:
                clo, chi = 0, m - 1
                if D - 1 >= chi:
                    continue      # too short to reach 0 from distance >= D-1
            st_lab[top] = lab
            _step(st_lab[top], d)
            st_lo[top] = clo
            st_hi[top] = chi
            top += 1
    return MISS


def _buffers(law: OffspringLaw, d: int, cap: int):
    size = int(min(cap, 10**7)) + 4 * len(law.pmf) + 16
    return (np.empty((size, d), dtype=np.int64), np.empty(size, dtype=np.int64),
            np.empty(size, dtype=np.int64), np.empty(d, dtype=np.int64))


@numba.njit(cache=True)
def _lazy_many(starts, pmf, geo, root_cdf, G, cap, seed, st_lab, st_lo, st_hi, scratch):
    np.random.seed(seed)
    out = np.empty(starts.shape[0], dtype=np.int8)
    for s in range(starts.shape[0]):
        out[s] = _lazy_hits(starts[s], pmf, geo, root_cdf, G, cap, st_lab, st_lo, st_hi, scratch)
    return out


@numba.njit(cache=True)
def _full_hits(root, cdf, root_cdf, cap, seed_unused, st_lab):
    # reference sampler: expand the whole tree depth first, stop at the first 0
    d = root.shape[0]
    if _l1(root) == 0:
        return HIT
    top = 0
    c = _draw(root_cdf)
    for _ in range(c):
        st_lab[top] = root
        _step(st_lab[top], d)
        top += 1
    n = 1
    while top > 0:
        top -= 1
        lab = st_lab[top].copy()
        n += 1
        if _l1(lab) == 0:
            return HIT
        if n > cap:
            return CAPPED
        c = _draw(cdf)
        if top + c >= st_lab.shape[0]:
            return CAPPED
        for _ in range(c):
            st_lab[top] = lab
            _step(st_lab[top], d)
            top += 1
    return MISS


@numba.njit(cache=True)
def _full_many(starts, cdf, root_cdf, cap, seed, st_lab):
    np.random.seed(seed)
    out = np.empty(starts.shape[0], dtype=np.int8)
    for s in range(starts.shape[0]):
        out[s] = _full_hits(starts[s], cdf, root_cdf, cap, 0, st_lab)
    return out


def _hit_outcomes(starts: np.ndarray, law: OffspringLaw, node_cap: int, stream: RandomStream,
                  method: str = "lazy") -> np.ndarray:
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    d = starts.shape[1]
    if method == "lazy":
        G = law.height_tail()
        lab, lo, hi, scratch = _buffers(law, d, node_cap)
        return _lazy_many(starts, law.pmf, law.is_geometric, law.root_cdf, G, int(node_cap), stream.kernel_seed(),
                          lab, lo, hi, scratch)
    if method == "full":
        lab = np.empty((int(min(node_cap, 10**7)) * max(2, len(law.pmf)), d), dtype=np.int64)
        return _full_many(starts, law.cdf, law.root_cdf, int(node_cap), stream.kernel_seed(), lab)
    raise ValueError(f"unknown method {method!r}")


def _interval_estimate(out: np.ndarray, stream, cap_policy: str = "interval", **info) -> Estimate:
    n = len(out)
    hits = int(np.count_nonzero(out == HIT))
    capped = int(np.count_nonzero(out == CAPPED))
    lower, upper = hits / n, (hits + capped) / n
    mean = 0.5 * (lower + upper) if cap_policy == "interval" else lower
    se = math.sqrt(max(mean * (1 - mean), 0.0) / max(n - 1, 1))
    return Estimate(mean, se, n, getattr(stream, "seed", None), getattr(stream, "stream_id", None),
                    dict(info, hits=hits, capped=capped, lower=lower, upper=upper,
                         interval=(upper - lower) > se))


def estimate_k(x, law: OffspringLaw, d: int, samples: int, node_cap: int = 10**7,
               stream: RandomStream | None = None, method: str = "lazy",
               cap_policy: str = "interval") -> Estimate:
    """Monte Carlo of P_x[the walk indexed by a multitype GW tree visits 0].

    Capped samples count as hits in ``info['upper']`` and misses in
    ``info['lower']``; the mean is the midpoint, or the lower end under
    ``cap_policy="miss"``.
    """
    check_dim(d)
    stream = stream or RandomStream(0)
    p = np.asarray(as_point(x, d), dtype=np.int64)
    if not p.any():
        return Estimate(1.0, 0.0, samples, stream.seed, stream.stream_id,
                        {"hits": samples, "capped": 0, "lower": 1.0, "upper": 1.0, "interval": False})
    starts = np.broadcast_to(p, (samples, d))
    out = _hit_outcomes(starts, law, node_cap, stream, method)
    return _interval_estimate(out, stream, cap_policy, x=tuple(int(v) for v in p), method=method,
                              node_cap=node_cap)


# ---------------------------------------------------------------------------
# killing tables

@dataclass
class KillingTable:
    """Tabulated hit probabilities: exact symmetry classes near 0 plus radial shells.

    Shell j collects the lattice points with r_j - 1/2 < |x| <= r_j + 1/2 and
    its value is the shell average.  Off-grid values interpolate linearly in
    |x| with constant extrapolation.
    """
    d: int
    exact_radius: float
    classes: list            # representative points (sorted abs coordinates)
    class_values: np.ndarray
    class_stderr: np.ndarray
    class_n: np.ndarray
    radii: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    law: dict = field(default_factory=dict)

    def as_killing(self) -> RadialProfile:
        exact = tuple((tuple(c), float(v)) for c, v in zip(self.classes, self.class_values))
        return RadialProfile(tuple(float(r) for r in self.radii), tuple(float(v) for v in self.values),
                             exact=exact)

    def rows(self):
        out = [(norm(c), v, s, n, " ".join(map(str, c)))
               for c, v, s, n in zip(self.classes, self.class_values, self.class_stderr, self.class_n)]
        out += [(r, v, s, n, "") for r, v, s, n in zip(self.radii, self.values, self.stderr, self.counts)]
        return out

    def to_csv(self, path):
        return report.write_csv(path, ["radius", "k_hat", "stderr", "n", "point"], self.rows())

    # flattened cell representation used by the compiled walk
    def cells(self):
        val = np.concatenate([self.values, self.class_values]).astype(float)
        se = np.concatenate([self.stderr, self.class_stderr]).astype(float)
        return val, se

    def exact_box(self):
        """Dense index over [-r, r]^d mapping a point to its class cell (or -1)."""
        r = int(math.floor(self.exact_radius))
        side = 2 * r + 1
        box = -np.ones((side,) * self.d, dtype=np.int32)
        pts = ball_points(self.exact_radius, self.d)
        lookup = {tuple(c): i for i, c in enumerate(self.classes)}
        nr = len(self.radii)
        for p in pts:
            box[tuple(p + r)] = nr + lookup[symmetry_class(p)]
        return box.ravel(), r


def _classes_within(radius: float, d: int) -> list[tuple]:
    pts = ball_points(radius, d)
    seen = sorted({symmetry_class(p) for p in pts}, key=lambda c: (sum(v * v for v in c), c))
    return seen


def _orbit_size(c: tuple) -> int:
    d = len(c)
    perms = math.factorial(d)
    for v in set(c):
        perms //= math.factorial(c.count(v))
    return perms * 2 ** sum(1 for v in c if v != 0)


@numba.njit(cache=True)
def _shell_points(d, rlo, rhi, n, seed):
    # uniform lattice points with rlo < |x| <= rhi, by rejection from the cube
    np.random.seed(seed)
    b = int(math.floor(rhi))
    out = np.empty((n, d), dtype=np.int64)
    lo2, hi2 = rlo * rlo, rhi * rhi
    k = 0
    while k < n:
        s2 = 0
        for j in range(d):
            v = np.random.randint(-b, b + 1)
            out[k, j] = v
            s2 += v * v
        if lo2 < s2 <= hi2 + 1e-9:
            k += 1
    return out


@numba.njit(cache=True)
def _shell_counts(d, edges):
    # number of lattice points with edges[j] < |x| <= edges[j+1]
    b = int(math.floor(edges[-1]))
    counts = np.zeros(edges.shape[0] - 1, dtype=np.int64)
    side = 2 * b + 1
    total = side ** d
    e2 = edges * edges
    for idx in range(total):
        t = idx
        s2 = 0
        for _ in range(d):
            v = t % side - b
            t //= side
            s2 += v * v
        if s2 <= e2[0] or s2 > e2[-1] + 1e-9:
            continue
        j = np.searchsorted(e2, s2 - 1e-9) - 1
        counts[j] += 1
    return counts


def tabulate_k(law: OffspringLaw, d: int, r_max: float, samples: int, exact_radius: float = 4.0,
               min_per_cell: int = 20000, node_cap: int = 10**7,
               stream: RandomStream | None = None, cap_policy: str = "interval") -> KillingTable:
    """Build a killing table of estimated hit probabilities out to radius ``r_max``.

    The sample budget is shared in proportion to the number of lattice points
    in each shell (or symmetry class), with a floor of ``min_per_cell``.
    """
    check_dim(d)
    stream = stream or RandomStream(0)
    classes = _classes_within(exact_radius, d)
    nshell = max(1, int(math.ceil(r_max - exact_radius)))
    radii = exact_radius + 0.5 + np.arange(nshell)
    edges = np.concatenate([[exact_radius], radii + 0.5])
    shell_pop = _shell_counts(d, edges.astype(float))
    class_pop = np.array([_orbit_size(c) for c in classes])
    total_pop = shell_pop.sum() + class_pop.sum()
    rate = samples / total_pop
    cv, cs, cn = [], [], []
    for i, c in enumerate(classes):
        n = max(min_per_cell, int(round(rate * class_pop[i])))
        if not any(c):
            cv.append(1.0), cs.append(0.0), cn.append(n)
            continue
        e = estimate_k(c, law, d, n, node_cap, stream.child(i), cap_policy=cap_policy)
        cv.append(e.mean), cs.append(e.stderr), cn.append(n)
    sv, ss, sn = [], [], []
    for j in range(nshell):
        n = max(min_per_cell, int(round(rate * shell_pop[j])))
        sub = stream.child(10**6 + j)
        pts = _shell_points(d, float(edges[j]), float(edges[j + 1]), n, sub.kernel_seed())
        out = _hit_outcomes(pts, law, node_cap, sub.child(1))
        e = _interval_estimate(out, sub, cap_policy)
        sv.append(e.mean), ss.append(e.stderr), sn.append(n)
    return KillingTable(d, float(exact_radius), classes, np.array(cv), np.array(cs), np.array(cn),
                        radii, np.array(sv), np.array(ss), np.array(sn),
                        dict(law.describe(), node_cap=node_cap, cap_policy=cap_policy))


# ---------------------------------------------------------------------------
# exhaustions inside compiled loops

def _exhaustion_code(exhaustion: Exhaustion, R, d: int):
    """(kind, R^2, mask, offset, side): kind 0 is a ball test, kind 1 a dense mask."""
    if isinstance(exhaustion, Ball):
        return 0, float(R + 1e-9) ** 2, np.zeros(1, dtype=np.bool_), 0, 1
    pts = exhaustion.domain(R, d)
    b = int(np.abs(pts).max()) + 1
    side = 2 * b + 1
    if side ** d > 4 * 10**8:
        raise ValueError("exhaustion too large for a dense membership mask")
    mask = np.zeros((side,) * d, dtype=np.bool_)
    mask[tuple((pts + b).T)] = True
    return 1, 0.0, mask.ravel(), b, side


@numba.njit(cache=True)
def _inside(p, kind, R2, mask, off, side):
    if kind == 0:
        s2 = 0
        for v in p:
            s2 += v * v
        return s2 <= R2
    idx = 0
    for v in p:
        c = v + off
        if c < 0 or c >= side:
            return False
        idx = idx * side + c
    return mask[idx]


# ---------------------------------------------------------------------------
# snake escape

@numba.njit(cache=True)
def _snake_escape(x0, samples, kind, R2, mask, off, side, spine_cap, exit_bush, cap_as_miss,
                  pmf, geo, root_cdf, G, cap, seed, st_lab, st_lo, st_hi, scratch):
    np.random.seed(seed)
    d = x0.shape[0]
    out = np.empty(samples, dtype=np.int8)
    capped = np.zeros(samples, dtype=np.int32)
    s = np.empty(d, dtype=np.int64)
    for t in range(samples):
        s[:] = x0
        res = INCONCLUSIVE
        for i in range(spine_cap + 1):
            outside = not _inside(s, kind, R2, mask, off, side)
            if outside and not exit_bush:
                res = ESCAPED
                break
            if i == spine_cap:
                break
            h = _lazy_hits(s, pmf, geo, root_cdf, G, cap, st_lab, st_lo, st_hi, scratch)
            if h == CAPPED:
                capped[t] += 1
                if not cap_as_miss:
                    break
            elif h == HIT:
                res = KILLED
                break
            if outside:
                res = ESCAPED
                break
            _step(s, d)
        out[t] = res
    return out, capped


def _outcome_estimate(out, stream, capped=None, **info) -> Estimate:
    n = len(out)
    if capped is not None:
        info["capped_bushes"] = int(capped.sum())
        info["trials_with_capped_bush"] = int(np.count_nonzero(capped))
    esc = int(np.count_nonzero(out == ESCAPED))
    inc = int(np.count_nonzero(out == INCONCLUSIVE))
    lower, upper = esc / n, (esc + inc) / n
    mean = 0.5 * (lower + upper)
    se = math.sqrt(max(mean * (1 - mean), 0.0) / max(n - 1, 1))
    return Estimate(mean, se, n, stream.seed, stream.stream_id,
                    dict(info, escaped=esc, inconclusive=inc, killed=n - esc - inc,
                         lower=lower, upper=upper, interval=(upper - lower) > se))


def snake_escape_probability(x, law: OffspringLaw, d: int, exhaustion: Exhaustion, R, samples: int,
                             spine_cap: int = 10**7, node_cap: int = 10**7,
                             stream: RandomStream | None = None,
                             include_exit_bush: bool = False, cap_policy: str = "interval") -> Estimate:
    """P_x[the infinite snake reaches the complement of Lambda_R before 0].

    The spine walks step by step; at each spine vertex still inside Lambda_R the
    bush grafted there is checked for a visit to 0 before the spine moves on.
    The spine escapes at the first vertex outside Lambda_R; by default the bush
    at that vertex is not examined (``include_exit_bush=True`` examines it).

    A bush that reaches ``node_cap`` makes the trial Inconclusive under
    ``cap_policy="interval"``; under ``"miss"`` it counts as avoiding 0, which
    matches :func:`estimate_k` with the same policy.  Capped bushes are always
    counted in ``info``.
    """
    check_dim(d)
    if cap_policy not in ("interval", "miss"):
        raise ValueError("cap_policy must be 'interval' or 'miss'")
    p = as_point(x, d)
    if not any(p):
        raise ValueError("x must differ from 0")
    stream = stream or RandomStream(0)
    kind, R2, mask, off, side = _exhaustion_code(exhaustion, R, d)
    G = law.height_tail()
    lab, lo, hi, scratch = _buffers(law, d, node_cap)
    out, capped = _snake_escape(np.asarray(p, dtype=np.int64), int(samples), kind, R2, mask, off,
                                side, int(spine_cap), bool(include_exit_bush), cap_policy == "miss",
                                law.pmf, law.is_geometric, law.root_cdf, G, int(node_cap),
                                stream.kernel_seed(), lab, lo, hi, scratch)
    return _outcome_estimate(out, stream, capped, x=p, R=R, cap_policy=cap_policy, node_cap=node_cap)


# ---------------------------------------------------------------------------
# killed walk driven by a killing table

@numba.njit(cache=True)
def _table_kill(p, radii, cell_val, box, rb, nr, cells, wts):
    """Killing value at p; writes the (at most two) contributing cells and weights."""
    d = p.shape[0]
    inbox = True
    idx = 0
    side = 2 * rb + 1
    s2 = 0
    for v in p:
        s2 += v * v
        c = v + rb
        if c < 0 or c >= side:
            inbox = False
        else:
            idx = idx * side + c
    if inbox and rb >= 0:
        ci = box[idx]
        if ci >= 0:
            cells[0] = ci
            wts[0] = 1.0
            cells[1] = -1
            return cell_val[ci]
    r = math.sqrt(s2)
    n = radii.shape[0]
    if r <= radii[0]:
        cells[0] = 0
        wts[0] = 1.0
        cells[1] = -1
        return cell_val[0]
    if r >= radii[n - 1]:
        cells[0] = n - 1
        wts[0] = 1.0
        cells[1] = -1
        return cell_val[n - 1]
    j = np.searchsorted(radii, r) - 1
    t = (r - radii[j]) / (radii[j + 1] - radii[j])
    cells[0] = j
    wts[0] = 1.0 - t
    cells[1] = j + 1
    wts[1] = t
    return (1.0 - t) * cell_val[j] + t * cell_val[j + 1]


@numba.njit(cache=True)
def _krw_table_mc(x0, samples, kind, R2, mask, off, side, radii, cell_val, box, rb, step_cap,
                  weighted, seed):
    np.random.seed(seed)
    d = x0.shape[0]
    ncell = cell_val.shape[0]
    nr = radii.shape[0]
    vals = np.empty(samples)
    grad = np.zeros(ncell)          # sum over paths of d(weight)/d(cell value)
    acc = np.zeros(ncell)
    touched = np.empty(ncell, dtype=np.int64)
    seen = np.zeros(ncell, dtype=np.bool_)
    cells = np.empty(2, dtype=np.int64)
    wts = np.empty(2)
    s = np.empty(d, dtype=np.int64)
    for t in range(samples):
        s[:] = x0
        logw = 0.0
        alive = True
        nt = 0
        escaped = False
        for i in range(step_cap):
            if not _inside(s, kind, R2, mask, off, side):
                escaped = True
                break
            k = _table_kill(s, radii, cell_val, box, rb, nr, cells, wts)
            if weighted:
                if k >= 1.0:
                    alive = False
                    break
                logw += math.log1p(-k)
                for c in range(2):
                    ci = cells[c]
                    if ci < 0:
                        break
                    if not seen[ci]:
                        seen[ci] = True
                        touched[nt] = ci
                        nt += 1
                    acc[ci] -= wts[c] / (1.0 - k)
            else:
                if np.random.random() < k:
                    alive = False
                    break
            _step(s, d)
        if escaped and alive:
            w = math.exp(logw) if weighted else 1.0
        else:
            w = 0.0
        vals[t] = w if escaped or not alive else np.nan
        if weighted:
            for q in range(nt):
                ci = touched[q]
                if w > 0:
                    grad[ci] += w * acc[ci]
                acc[ci] = 0.0
                seen[ci] = False
    return vals, grad


def krw_escape_mc(table: KillingTable, x, exhaustion: Exhaustion, R, samples: int,
                  stream: RandomStream | None = None, weighted: bool = True,
                  step_cap: int = 10**7) -> Estimate:
    """Monte Carlo escape probability of the killed walk whose killing is ``table``.

    With ``weighted`` each simple-walk path to the exit contributes the product
    of (1 - k) along it (the expectation of the death coin flips), otherwise
    deaths are sampled.  The reported stderr combines the walk noise with the
    table noise propagated through the path-averaged sensitivity to each cell.
    """
    d = table.d
    p = np.asarray(as_point(x, d), dtype=np.int64)
    stream = stream or RandomStream(0)
    kind, R2, mask, off, side = _exhaustion_code(exhaustion, R, d)
    val, se = table.cells()
    box, rb = table.exact_box()
    vals, grad = _krw_table_mc(p, int(samples), kind, R2, mask, off, side, table.radii.astype(float),
                               val, box, rb, int(step_cap), bool(weighted), stream.kernel_seed())
    timed_out = int(np.count_nonzero(np.isnan(vals)))
    vals = np.nan_to_num(vals, nan=0.0)
    n = len(vals)
    mean = float(vals.mean())
    mc_se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    table_se = float(math.sqrt(np.sum((grad / n) ** 2 * se ** 2))) if weighted else 0.0
    return Estimate(mean, math.hypot(mc_se, table_se), n, stream.seed, stream.stream_id,
                    {"mc_stderr": mc_se, "table_stderr": table_se, "timed_out": timed_out,
                     "weighted": weighted})


# ---------------------------------------------------------------------------
# conditioned snake

@dataclass
class ConditionedSnake:
    spine: np.ndarray          # (n+1, d) labels s_0..s_n
    bushes: list               # LabeledTree per spine vertex s_0..s_{n-1}
    tries: np.ndarray          # rejection attempts per bush
    capped_rejections: int = 0

    def to_tree(self) -> LabeledTree:
        """Merge spine and bushes into one labelled tree (spine vertex i = bush root i)."""
        n = len(self.bushes)
        parents, labels, bush = [], [], []
        spine_idx = []
        offset = 0
        prev = -1
        for i in range(n + 1):
            if i < n:
                b = self.bushes[i]
                par = b.parent.copy()
                par[1:] += offset
                par[0] = prev
                lab = b.labels
            else:
                par = np.array([prev])
                lab = self.spine[n][None, :]
            spine_idx.append(offset)
            parents.append(par)
            labels.append(lab)
            bush.append(np.full(len(par), i))
            prev = offset
            offset += len(par)
        parent = np.concatenate(parents)
        # re-sort breadth-first is not needed; parents precede children by construction
        return LabeledTree(parent, np.concatenate(labels), False, np.array(spine_idx), np.concatenate(bush))


def sample_conditioned_snake(x, law: OffspringLaw, d: int, weight, table, n: int,
                             stream: RandomStream | None = None, node_cap: int = 10**5,
                             max_tries: int = 10**6, bushes: bool = True) -> ConditionedSnake:
    """Spine from the Doob kernel of (killing table, weight); bushes by rejection.

    ``table`` is a KillingTable or any KillingField.  Each bush at s_i is a
    multitype-tree-indexed walk redrawn until it avoids 0; trees that hit the
    node cap are redrawn too (the count is reported).
    """
    from .ratio import build_conditioned_kernel, sample_conditioned_path

    stream = stream or RandomStream(0)
    kill = table.as_killing() if isinstance(table, KillingTable) else table
    p = as_point(x, d)
    if not weight(p) > 0:
        raise ValueError(f"weight at {p} must be positive")
    kern = build_conditioned_kernel(kill, weight, d)
    spine = sample_conditioned_path(kern, p, n, rng=stream.child(0).generator())
    out_b, tries = [], np.zeros(n, dtype=np.int64)
    capped_rej = 0
    if bushes:
        sub = stream.child(1)
        j = 0
        for i in range(n):
            s = tuple(int(v) for v in spine[i])
            while True:
                tries[i] += 1
                if tries[i] > max_tries:
                    raise RuntimeError(f"bush rejection stalled at spine point {s}: "
                                       f"no 0-avoiding bush in {max_tries} draws")
                tree = sample_multitype_tree(law, node_cap, sub.child(j))
                j += 1
                if tree.capped:
                    capped_rej += 1
                    continue
                tree = index_walk(tree, s, d, sub.child(j))
                j += 1
                if not tree.contains_label((0,) * d):
                    break
            out_b.append(tree)
    return ConditionedSnake(spine, out_b, tries, capped_rej)


def spine_transition_counts(spine: np.ndarray) -> dict:
    """Counts of (from_point, step) pairs along a spine."""
    counts: dict = {}
    for a, b in zip(spine[:-1], spine[1:]):
        key = (tuple(int(v) for v in a), tuple(int(v) for v in b - a))
        counts[key] = counts.get(key, 0) + 1
    return counts


def sample_truncated_snake(x, law: OffspringLaw, d: int, n: int, stream: RandomStream | None = None,
                           node_cap: int = 10**5) -> LabeledTree:
    """Spine of length n (simple walk) with independent multitype bushes, for export."""
    stream = stream or RandomStream(0)
    rng = stream.child(0).generator()
    spine = np.empty((n + 1, d), dtype=np.int64)
    spine[0] = as_point(x, d)
    steps = unit_steps(d)
    for i in range(n):
        spine[i + 1] = spine[i] + steps[rng.integers(2 * d)]
    bs = []
    for i in range(n):
        t = sample_multitype_tree(law, node_cap, stream.child(2 * i + 1))
        bs.append(index_walk(t, spine[i], d, stream.child(2 * i + 2)))
    return ConditionedSnake(spine, bs, np.ones(n, dtype=np.int64)).to_tree()
