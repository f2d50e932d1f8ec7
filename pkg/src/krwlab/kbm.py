"""Killed planar Brownian motion by Euler steps with an exponential killing clock.

A path carries its position, elapsed time, accumulated hazard (trapezoid rule
on k along the path), an Exp(1) threshold, the unwrapped winding angle and the
Bessel clock R_t = int ds/|B_s|^2.  It dies at the first step where the hazard
reaches the threshold.  Brownian increments are exact at grid times; only the
hazard integral and the exit detection are discretised.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy import stats

from . import report
from .core import Constant, Estimate, KillingField, PowerLaw, RandomStream, Zero

log = logging.getLogger(__name__)

# path status codes
RUNNING, ESCAPED, DIED, TIMED_OUT = 0, 1, 2, 3
STATUS_NAMES = {ESCAPED: "Escaped", DIED: "Died", TIMED_OUT: "TimedOut"}

# stop rules
STOP_RADIUS, STOP_TIME, STOP_HALFPLANE = 0, 1, 2

MIN_SURVIVORS = 100
# undying paths stop once their weight exp(-hazard) is below 1e-17
HAZ_CUTOFF = 40.0


class WindingError(RuntimeError):
    """A single step turned the angle by pi/2 or more; the step rule is too coarse."""


@dataclass(frozen=True)
class KbmConfig:
    """Killing exponent, time step and run limits.

    ``killing`` overrides the default field min(1, |x|^-alpha) (Zero and
    Constant are accepted).  ``adaptive`` shrinks steps near the origin to
    min(dt, 0.01 |x|^2).  Inside the disk of radius ``core`` a path jumps to
    the circle of radius 2*core by its exact exit law (time and hazard use the
    mean exit time, the Bessel clock is not advanced).
    """
    alpha: float = 1.6
    dt: float = 0.01
    max_time: float = 1e7
    seed: int = 0
    killing: KillingField | None = None
    adaptive: bool = True
    winding: bool = True
    bridge: bool = False
    die: bool = True
    core: float = 1e-8

    def __post_init__(self):
        if self.killing is None and not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def beta(self) -> float:
        return (2.0 - self.alpha) / 4.0

    def field(self) -> KillingField:
        return self.killing if self.killing is not None else PowerLaw(self.alpha)

    def kill_code(self) -> tuple[int, float]:
        k = self.field()
        if isinstance(k, Zero):
            return 0, 0.0
        if isinstance(k, Constant):
            return 1, float(k.rate)
        if isinstance(k, PowerLaw):
            return 2, float(k.alpha)
        raise ValueError(f"killing {type(k).__name__} is not supported for Brownian paths")

    def check_resolution(self, inner_radius: float) -> None:
        if self.dt > 1e-2 * inner_radius ** 2 + 1e-15:
            raise ValueError(f"dt={self.dt} violates dt <= 0.01 * r^2 = {1e-2 * inner_radius ** 2:g}")

    def mode(self) -> int:
        return int(self.adaptive) | (int(self.winding) << 1)

    def stream(self, stream_id: int = 0) -> RandomStream:
        return RandomStream(self.seed, stream_id)

    def describe(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "dt": self.dt, "max_time": self.max_time,
                "seed": self.seed, "killing": self.field().describe(), "adaptive": self.adaptive,
                "winding": self.winding,
                "bridge": self.bridge, "die": self.die}


def resolved_config(alpha: float, r: float, **kw) -> KbmConfig:
    """Config whose dt is the largest allowed by the resolution rule at radius r."""
    kw.setdefault("dt", 1e-2 * r * r)
    return KbmConfig(alpha=alpha, **kw)


@dataclass
class PathBatch:
    """Terminal states of a batch of paths (one entry per path)."""
    status: np.ndarray
    x: np.ndarray
    y: np.ndarray
    time: np.ndarray
    hazard: np.ndarray
    winding: np.ndarray
    clock: np.ndarray

    def __len__(self):
        return len(self.status)

    def frac(self, code) -> float:
        return float(np.mean(self.status == code))

    def count(self, code) -> int:
        return int(np.count_nonzero(self.status == code))

    def arc(self) -> np.ndarray:
        """Length of the minimal arc between start and end directions."""
        w = np.mod(self.winding, 2 * np.pi)
        return np.minimum(w, 2 * np.pi - w)

    def subset(self, mask) -> "PathBatch":
        return PathBatch(*(getattr(self, f)[mask] for f in
                           ("status", "x", "y", "time", "hazard", "winding", "clock")))


@numba.njit(cache=True)
def _rate(kind, par, r2):
    if kind == 0:
        return 0.0
    if kind == 1:
        return par
    if r2 <= 1.0:
        return 1.0
    return r2 ** (-0.5 * par)


@numba.njit(cache=True)
def _target(stop, px, py, R, Rt, sign):
    r2 = px * px + py * py
    if stop == STOP_RADIUS:
        return r2 >= R * R
    if stop == STOP_HALFPLANE:
        if r2 >= Rt * Rt:
            return True
        return r2 > R * R and sign * px > 0
    return False


@numba.njit(cache=True)
def _bridge_cross(stop, ax, ay, bx, by, h, R, sign):
    # probability that the Brownian bridge between two inside points left the ball
    # (tangent half-plane approximation at the nearer endpoint)
    if stop != STOP_RADIUS and stop != STOP_HALFPLANE:
        return 0.0
    da = R - math.sqrt(ax * ax + ay * ay)
    db = R - math.sqrt(bx * bx + by * by)
    if da <= 0 or db <= 0:
        return 1.0
    if stop == STOP_HALFPLANE and sign * (ax + bx) <= 0:
        return 0.0
    return math.exp(-2.0 * da * db / h)


@numba.njit(cache=True)
def _score(px, py, R, sign):
    # half log-radius progress toward R, half angular progress toward the escape side
    rad = min(max(0.5 * math.log(max(px * px + py * py, 1.0)) / math.log(R), 0.0), 1.0)
    ang = abs(math.atan2(py, sign * px)) / math.pi
    return 0.5 * (rad + 1.0 - ang)


@numba.njit(cache=True)
def _advance(px, py, t, haz, xi, wind, clock, kind, par, dt, mode, core, stop, R, Rt, sign,
             max_time, die, bridge, level):
    """Run one path until it escapes, dies, times out or (level > 0) its splitting
    score reaches ``level``.  Returns the new state and status."""
    r2 = px * px + py * py
    k0 = _rate(kind, par, r2)
    while True:
        if _target(stop, px, py, R, Rt, sign):
            return px, py, t, haz, wind, clock, ESCAPED
        if level > 0.0 and _score(px, py, R, sign) >= level:
            return px, py, t, haz, wind, clock, RUNNING
        if t >= max_time:
            return px, py, t, haz, wind, clock, TIMED_OUT
        if r2 < core * core:
            # exit point of B(0, 2 core) is wrapped Cauchy around the current direction
            rc = 2.0 * core
            rho = math.sqrt(r2) / rc
            th = math.atan2(py, px)
            dth = 2.0 * math.atan((1.0 - rho) / (1.0 + rho) * math.tan(math.pi * (np.random.random() - 0.5)))
            h = 0.5 * (rc * rc - r2)
            px, py = rc * math.cos(th + dth), rc * math.sin(th + dth)
            r2 = rc * rc
            wind += dth
            haz += h * k0
            t += h
            k0 = _rate(kind, par, r2)
            if die and haz >= xi:
                return px, py, t, haz, wind, clock, DIED
            continue
        h = dt
        if mode & 1:
            h = min(dt, 0.01 * r2)
        if t + h > max_time:
            h = max_time - t
        s = math.sqrt(h)
        nx = px + s * np.random.standard_normal()
        ny = py + s * np.random.standard_normal()
        nr2 = nx * nx + ny * ny
        k1 = _rate(kind, par, nr2)
        haz += 0.5 * h * (k0 + k1)
        if mode & 2 and r2 > 0 and nr2 > 0:
            dth = math.atan2(px * ny - py * nx, px * nx + py * ny)
            if abs(dth) >= 0.5 * math.pi:
                return px, py, t, haz, wind, -1.0, -1
            wind += dth
            clock += 0.5 * h * (1.0 / r2 + 1.0 / nr2)
        t += h
        if haz >= (xi if die else HAZ_CUTOFF):
            return nx, ny, t, haz, wind, clock, DIED
        if bridge and not _target(stop, nx, ny, R, Rt, sign):
            p = _bridge_cross(stop, px, py, nx, ny, h, R, sign)
            if p > 0 and np.random.random() < p:
                return nx, ny, t, haz, wind, clock, ESCAPED
        px, py, r2, k0 = nx, ny, nr2, k1


@numba.njit(cache=True)
def _run_batch(x0, y0, samples, kind, par, dt, mode, core, stop, R, Rt, sign, max_time, die,
               bridge, seed):
    np.random.seed(seed)
    st = np.empty(samples, dtype=np.int8)
    ox = np.empty(samples)
    oy = np.empty(samples)
    ot = np.empty(samples)
    oh = np.empty(samples)
    ow = np.empty(samples)
    oc = np.empty(samples)
    for i in range(samples):
        xi = np.random.exponential()
        px, py, t, haz, wind, clock, s = _advance(x0, y0, 0.0, 0.0, xi, 0.0, 0.0, kind, par, dt,
                                                  mode, core, stop, R, Rt, sign, max_time,
                                                  die, bridge, 0.0)
        if s == TIMED_OUT and stop == STOP_TIME:
            s = ESCAPED
        st[i] = s
        ox[i], oy[i], ot[i], oh[i], ow[i], oc[i] = px, py, t, haz, wind, clock
    return st, ox, oy, ot, oh, ow, oc


def simulate_until(config: KbmConfig, start, samples: int, *, radius: float | None = None,
                   halfplane: tuple[float, int, float] | None = None, time_cap: float | None = None,
                   stream: RandomStream | None = None) -> PathBatch:
    """Simulate ``samples`` paths from ``start`` until a stop rule fires.

    Exactly one of ``radius`` (escape when |B| >= radius), ``halfplane``
    ((R, sign, R_trunc): escape into {|x| > R, sign * x_1 > 0} or beyond R_trunc)
    or ``time_cap`` (survival to that time counts as Escaped) must be given.
    Paths still running at ``config.max_time`` are TimedOut.
    """
    rules = [radius is not None, halfplane is not None, time_cap is not None]
    if sum(rules) != 1:
        raise ValueError("give exactly one stop rule")
    kind, par = config.kill_code()
    stream = stream or config.stream()
    max_time = config.max_time
    R = Rt = 0.0
    sign = 1
    if radius is not None:
        stop, R = STOP_RADIUS, float(radius)
    elif halfplane is not None:
        stop = STOP_HALFPLANE
        R, sign, Rt = float(halfplane[0]), int(halfplane[1]), float(halfplane[2])
    else:
        stop, max_time = STOP_TIME, float(time_cap)
    out = _run_batch(float(start[0]), float(start[1]), int(samples), kind, par, float(config.dt),
                     config.mode(), float(config.core), stop, R, Rt, sign, float(max_time),
                     bool(config.die), bool(config.bridge), stream.kernel_seed())
    batch = PathBatch(*out)
    if np.any(batch.status == -1):
        raise WindingError("a step turned the angle by >= pi/2; reduce dt")
    return batch


# ---------------------------------------------------------------------------
# estimators

def survival_estimate(batch: PathBatch, stream=None, **info) -> Estimate:
    hits = batch.count(ESCAPED)
    return Estimate.from_counts(hits, len(batch), stream,
                                died=batch.count(DIED), timed_out=batch.count(TIMED_OUT), **info)


def feynman_kac_check(config: KbmConfig, start, radius: float, samples: int) -> dict:
    """Two independent estimators of P[reach radius before death].

    The first samples deaths; the second runs undying paths and averages
    exp(-hazard) at the stopping time.
    """
    a = simulate_until(config, start, samples, radius=radius, stream=config.stream(11))
    b = simulate_until(replace(config, die=False), start, samples, radius=radius, stream=config.stream(12))
    death = survival_estimate(a, config.stream(11))
    w = np.where(b.status == ESCAPED, np.exp(-b.hazard), 0.0)
    fk = Estimate.from_samples(w, config.stream(12))
    return {"death": death, "weighted": fk, "z": death.zscore(fk)}


def annulus_survival(config: KbmConfig, r: float, factor: float = 2.0, samples: int = 10**4,
                     method: str = "auto", stream: RandomStream | None = None) -> Estimate:
    """P_r[reach radius factor*r before death], started from (r, 0).

    ``method="chained"`` multiplies independent doubling estimates (factor must
    be a power of 2); ``"auto"`` chains when the annulus spans several doublings.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    n = math.log2(factor)
    chainable = abs(n - round(n)) < 1e-12 and round(n) >= 1
    if method == "auto":
        method = "chained" if chainable and round(n) > 1 else "direct"
    stream = stream or config.stream(int(r * 1000 + factor))
    if method == "chained":
        if not chainable:
            raise ValueError("chained estimates need factor = 2^n")
        ests = [annulus_survival(config, r * 2 ** i, 2.0, samples, "direct", stream.child(i))
                for i in range(int(round(n)))]
        mean = float(np.prod([e.mean for e in ests]))
        rel2 = sum((e.stderr / e.mean) ** 2 for e in ests if e.mean > 0)
        se = mean * math.sqrt(rel2) if mean > 0 else float("nan")
        return Estimate(mean, se, samples, stream.seed, stream.stream_id,
                        {"method": "chained", "factors": [e.mean for e in ests],
                         "factor_stderr": [e.stderr for e in ests]})
    config.check_resolution(r)
    batch = simulate_until(config, (r, 0.0), samples, radius=factor * r, stream=stream)
    return survival_estimate(batch, stream, method="direct", r=r, factor=factor)


def scaling_fit(config: KbmConfig, radii=(4, 8, 16, 32), samples: int = 10**4,
                dt_rule: bool = True) -> dict:
    """-ln P_r[tau(2r) < death] against r^(2 beta): least-squares line and correlation."""
    rows = []
    for r in radii:
        cfg = replace(config, dt=1e-2 * r * r) if dt_rule else config
        e = annulus_survival(cfg, r, 2.0, samples)
        rows.append((r, e.mean, e.stderr, e.n))
    x = np.array([r ** (2 * config.beta) for r, *_ in rows])
    y = np.array([-math.log(m) if m > 0 else np.nan for _, m, *_ in rows])
    ok = np.isfinite(y)
    slope, icpt = np.polyfit(x[ok], y[ok], 1)
    corr = float(np.corrcoef(x[ok], y[ok])[0, 1])
    return {"rows": rows, "x": x, "y": y, "slope": float(slope), "intercept": float(icpt), "corr": corr}


@dataclass
class AngularResult:
    estimate: Estimate
    survivors: int
    winding: np.ndarray
    clock: np.ndarray
    inconclusive: bool


def angular_concentration(config: KbmConfig, r: float, samples: int,
                          stream: RandomStream | None = None) -> AngularResult:
    """P[minimal arc of the exit angle change >= r^(-beta/2) | reach 2r before death]."""
    if r < 4:
        raise ValueError("r must be >= 4")
    config.check_resolution(r)
    stream = stream or config.stream(7000 + int(r))
    batch = simulate_until(config, (r, 0.0), samples, radius=2 * r, stream=stream)
    surv = batch.subset(batch.status == ESCAPED)
    n = len(surv)
    thr = r ** (-config.beta / 2)
    if n < MIN_SURVIVORS:
        est = Estimate(float("nan"), float("nan"), max(n, 1), stream.seed, stream.stream_id,
                       {"threshold": thr, "inconclusive": True})
        return AngularResult(est, n, surv.winding, surv.clock, True)
    hits = int(np.count_nonzero(surv.arc() >= thr))
    est = Estimate.from_counts(hits, n, stream, threshold=thr, survivors=n, inconclusive=False)
    return AngularResult(est, n, surv.winding, surv.clock, False)


def skew_product_check(config: KbmConfig, r: float, samples: int) -> dict:
    """Compare exit windings with W(R_tau) for an independent 1D Brownian motion W.

    Two independent runs: one records the unwrapped winding directly, the other
    records only the Bessel clock R_tau and draws W(R_tau) ~ N(0, R_tau).
    """
    a = angular_concentration(config, r, samples, config.stream(8100 + int(r)))
    b = angular_concentration(config, r, samples, config.stream(8200 + int(r)))
    rng = config.stream(8300 + int(r)).generator()
    synth = rng.standard_normal(len(b.clock)) * np.sqrt(b.clock)
    ks = stats.ks_2samp(a.winding, synth)
    return {"statistic": float(ks.statistic), "pvalue": float(ks.pvalue),
            "n_direct": len(a.winding), "n_skew": len(synth)}


def directional_region(r: float, n_doublings: int, side: str, truncation: float = 8.0):
    """(R, sign, R_trunc) for the stop rule: the plus region adds {x_1 <= 0} to B(R)."""
    if side not in ("plus", "minus"):
        raise ValueError("side must be 'plus' or 'minus'")
    R = r * 2 ** n_doublings
    # escape happens on the side *not* covered by the added half-plane
    sign = 1 if side == "plus" else -1
    return R, sign, truncation * R


def directional_escape(config: KbmConfig, r: float, n_doublings: int, side: str, samples: int,
                       start=None, truncation: float = 8.0, splitting: bool | None = None,
                       stream: RandomStream | None = None, **split_kw) -> Estimate:
    """P_start[leave Lambda^side_{2^n r} (cut off at truncation * 2^n r) before death].

    Defaults to start (r, 0).  Rare probabilities use fixed-effort splitting on
    a score mixing log-radius and angle toward the escape side (``splitting=None``
    decides from a pilot run).
    """
    config.check_resolution(r)
    start = (r, 0.0) if start is None else start
    region = directional_region(r, n_doublings, side, truncation)
    stream = stream or config.stream(9000 + (side == "minus"))
    if splitting is None:
        pilot = simulate_until(config, start, min(samples, 2000), halfplane=region, stream=stream.child(99))
        splitting = pilot.count(ESCAPED) < 20
    if not splitting:
        batch = simulate_until(config, start, samples, halfplane=region, stream=stream)
        return survival_estimate(batch, stream, method="direct", side=side, region=region)
    return _split_estimate(config, start, region, samples, stream, **split_kw)


# ---------------------------------------------------------------------------
# fixed-effort multilevel splitting on a radius/angle score

@numba.njit(cache=True)
def _split_stage(px, py, pt, ph, pxi, pw, pc, effort, kind, par, dt, mode, core, R, Rt, sign,
                 max_time, level, seed, resample=True, bridge=False):
    """Restart ``effort`` paths from states drawn uniformly among the inputs
    (or push each input once when ``resample`` is false).

    Returns states whose score reached ``level`` (still running) and the count of
    direct escapes (which count as successes at every later level).
    """
    np.random.seed(seed)
    m = px.shape[0]
    if not resample:
        effort = m
    ox = np.empty(effort)
    oy = np.empty(effort)
    ot = np.empty(effort)
    oh = np.empty(effort)
    oxi = np.empty(effort)
    ow = np.empty(effort)
    oc = np.empty(effort)
    n_up = 0
    n_esc = 0
    for i in range(effort):
        j = np.random.randint(m) if resample else i
        # killing is memoryless, so a live clone gets a fresh residual threshold
        xi = ph[j] + np.random.exponential()
        x, y, t, h, w, c, s = _advance(px[j], py[j], pt[j], ph[j], xi, pw[j], pc[j], kind, par,
                                       dt, mode, core, STOP_HALFPLANE, R, Rt, sign, max_time,
                                       True, bridge, level)
        if s == ESCAPED:
            n_esc += 1
        elif s == RUNNING:
            ox[n_up], oy[n_up], ot[n_up], oh[n_up], oxi[n_up], ow[n_up], oc[n_up] = x, y, t, h, xi, w, c
            n_up += 1
    return ox[:n_up], oy[:n_up], ot[:n_up], oh[:n_up], oxi[:n_up], ow[:n_up], oc[:n_up], n_esc


def _start_state(start, n, rng):
    return (np.full(n, float(start[0])), np.full(n, float(start[1])), np.zeros(n), np.zeros(n),
            rng.exponential(size=n), np.zeros(n), np.zeros(n))


def _stage(config, state, effort, region, level, seed, resample=True):
    kind, par = config.kill_code()
    R, sign, Rt = region
    *st, n_esc = _split_stage(*state, effort, kind, par, float(config.dt), config.mode(),
                              float(config.core), float(R), float(Rt), int(sign),
                              float(config.max_time), float(level), seed, resample, bool(config.bridge))
    return tuple(st), n_esc


def choose_levels(config, start, region, effort: int, p_stage: float = 0.1, grid: int = 400,
                  stream: RandomStream | None = None) -> list:
    """Pilot run placing levels where roughly a fraction ``p_stage`` of paths get through.

    Particles are pushed through a fine grid of score values; a level is fixed
    at the last grid value still held by ``p_stage * effort`` particles and the
    population is rebuilt there by uniform resampling.
    """
    stream = stream or config.stream(9500)
    rng = stream.generator()
    R, sign, _ = region
    s0 = _score(float(start[0]), float(start[1]), float(R), int(sign))
    ticks = np.linspace(s0, 1.0, grid + 1)[1:-1]
    pop = _start_state(start, effort, rng)
    levels, last_ok = [], None
    j = 0
    while j < len(ticks):
        nxt, _ = _stage(config, pop, effort, region, ticks[j], stream.child(j).kernel_seed(), resample=False)
        if len(nxt[0]) >= p_stage * effort:
            pop, last_ok, j = nxt, ticks[j], j + 1
            continue
        if len(nxt[0]) == 0 and last_ok is None:
            break
        if last_ok is None:
            # too steep for the grid: accept this tick with fewer survivors
            pop, last_ok = nxt, ticks[j]
            j += 1
        levels.append(float(last_ok))
        idx = rng.integers(len(pop[0]), size=effort)
        pop = tuple(a[idx] for a in pop)
        last_ok = None
    return levels


def _split_once(config, start, region, levels, effort, seed_stream):
    state = _start_state(start, effort, seed_stream.generator())
    prob = 1.0
    esc_mass = 0.0
    for lv, level in enumerate(list(levels) + [0.0]):
        state, n_esc = _stage(config, state, effort, region, level, seed_stream.child(lv).kernel_seed())
        esc_mass += prob * n_esc / effort
        if level == 0.0:
            break
        p_up = len(state[0]) / effort
        if p_up == 0:
            break
        prob *= p_up
    return esc_mass


def _split_estimate(config, start, region, samples, stream, replicas: int = 20, p_stage: float = 0.1,
                    pilot_effort: int | None = None, levels=None):
    if levels is None:
        levels = choose_levels(config, start, region, pilot_effort or max(1000, samples // replicas // 10),
                               p_stage, stream=stream.child(10**7))
    effort = max(100, samples // (replicas * (len(levels) + 1)))
    vals = np.array([_split_once(config, start, region, levels, effort, stream.child(i))
                     for i in range(replicas)])
    return Estimate.from_samples(vals, stream, method="splitting", levels=list(map(float, levels)),
                                 effort=effort, replicas=replicas)


def reflection_principle_check(t: float, x: float, dt: float, samples: int, bridge: bool = True,
                               stream: RandomStream | None = None) -> dict:
    """Empirical P_0[sup_[0,t] W >= x] against 2 P[N(0,t) >= x].

    With ``bridge`` each step also checks the Brownian-bridge crossing
    probability exp(-2 (x-a)(x-b)/h), which removes the monitoring bias.
    """
    stream = stream or RandomStream(0, 31)
    hits = _sup_exceed(float(t), float(x), float(dt), int(samples), bool(bridge), stream.kernel_seed())
    est = Estimate.from_counts(int(hits), samples, stream)
    exact = 2.0 * stats.norm.sf(x / math.sqrt(t))
    return {"estimate": est, "exact": exact, "z": est.zscore(exact)}


@numba.njit(cache=True)
def _sup_exceed(t, x, dt, samples, bridge, seed):
    np.random.seed(seed)
    n = int(math.ceil(t / dt - 1e-9))
    h = t / n
    s = math.sqrt(h)
    hits = 0
    for _ in range(samples):
        w = 0.0
        for _ in range(n):
            nw = w + s * np.random.standard_normal()
            if nw >= x:
                hits += 1
                break
            if bridge and np.random.random() < math.exp(-2.0 * (x - w) * (x - nw) / h):
                hits += 1
                break
            w = nw
    return hits


def ldp_check(radii, times, dt: float, samples: int, stream: RandomStream | None = None) -> list:
    """Exit-time tail of plain planar BM against 4 exp(-r^2/(8t)) on a grid of (r, t)."""
    stream = stream or RandomStream(0, 41)
    rows = []
    for i, r in enumerate(radii):
        cfg = KbmConfig(killing=Zero(), dt=dt, adaptive=False, winding=False)
        for j, t in enumerate(times):
            b = simulate_until(replace(cfg, max_time=t), (0.0, 0.0), samples, radius=r,
                               stream=stream.child(100 * i + j))
            est = Estimate.from_counts(b.count(ESCAPED), samples)
            bound = 4.0 * math.exp(-r * r / (8.0 * t))
            rows.append({"r": r, "t": t, "estimate": est.mean, "stderr": est.stderr, "bound": bound,
                         "excess_z": (est.mean - bound) / est.stderr if est.stderr > 0 else
                         (0.0 if est.mean <= bound else float("inf"))})
    return rows


def dt_halving_check(config: KbmConfig, r: float, samples: int) -> dict:
    """Survival at dt, dt/2 and dt/4 with the bias slope c of p(dt) ~ p0 + c dt fitted by
    weighted least squares.  ``ok`` is the test |p(dt) - p(dt/2)| <= 3 se + |c| dt/2."""
    dts = [config.dt, config.dt / 2, config.dt / 4]
    ests = [annulus_survival(replace(config, dt=h), r, 2.0, samples, "direct", config.stream(501 + i))
            for i, h in enumerate(dts)]
    p = np.array([e.mean for e in ests])
    w = 1.0 / np.maximum([e.stderr for e in ests], 1e-300)
    c, p0 = np.polyfit(dts, p, 1, w=w)
    comb = math.hypot(ests[0].stderr, ests[1].stderr)
    diff = ests[0].mean - ests[1].mean
    return {"estimates": ests, "dts": dts, "bias_slope": float(c), "extrapolated": float(p0),
            "diff": diff, "combined_stderr": comb,
            "ok": abs(diff) <= 3 * comb + abs(c) * config.dt / 2}


def write_scaling_outputs(fit: dict, beta: float, out_dir, seed=None):
    from pathlib import Path
    out = Path(out_dir)
    rows = [(r, m, s, n) for r, m, s, n in fit["rows"]]
    report.write_csv(out / "annulus.csv", ["r", "estimate", "stderr", "n"], rows)
    report.line_plot(out / "annulus.svg", {"-ln p": (list(fit["x"]), list(fit["y"]))},
                     title="annulus survival scaling", xlabel="r^(2 beta)", ylabel="-ln p", seed=seed)
