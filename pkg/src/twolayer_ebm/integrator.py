"""Adaptive Dormand-Prince 5(4) integration with event detection.

Two drivers share one tableau: ``integrate`` follows a single trajectory on
plain floats and keeps every accepted sample; ``integrate_batch`` advances
many independent starts at once on numpy arrays (each with its own step
size) and keeps only the terminal state.  Both stop on convergence to a rest
point, blow-up, the time horizon or the step budget.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EpsilonOutOfRange, InvalidOptions, NotConverged
from .model import (SECONDS_PER_YEAR, ModelParams, State, coalbedo_eval, make_rhs,
                    make_spectral_radius, rates)

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200,
                          22 / 525, -1 / 40)

# PI controller exponents (Hairer, Norsett & Wanner, Vol. I)
ALPHA = 0.7 / 5
BETA = 0.4 / 5
SAFETY = 0.9
FAC_MIN, FAC_MAX = 0.2, 5.0
# h * spectral radius stays below this; the amplification factor of the
# pair is about 0.24 there, so the fast mode is damped instead of
# alternating at the edge of the stability region
STAB_CAP = 2.5


@dataclass(frozen=True)
class IntegrationOptions:
    """Step control, stopping rules and monitors.

    ``convergence_tol`` bounds the field norm (K/s) and ``displacement_tol``
    the spread of the last ``window`` accepted states (K).
    """

    rel_tol: float = 1e-9
    abs_tol: float = 1e-9
    t_max: float = 1.0e4 * SECONDS_PER_YEAR
    convergence_tol: float = 1e-13
    displacement_tol: float = 1e-6
    blowup_threshold: float = 1.0e6
    max_steps: int = 200_000
    window: int = 10
    kink_tol: float = 1e-6

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "t_max", "convergence_tol",
                     "displacement_tol", "blowup_threshold", "kink_tol"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                raise InvalidOptions(f"{name} must be a positive finite number, got {v!r}")
        if self.blowup_threshold < 1e4:
            raise InvalidOptions("blowup_threshold must exceed any physical temperature")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise InvalidOptions(f"max_steps must be a positive integer, got {self.max_steps!r}")
        if int(self.window) != self.window or self.window < 1:
            raise InvalidOptions(f"window must be a positive integer, got {self.window!r}")


class Outcome(str, enum.Enum):
    CONVERGED = "Converged"
    BLOWUP = "BlowUp"
    HORIZON = "HorizonReached"
    STEP_LIMIT = "StepLimit"


@dataclass(frozen=True)
class Termination:
    outcome: Outcome
    time: float
    state: State
    diagnostic: str = ""
    # certified upper bound on the blow-up time, when one is available
    time_upper_bound: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "verdict": self.outcome.value,
            "time_seconds": self.time,
            "T_a": self.state.t_a,
            "T_s": self.state.t_s,
            "diagnostic": self.diagnostic,
            "time_upper_bound_seconds": self.time_upper_bound,
        }


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    t_a: np.ndarray
    t_s: np.ndarray
    termination: Termination
    n_accepted: int = 0
    n_rejected: int = 0

    def __len__(self) -> int:
        return len(self.t)

    @property
    def converged(self) -> bool:
        return self.termination.outcome is Outcome.CONVERGED

    @property
    def last(self) -> State:
        return State(float(self.t_a[-1]), float(self.t_s[-1]))

    def states(self) -> np.ndarray:
        return np.column_stack([self.t_a, self.t_s])

    def min_temperature(self) -> float:
        return float(min(self.t_a.min(), self.t_s.min()))


@dataclass(frozen=True)
class MonotoneTail:
    index: int
    switch_time: float
    direction_a: str
    direction_s: str


@dataclass(frozen=True)
class Rectangle:
    """The box [0, m_a] x [0, mu m_a]."""

    m_a: float
    mu: float

    @property
    def m_s(self) -> float:
        return self.mu * self.m_a

    def contains(self, s, tol: float = 0.0) -> bool:
        ta, ts = s
        return -tol <= ta <= self.m_a + tol and -tol <= ts <= self.m_s + tol


def _initial_step(f, ta, ts, fa, fs, opts: IntegrationOptions) -> float:
    sa = opts.abs_tol + opts.rel_tol * abs(ta)
    ss = opts.abs_tol + opts.rel_tol * abs(ts)
    d0 = math.hypot(ta / sa, ts / ss) / math.sqrt(2)
    d1 = math.hypot(fa / sa, fs / ss) / math.sqrt(2)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    ga, gs = f(ta + h0 * fa, ts + h0 * fs)
    d2 = math.hypot((ga - fa) / sa, (gs - fs) / ss) / math.sqrt(2) / h0
    m = max(d1, d2)
    h1 = max(1e-6, h0 * 1e-3) if m <= 1e-15 else (0.01 / m) ** 0.2
    return min(100.0 * h0, h1, opts.t_max)


def _straddle(ts_old, ts_new, corners, tol):
    """Corner crossed with both endpoints farther than tol from it, or None."""
    for c in corners:
        if (ts_old - c) * (ts_new - c) < 0 and abs(ts_old - c) > tol and abs(ts_new - c) > tol:
            return c
    return None


def _remainder_bound(p: ModelParams, s: State) -> Optional[float]:
    from .asymptotics import escape_remainder_bound
    return escape_remainder_bound(p, s)


def integrate(p: ModelParams, s0, opts: IntegrationOptions = IntegrationOptions()) -> Trajectory:
    """Integrate from s0 until convergence, blow-up, horizon or step limit."""
    ta, ts = float(s0[0]), float(s0[1])
    if not (math.isfinite(ta) and math.isfinite(ts)):
        raise InvalidOptions(f"initial state must be finite, got {s0!r}")
    if ta < 0 or ts < 0:
        raise InvalidOptions(f"initial state must be nonnegative, got {s0!r}")
    f = make_rhs(p)
    srad = make_spectral_radius(p)
    corners = [p.coalbedo_s.t_minus, p.coalbedo_s.t_plus]
    rtol, atol = opts.rel_tol, opts.abs_tol
    ctol, dtol, win = opts.convergence_tol, opts.displacement_tol, opts.window
    big = opts.blowup_threshold

    T, XA, XS = [0.0], [ta], [ts]
    t = 0.0
    fa, fs = f(ta, ts)

    def done(outcome, diag="", bound=None):
        term = Termination(outcome, T[-1], State(XA[-1], XS[-1]), diag, bound)
        return Trajectory(np.array(T), np.array(XA), np.array(XS), term, n_acc, n_rej)

    n_acc = n_rej = 0
    if math.hypot(fa, fs) <= ctol:
        return done(Outcome.CONVERGED, "initial state is a rest point")

    h = _initial_step(f, ta, ts, fa, fs, opts)
    err_prev = 1e-4
    rejected_last = False
    while True:
        if n_acc + n_rej >= opts.max_steps:
            return done(Outcome.STEP_LIMIT, f"{n_acc} accepted, {n_rej} rejected")
        if t + h > opts.t_max:
            h = opts.t_max - t
        if h <= 1e-12 * max(1.0, abs(t)):
            return done(Outcome.BLOWUP, f"step size underflow at t={t:.6g} s",
                        _bound_from(p, t, State(ta, ts)))

        k2a, k2s = f(ta + h * A21 * fa, ts + h * A21 * fs)
        k3a, k3s = f(ta + h * (A31 * fa + A32 * k2a), ts + h * (A31 * fs + A32 * k2s))
        k4a, k4s = f(ta + h * (A41 * fa + A42 * k2a + A43 * k3a),
                     ts + h * (A41 * fs + A42 * k2s + A43 * k3s))
        k5a, k5s = f(ta + h * (A51 * fa + A52 * k2a + A53 * k3a + A54 * k4a),
                     ts + h * (A51 * fs + A52 * k2s + A53 * k3s + A54 * k4s))
        k6a, k6s = f(ta + h * (A61 * fa + A62 * k2a + A63 * k3a + A64 * k4a + A65 * k5a),
                     ts + h * (A61 * fs + A62 * k2s + A63 * k3s + A64 * k4s + A65 * k5s))
        na = ta + h * (B1 * fa + B3 * k3a + B4 * k4a + B5 * k5a + B6 * k6a)
        ns = ts + h * (B1 * fs + B3 * k3s + B4 * k4s + B5 * k5s + B6 * k6s)
        k7a, k7s = f(na, ns)
        ea = h * (E1 * fa + E3 * k3a + E4 * k4a + E5 * k5a + E6 * k6a + E7 * k7a)
        es = h * (E1 * fs + E3 * k3s + E4 * k4s + E5 * k5s + E6 * k6s + E7 * k7s)
        sa = atol + rtol * max(abs(ta), abs(na))
        ss = atol + rtol * max(abs(ts), abs(ns))
        err = math.sqrt(0.5 * ((ea / sa) ** 2 + (es / ss) ** 2))

        if not math.isfinite(err):
            n_rej += 1
            h *= FAC_MIN
            rejected_last = True
            continue
        if err > 1.0:
            n_rej += 1
            h *= max(FAC_MIN, SAFETY * err ** -0.2)
            rejected_last = True
            continue
        c = _straddle(ts, ns, corners, opts.kink_tol)
        if c is not None:
            # land next to the corner instead of smearing the slope jump
            n_rej += 1
            frac = (c - ts) / (ns - ts)
            h *= min(max(frac, 0.01), 0.99)
            rejected_last = True
            continue

        t += h
        ta, ts, fa, fs = na, ns, k7a, k7s
        n_acc += 1
        T.append(t)
        XA.append(ta)
        XS.append(ts)

        if max(abs(ta), abs(ts)) >= big:
            return done(Outcome.BLOWUP, "temperature exceeded blow-up threshold",
                        _bound_from(p, t, State(ta, ts)))
        if math.hypot(fa, fs) <= ctol and len(T) > win:
            spread = max(max(abs(XA[-1 - j] - ta), abs(XS[-1 - j] - ts)) for j in range(1, win + 1))
            if spread <= dtol:
                return done(Outcome.CONVERGED)
        if t >= opts.t_max:
            return done(Outcome.HORIZON)

        fac = SAFETY * err ** -ALPHA * err_prev ** BETA if err > 0 else FAC_MAX
        fac = min(FAC_MAX, max(FAC_MIN, fac))
        if rejected_last:
            fac = min(fac, 1.0)
        h = min(h * fac, STAB_CAP / srad(ta, ts))
        err_prev = max(err, 1e-4)
        rejected_last = False


def _bound_from(p: ModelParams, t: float, s: State) -> Optional[float]:
    r = _remainder_bound(p, s)
    return None if r is None else t + r


@dataclass(frozen=True)
class BatchResult:
    t_a: np.ndarray
    t_s: np.ndarray
    time: np.ndarray
    outcome: np.ndarray      # array of Outcome values (object dtype)
    n_steps: np.ndarray

    @property
    def converged(self) -> np.ndarray:
        return np.fromiter((o is Outcome.CONVERGED for o in self.outcome), bool,
                           count=len(self.outcome))


def integrate_batch(p: ModelParams, ta0, ts0,
                    opts: IntegrationOptions = IntegrationOptions()) -> BatchResult:
    """Terminal states of many independent integrations.

    The arithmetic and the acceptance rules match ``integrate``; only the
    sample history is dropped.
    """
    ta = np.array(ta0, dtype=float).ravel()
    ts = np.array(ts0, dtype=float).ravel()
    if ta.shape != ts.shape:
        raise InvalidOptions("ta0 and ts0 must have the same size")
    if not (np.all(np.isfinite(ta)) and np.all(np.isfinite(ts))):
        raise InvalidOptions("initial states must be finite")
    if np.any(ta < 0) or np.any(ts < 0):
        raise InvalidOptions("initial states must be nonnegative")
    n = ta.size
    rtol, atol, win = opts.rel_tol, opts.abs_tol, opts.window
    corners = (p.coalbedo_s.t_minus, p.coalbedo_s.t_plus)

    out_a, out_s = ta.copy(), ts.copy()
    out_t = np.zeros(n)
    outcome = np.full(n, Outcome.STEP_LIMIT, dtype=object)
    steps = np.zeros(n, dtype=np.int64)

    def f(x, y):
        return rates(p, x, y)

    srad = make_spectral_radius(p)

    idx = np.arange(n)
    t = np.zeros(n)
    fa, fs = f(ta, ts)
    at_rest = np.hypot(fa, fs) <= opts.convergence_tol
    outcome[at_rest] = Outcome.CONVERGED
    keep = ~at_rest
    idx, ta, ts, t, fa, fs = idx[keep], ta[keep], ts[keep], t[keep], fa[keep], fs[keep]

    # initial step, vectorised version of _initial_step
    sa = atol + rtol * np.abs(ta)
    ss = atol + rtol * np.abs(ts)
    d0 = np.hypot(ta / sa, ts / ss) / math.sqrt(2)
    d1 = np.hypot(fa / sa, fs / ss) / math.sqrt(2)
    with np.errstate(divide="ignore", invalid="ignore"):
        h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
        ga, gs = f(ta + h0 * fa, ts + h0 * fs)
        d2 = np.hypot((ga - fa) / sa, (gs - fs) / ss) / math.sqrt(2) / h0
        m = np.maximum(d1, d2)
        h1 = np.where(m <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / m) ** 0.2)
    h = np.minimum(np.minimum(100 * h0, h1), opts.t_max)
    err_prev = np.full(ta.size, 1e-4)
    rej_last = np.zeros(ta.size, dtype=bool)
    nsteps = np.zeros(ta.size, dtype=np.int64)
    hist_a = np.repeat(ta[:, None], win, axis=1)
    hist_s = np.repeat(ts[:, None], win, axis=1)
    n_acc = np.zeros(ta.size, dtype=np.int64)

    def retire(mask, kind):
        nonlocal idx, ta, ts, t, fa, fs, h, err_prev, rej_last, nsteps, hist_a, hist_s, n_acc
        g = idx[mask]
        out_a[g], out_s[g], out_t[g] = ta[mask], ts[mask], t[mask]
        outcome[g] = kind
        steps[g] = nsteps[mask]
        k = ~mask
        idx, ta, ts, t, fa, fs = idx[k], ta[k], ts[k], t[k], fa[k], fs[k]
        h, err_prev, rej_last, nsteps = h[k], err_prev[k], rej_last[k], nsteps[k]
        hist_a, hist_s, n_acc = hist_a[k], hist_s[k], n_acc[k]

    with np.errstate(over="ignore", invalid="ignore"):
        while idx.size:
            lim = nsteps >= opts.max_steps
            if lim.any():
                retire(lim, Outcome.STEP_LIMIT)
                if not idx.size:
                    break
            h = np.minimum(h, opts.t_max - t)
            tiny = h <= 1e-12 * np.maximum(1.0, np.abs(t))
            if tiny.any():
                retire(tiny, Outcome.BLOWUP)
                if not idx.size:
                    break

            k2a, k2s = f(ta + h * A21 * fa, ts + h * A21 * fs)
            k3a, k3s = f(ta + h * (A31 * fa + A32 * k2a), ts + h * (A31 * fs + A32 * k2s))
            k4a, k4s = f(ta + h * (A41 * fa + A42 * k2a + A43 * k3a),
                         ts + h * (A41 * fs + A42 * k2s + A43 * k3s))
            k5a, k5s = f(ta + h * (A51 * fa + A52 * k2a + A53 * k3a + A54 * k4a),
                         ts + h * (A51 * fs + A52 * k2s + A53 * k3s + A54 * k4s))
            k6a, k6s = f(ta + h * (A61 * fa + A62 * k2a + A63 * k3a + A64 * k4a + A65 * k5a),
                         ts + h * (A61 * fs + A62 * k2s + A63 * k3s + A64 * k4s + A65 * k5s))
            na = ta + h * (B1 * fa + B3 * k3a + B4 * k4a + B5 * k5a + B6 * k6a)
            ns = ts + h * (B1 * fs + B3 * k3s + B4 * k4s + B5 * k5s + B6 * k6s)
            k7a, k7s = f(na, ns)
            ea = h * (E1 * fa + E3 * k3a + E4 * k4a + E5 * k5a + E6 * k6a + E7 * k7a)
            es = h * (E1 * fs + E3 * k3s + E4 * k4s + E5 * k5s + E6 * k6s + E7 * k7s)
            sa = atol + rtol * np.maximum(np.abs(ta), np.abs(na))
            ss = atol + rtol * np.maximum(np.abs(ts), np.abs(ns))
            err = np.sqrt(0.5 * ((ea / sa) ** 2 + (es / ss) ** 2))
            nsteps += 1

            bad = ~np.isfinite(err)
            big_err = ~bad & (err > 1.0)
            # kink straddle
            frac = np.ones_like(h)
            straddle = np.zeros(h.shape, dtype=bool)
            for c in corners:
                sc = (((ts - c) * (ns - c)) < 0) & (np.abs(ts - c) > opts.kink_tol) \
                    & (np.abs(ns - c) > opts.kink_tol)
                with np.errstate(divide="ignore"):
                    fr = (c - ts) / (ns - ts)
                frac = np.where(sc & ~straddle, fr, frac)
                straddle |= sc
            straddle &= ~bad & ~big_err
            reject = bad | big_err | straddle
            acc = ~reject

            newh = h.copy()
            newh[bad] *= FAC_MIN
            eb = err[big_err]
            newh[big_err] *= np.maximum(FAC_MIN, SAFETY * eb ** -0.2)
            newh[straddle] *= np.clip(frac[straddle], 0.01, 0.99)

            e_acc = err[acc]
            with np.errstate(divide="ignore"):
                fac = np.where(e_acc > 0, SAFETY * e_acc ** -ALPHA * err_prev[acc] ** BETA, FAC_MAX)
            fac = np.clip(fac, FAC_MIN, FAC_MAX)
            fac = np.where(rej_last[acc], np.minimum(fac, 1.0), fac)

            t = np.where(acc, t + h, t)
            ta = np.where(acc, na, ta)
            ts = np.where(acc, ns, ts)
            fa = np.where(acc, k7a, fa)
            fs = np.where(acc, k7s, fs)
            newh[acc] = np.minimum(newh[acc] * fac, STAB_CAP / srad(ta[acc], ts[acc]))
            err_prev[acc] = np.maximum(e_acc, 1e-4)
            rej_last = reject
            h = newh
            n_acc += acc
            slot = (n_acc - 1) % win
            rows = np.nonzero(acc)[0]
            spread_ok = np.zeros(h.shape, dtype=bool)
            if rows.size:
                spread = np.maximum(np.abs(hist_a[rows] - ta[rows, None]).max(axis=1),
                                    np.abs(hist_s[rows] - ts[rows, None]).max(axis=1))
                spread_ok[rows] = spread <= opts.displacement_tol
                hist_a[rows, slot[rows]] = ta[rows]
                hist_s[rows, slot[rows]] = ts[rows]

            blow = acc & (np.maximum(np.abs(ta), np.abs(ts)) >= opts.blowup_threshold)
            conv = (acc & ~blow & (np.hypot(fa, fs) <= opts.convergence_tol)
                    & (n_acc >= win) & spread_ok)
            hor = acc & ~blow & ~conv & (t >= opts.t_max)
            if blow.any():
                retire(blow, Outcome.BLOWUP)
                conv, hor = conv[~blow], hor[~blow]
            if conv.any():
                retire(conv, Outcome.CONVERGED)
                hor = hor[~conv]
            if hor.any():
                retire(hor, Outcome.HORIZON)

    return BatchResult(out_a, out_s, out_t, outcome, steps)


def detect_monotone_tail(traj: Trajectory, tol: float) -> MonotoneTail:
    """Earliest sample after which both components are monotone up to tol."""
    if not traj.converged:
        raise NotConverged(f"trajectory ended with {traj.termination.outcome.value}")
    if len(traj) < 2:
        return MonotoneTail(0, float(traj.t[0]), "nondecreasing", "nondecreasing")
    idx = 0
    dirs = []
    for x in (traj.t_a, traj.t_s):
        d = np.diff(x)
        down = np.nonzero(d < -tol)[0]
        up = np.nonzero(d > tol)[0]
        k_inc = int(down[-1]) + 1 if down.size else 0
        k_dec = int(up[-1]) + 1 if up.size else 0
        if k_inc < k_dec or (k_inc == k_dec and x[-1] >= x[k_inc]):
            dirs.append("nondecreasing")
            idx = max(idx, k_inc)
        else:
            dirs.append("nonincreasing")
            idx = max(idx, k_dec)
    return MonotoneTail(idx, float(traj.t[idx]), dirs[0], dirs[1])


def invariant_rectangle(p: ModelParams, s0) -> Rectangle:
    """A box [0, M_a] x [0, mu M_a] containing s0 that no trajectory leaves.

    The field on the right edge points left and on the top edge points down
    once the quartic terms dominate; the smallest admissible M_a is located
    by doubling, so the result is minimal up to a factor of two.
    """
    eps = p.epsilon_a
    if not 0 < eps < 2:
        raise EpsilonOutOfRange(f"epsilon_a must lie in (0, 2), got {eps}")
    ta0, ts0 = float(s0[0]), float(s0[1])
    if ta0 < 0 or ts0 < 0:
        raise InvalidOptions("s0 must be nonnegative")
    mu = 0.5 * (eps ** 0.25 + 2 ** 0.25)
    sig, lam, es = p.sigma_b, p.lam, eps * p.sigma_b

    def inward(ma):
        ms = mu * ma
        ra = p.q * coalbedo_eval(p.coalbedo_a, ma) if p.coalbedo_a is not None else 0.0
        right = -lam * (ma - ms) + es * (ms ** 4 - 2.0 * ma ** 4) + ra
        top = -lam * (ms - ma) + sig * (eps * ma ** 4 - ms ** 4) + p.q * coalbedo_eval(p.coalbedo_s, ms)
        return right < 0 and top < 0

    ma = max(ta0, ts0 / mu, 1.0)
    while mu * ma < ts0:  # ts0 / mu * mu can round below ts0
        ma = math.nextafter(ma, math.inf)
    for _ in range(200):
        if inward(ma):
            return Rectangle(ma, mu)
        ma *= 2.0
    raise InvalidOptions("no invariant rectangle found")  # pragma: no cover
