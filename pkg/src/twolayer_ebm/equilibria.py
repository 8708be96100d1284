"""Equilibrium enumeration, classification and uniform bounds.

At a rest point the first equation fixes T_a as a function of T_s,

    lam T_a + 2 eps sigma T_a^4 = lam T_s + eps sigma T_s^4,

and substituting into the second leaves the scalar problem
Phi(T_s) = q beta_s(T_s) with

    Phi(T_s) = (lam/2) (T_s - T_a1(T_s)) + sigma (1 - eps/2) T_s^4.

Roots are bracketed on a dense grid and polished with Brent's method.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import EpsilonOutOfRange, InvalidParameter, NegativeInput
from .model import ModelParams, State, coalbedo_eval, coalbedo_slope, jacobian, rates

INV_2_QUARTER = 2.0 ** -0.25
KINK_TOL = 1e-9        # K, distance to a ramp corner that counts as sitting on it
TANGENCY_REL = 1e-6    # bracketless minimum of |Phi - q beta_s| below this * q beta_+


class EqClass(str, enum.Enum):
    COLD = "Cold"
    INTERMEDIATE = "Intermediate"
    WARM = "Warm"
    KINK = "Kink"


class Verdict(str, enum.Enum):
    STABLE = "AsymptoticallyStable"
    UNSTABLE = "Unstable"
    DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class Stability:
    trace: float
    determinant: float
    eigenvalues: tuple
    verdict: Verdict
    # |det - factored form| relative to the size of the determinant's terms
    det_crosscheck: float = 0.0


@dataclass(frozen=True)
class Equilibrium:
    state: State
    eq_class: EqClass
    residual: float
    stability: Optional[Stability] = None
    double_root: bool = False

    @property
    def t_a(self) -> float:
        return self.state.t_a

    @property
    def t_s(self) -> float:
        return self.state.t_s

    @property
    def stable(self) -> bool:
        return self.stability is not None and self.stability.verdict is Verdict.STABLE


@dataclass(frozen=True)
class EquilibriumBounds:
    ta_lo: float
    ta_hi: float
    ts_lo: float
    ts_hi: float

    def contains(self, s, rtol: float = 1e-12) -> bool:
        ta, ts = s
        return (self.ta_lo * (1 - rtol) < ta <= self.ta_hi * (1 + rtol)
                and self.ts_lo * (1 - rtol) < ts <= self.ts_hi * (1 + rtol))


def _require_subcritical(p: ModelParams):
    if not 0 < p.epsilon_a < 2:
        raise EpsilonOutOfRange(f"epsilon_a must lie in (0, 2), got {p.epsilon_a}")


def _require_no_beta_a(p: ModelParams):
    if p.coalbedo_a is not None:
        raise InvalidParameter("the scalar reduction assumes no atmospheric coalbedo")


def equilibrium_bounds(p: ModelParams) -> EquilibriumBounds:
    """Bounds on every equilibrium, valid uniformly in lam >= 0."""
    _require_subcritical(p)
    eps, sig = p.epsilon_a, p.sigma_b
    bm, bp = p.coalbedo_s.beta_minus, p.coalbedo_s.beta_plus
    ts_lo = (p.q * bm / sig) ** 0.25
    if eps <= 1.0:
        ta_lo = (p.q * bm / (2.0 * sig)) ** 0.25
        ta_hi = (p.q * bp / (eps * sig)) ** 0.25
        ts_hi = (2.0 * p.q * bp / (eps * sig)) ** 0.25
    else:
        ta_lo = ts_lo
        ta_hi = (p.q * bp / ((2.0 - eps) * sig)) ** 0.25
        ts_hi = (2.0 * p.q * bp / ((2.0 - eps) * sig)) ** 0.25
    return EquilibriumBounds(ta_lo, ta_hi, ts_lo, ts_hi)


def solve_ta1(p: ModelParams, t_s: float) -> float:
    """Atmospheric temperature balancing the first equation at surface t_s."""
    if t_s < 0:
        raise NegativeInput(f"t_s must be >= 0, got {t_s}")
    if p.lam == 0.0:
        return INV_2_QUARTER * t_s
    if t_s == 0.0:
        return 0.0
    lam, es = p.lam, p.epsilon_a * p.sigma_b
    c = lam * t_s + es * t_s ** 4
    lo, hi = INV_2_QUARTER * t_s, t_s
    # g is convex and increasing, so Newton from the right end is monotone;
    # the bisection fallback only guards against rounding at the bracket ends
    x = hi
    for _ in range(100):
        g = lam * x + 2.0 * es * x ** 4 - c
        if g > 0:
            hi = x
        else:
            lo = x
        dx = g / (lam + 8.0 * es * x ** 3)
        xn = x - dx
        if not lo <= xn <= hi:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-14 * t_s:
            return xn
        x = xn
    return x


def solve_ta1_array(p: ModelParams, t_s: np.ndarray) -> np.ndarray:
    """Vectorised solve_ta1 for grid scans."""
    t_s = np.asarray(t_s, dtype=float)
    if np.any(t_s < 0):
        raise NegativeInput("t_s must be >= 0")
    if p.lam == 0.0:
        return INV_2_QUARTER * t_s
    lam, es = p.lam, p.epsilon_a * p.sigma_b
    c = lam * t_s + es * t_s ** 4
    lo = INV_2_QUARTER * t_s
    x = t_s.copy()
    for _ in range(100):
        g = lam * x + 2.0 * es * x ** 4 - c
        xn = np.maximum(x - g / (lam + 8.0 * es * x ** 3), lo)
        done = np.all(np.abs(xn - x) <= 1e-14 * np.maximum(t_s, 1e-300))
        x = xn
        if done:
            break
    return x


def phi(p: ModelParams, t_s: float) -> float:
    if t_s < 0:
        raise NegativeInput(f"t_s must be >= 0, got {t_s}")
    ta = solve_ta1(p, t_s)
    return 0.5 * p.lam * (t_s - ta) + p.sigma_b * (1.0 - 0.5 * p.epsilon_a) * t_s ** 4


def phi_array(p: ModelParams, t_s: np.ndarray) -> np.ndarray:
    ta = solve_ta1_array(p, t_s)
    return 0.5 * p.lam * (t_s - ta) + p.sigma_b * (1.0 - 0.5 * p.epsilon_a) * t_s ** 4


def phi_prime(p: ModelParams, t_s: float) -> float:
    if t_s < 0:
        raise NegativeInput(f"t_s must be >= 0, got {t_s}")
    lam, sig, es = p.lam, p.sigma_b, p.epsilon_a * p.sigma_b
    ta = solve_ta1(p, t_s)
    num = (lam + 4.0 * es * t_s ** 3) * (lam + 4.0 * es * ta ** 3)
    den = lam + 8.0 * es * ta ** 3
    if den == 0.0:
        # t_s = 0 with lam = 0
        return 0.0
    return lam + 4.0 * sig * t_s ** 3 - num / den


def phi_curve(p: ModelParams, n: int = 512, t_max: Optional[float] = None):
    """Samples (T_s, Phi(T_s), q beta_s(T_s)) for plotting."""
    if t_max is None:
        t_max = 1.5 * equilibrium_bounds(p).ts_hi
    ts = np.linspace(0.0, t_max, n)
    return ts, phi_array(p, ts), p.q * coalbedo_eval(p.coalbedo_s, ts)


def _mismatch(p: ModelParams, ts: float) -> float:
    return phi(p, ts) - p.q * coalbedo_eval(p.coalbedo_s, ts)


def _mismatch_array(p: ModelParams, ts: np.ndarray) -> np.ndarray:
    return phi_array(p, ts) - p.q * coalbedo_eval(p.coalbedo_s, ts)


def normalized_residual(p: ModelParams, s) -> float:
    """Largest flux imbalance of the two layers divided by q beta_+."""
    fa, fs = rates(p, *s)
    return max(abs(fa) * p.gamma_a, abs(fs) * p.gamma_s) / (p.q * p.coalbedo_s.beta_plus)


def _class_of(p: ModelParams, ts: float) -> EqClass:
    r = p.coalbedo_s
    if abs(ts - r.t_minus) <= KINK_TOL or abs(ts - r.t_plus) <= KINK_TOL:
        return EqClass.KINK
    if ts < r.t_minus:
        return EqClass.COLD
    if ts > r.t_plus:
        return EqClass.WARM
    return EqClass.INTERMEDIATE


def _sign_brackets(ts: np.ndarray, h: np.ndarray) -> list[tuple[float, float]]:
    idx = np.nonzero(np.sign(h[:-1]) * np.sign(h[1:]) <= 0)[0]
    out = []
    for i in idx:
        if h[i] == 0.0 and i > 0 and (ts[i], ts[i]) in out:
            continue
        out.append((ts[i], ts[i + 1]))
    return out


def find_equilibria(p: ModelParams, grid_points: int = 4096,
                    classify_all: bool = True) -> list[Equilibrium]:
    """All equilibria sorted by T_s, optionally with stability filled in."""
    _require_subcritical(p)
    _require_no_beta_a(p)
    t_hi = 1.5 * equilibrium_bounds(p).ts_hi
    ts = np.linspace(0.0, t_hi, grid_points)
    h = _mismatch_array(p, ts)
    scale = p.q * p.coalbedo_s.beta_plus

    # cells to inspect: sign changes plus bracketless local minima of |h|
    cells = set(np.nonzero(np.sign(h[:-1]) != np.sign(h[1:]))[0].tolist())
    cells.update(np.nonzero(h[:-1] == 0.0)[0].tolist())
    ah = np.abs(h)
    mins = np.nonzero((ah[1:-1] <= ah[:-2]) & (ah[1:-1] <= ah[2:])
                      & (ah[1:-1] < TANGENCY_REL * scale * 1e3))[0] + 1
    for i in mins:
        cells.update((i - 1, i))

    roots: list[tuple[float, bool]] = []
    for i in sorted(cells):
        # resample the cell finely; catches two roots sharing a cell
        sub = np.linspace(ts[i], ts[i + 1], 17)
        hs = _mismatch_array(p, sub)
        for a, b in _sign_brackets(sub, hs):
            # the scalar and array paths can disagree in the last ulp
            fa, fb = _mismatch(p, a), _mismatch(p, b)
            if fa == 0.0 or a == b:
                roots.append((a, False))
            elif fb == 0.0:
                roots.append((b, False))
            elif (fa > 0) != (fb > 0):
                roots.append((brentq(lambda x: _mismatch(p, x), a, b,
                                     xtol=1e-12, rtol=4 * np.finfo(float).eps), False))
            else:
                roots.append((a if abs(fa) <= abs(fb) else b, False))

    # a ramp corner can touch q beta_s without a sign change; test it exactly
    corners = [c for c in (p.coalbedo_s.t_minus, p.coalbedo_s.t_plus)
               if abs(_mismatch(p, c)) <= 1e-12 * scale]
    roots.extend((c, False) for c in corners)
    dt = ts[1] - ts[0]

    for i in mins:
        lo, hi = ts[i - 1], ts[min(i + 1, grid_points - 1)]
        if np.any(np.sign(h[i - 1:i + 2]) != np.sign(h[i])):
            continue
        if any(lo - dt <= c <= hi + dt for c in corners):
            continue
        res = minimize_scalar(lambda x: abs(_mismatch(p, x)), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-10})
        if abs(res.fun) < TANGENCY_REL * scale:
            roots.append((float(res.x), True))

    roots.sort()
    merged: list[tuple[float, bool]] = []
    for r, dbl in roots:
        if merged and abs(r - merged[-1][0]) <= 1e-8:
            merged[-1] = (merged[-1][0], merged[-1][1] or dbl)
        else:
            merged.append((r, dbl))

    out = []
    for r, dbl in merged:
        st = State(solve_ta1(p, r), r)
        e = Equilibrium(st, _class_of(p, r), normalized_residual(p, st), double_root=dbl)
        out.append(classify(p, e) if classify_all else e)
    return out


def classify(p: ModelParams, e: Equilibrium) -> Equilibrium:
    """Fill in trace, determinant, eigenvalues and a stability verdict."""
    if e.eq_class is EqClass.KINK:
        st = Stability(float("nan"), float("nan"), (), Verdict.DEGENERATE, 0.0)
        return replace(e, stability=st)
    ta, ts = e.state
    J = jacobian(p, e.state)
    det, tr = J.determinant, J.trace
    scale = abs(J.a11 * J.a22) + abs(J.a12 * J.a21)
    es = p.epsilon_a * p.sigma_b
    dbeta = coalbedo_slope(p.coalbedo_s, ts).left
    factored = ((p.lam + 8.0 * es * ta ** 3) * (phi_prime(p, ts) - p.q * dbeta)
                / (p.gamma_a * p.gamma_s))
    cross = abs(det - factored) / scale if scale > 0 else 0.0
    if e.double_root or abs(det) <= 1e-12 * scale:
        verdict = Verdict.DEGENERATE
    elif det < 0:
        verdict = Verdict.UNSTABLE
    elif tr < 0:
        verdict = Verdict.STABLE
    else:
        verdict = Verdict.UNSTABLE
    return replace(e, stability=Stability(tr, det, J.eigenvalues, verdict, cross))


def stable_equilibria(eqs: list[Equilibrium]) -> list[Equilibrium]:
    return [e for e in eqs if e.stable]


def is_bistable(eqs: list[Equilibrium]) -> bool:
    """True for the census (stable cold, unstable intermediate, stable warm)."""
    if len(eqs) != 3:
        return False
    c, m, w = eqs
    return (c.eq_class is EqClass.COLD and m.eq_class is EqClass.INTERMEDIATE
            and w.eq_class is EqClass.WARM and c.stable and w.stable
            and m.stability is not None and m.stability.verdict is Verdict.UNSTABLE)


def equilibrium_to_dict(e: Equilibrium) -> dict:
    st = e.stability
    d = {
        "T_a": e.t_a,
        "T_s": e.t_s,
        "class": e.eq_class.value,
        "residual": e.residual,
        "double_root": e.double_root,
    }
    if st is not None:
        d.update({
            "verdict": st.verdict.value,
            "trace": st.trace,
            "determinant": st.determinant,
            "eigenvalues": [[z.real, z.imag] for z in st.eigenvalues],
        })
    return d
