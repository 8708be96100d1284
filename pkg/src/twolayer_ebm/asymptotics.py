"""Convexity diagnostics for Phi and blow-up certificates for eps_a > 2.

Convexity.  With rho = T_a1(T_s)/T_s, the balance of the first equation reads
L(rho) = K_ph / T_s^3 where L(x) = (2x^4 - 1)/(1 - x) and K_ph = lam/(eps sigma).
The second derivative of Phi factors as

    Phi'' = 3 lam K_ph^{-1/3} (1 - rho)^{2/3} (2 rho^4 - 1)^{4/3} N*(rho),

so the sign of Phi'' is the sign of N*, a function of rho and eps_a only.

Blow-up.  For eps_a > 2 and lam = 0 the escape region

    sigma T_s^4 - q beta_s(T_s) < eps sigma T_a^4 < eps sigma T_s^4 / 2

is forward invariant, both temperatures grow in it, and once T_s >= mu T_a
with 2^{1/4} < mu < mu* the atmosphere obeys a differential inequality
that forces blow-up before tau0 + gamma_a / (3 eps sigma (mu^4 - 2) T_a(tau0)^3).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .equilibria import phi, solve_ta1
from .errors import (DomainError, EpsilonNotSupercritical, EpsilonOutOfRange, LambdaZero,
                     NoEntry)
from .integrator import IntegrationOptions, Outcome, integrate
from .model import ModelParams, State, coalbedo_eval, rates

RHO_MIN = 2.0 ** -0.25
MU_MIN = 2.0 ** 0.25
ENDPOINT_GUARD = 1e-9


# ---------------------------------------------------------------- convexity

def L_eval(x: float) -> float:
    if not RHO_MIN <= x < 1.0:
        raise DomainError(f"L is defined on [2^-1/4, 1), got {x}")
    # the numerator vanishes at the left end; keep roundoff from making it negative
    return max(2.0 * x ** 4 - 1.0, 0.0) / (1.0 - x)


def L_inverse(y: float) -> float:
    """Solve L(x) = y by bisection in u = 1 - x (keeps precision near x = 1)."""
    if not y >= 0 or not math.isfinite(y):
        raise DomainError(f"L_inverse needs finite y >= 0, got {y}")
    if y == 0.0:
        return RHO_MIN

    def g(u):
        return (2.0 * (1.0 - u) ** 4 - 1.0) - y * u

    lo, hi = 0.0, 1.0 - RHO_MIN      # g(lo) > 0 > g(hi)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    return 1.0 - 0.5 * (lo + hi)


def rho_of_ts(p: ModelParams, t_s: float) -> float:
    if p.lam == 0.0:
        raise LambdaZero("rho is identically 2^-1/4 when lam = 0")
    if not t_s > 0:
        raise DomainError(f"t_s must be > 0, got {t_s}")
    k_ph = p.lam / (p.epsilon_a * p.sigma_b)
    rho = L_inverse(k_ph / t_s ** 3)
    direct = solve_ta1(p, t_s) / t_s
    if abs(rho - direct) > 1e-10 * direct:
        raise DomainError(f"rho cross-check failed: {rho} vs {direct}")
    return rho


def N_eval(rho):
    """N(rho) on the closed interval [2^-1/4, 1]; vectorised."""
    r = np.asarray(rho, dtype=float)
    if np.any((r < RHO_MIN - 1e-15) | (r > 1.0)):
        raise DomainError("N is evaluated on [2^-1/4, 1]")
    w = 2.0 * r ** 4 - 1.0
    d = 8.0 * r ** 3 - 6.0 * r ** 4 - 1.0
    val = 1.0 - 1.5 * (24.0 * r ** 2 * w * (1.0 - r) ** 2 / d ** 2 + 2.0 * w / d)
    return float(val) if np.ndim(rho) == 0 else val


def N_star_eval(p_or_eps, rho):
    """N*(rho) for the absorptivity of p (or a bare eps_a); vectorised."""
    eps = p_or_eps.epsilon_a if isinstance(p_or_eps, ModelParams) else float(p_or_eps)
    r = np.asarray(rho, dtype=float)
    if np.any((r < RHO_MIN + ENDPOINT_GUARD) | (r > 1.0 - ENDPOINT_GUARD)):
        raise DomainError("N* is singular at rho = 2^-1/4; evaluate inside the guards")
    w = 2.0 * r ** 4 - 1.0
    d = 8.0 * r ** 3 - 6.0 * r ** 4 - 1.0
    val = -N_eval(r) / d + 4.0 * (1.0 / eps - 0.5) / w ** 2
    return float(val) if np.ndim(rho) == 0 else val


def phi_second_closed(p: ModelParams, t_s: float) -> float:
    """Phi''(t_s) from the factored form; exact quartic value when lam = 0."""
    if not t_s > 0:
        raise DomainError(f"t_s must be > 0, got {t_s}")
    if p.lam == 0.0:
        return 12.0 * p.sigma_b * (1.0 - 0.5 * p.epsilon_a) * t_s ** 2
    k_ph = p.lam / (p.epsilon_a * p.sigma_b)
    rho = rho_of_ts(p, t_s)
    return (3.0 * p.lam / k_ph ** (1.0 / 3.0) * (1.0 - rho) ** (2.0 / 3.0)
            * (2.0 * rho ** 4 - 1.0) ** (4.0 / 3.0) * N_star_eval(p, rho))


def phi_second_fd(p: ModelParams, t_s: float, h: Optional[float] = None) -> float:
    """Second central difference of phi with one Richardson step."""
    if h is None:
        h = 1e-2 * t_s

    def d2(hh):
        return (phi(p, t_s + hh) - 2.0 * phi(p, t_s) + phi(p, t_s - hh)) / hh ** 2

    return (4.0 * d2(0.5 * h) - d2(h)) / 3.0


def n_root(n: int = 10_001) -> float:
    """The zero of N in (2^-1/4, 1): scan for the sign change, polish with brentq."""
    r = np.linspace(RHO_MIN, 1.0, n)
    v = N_eval(r)
    idx = np.nonzero(np.sign(v[1:]) != np.sign(v[:-1]))[0]
    if idx.size != 1:
        raise DomainError(f"expected one sign change of N, found {idx.size}")
    i = int(idx[0])
    return float(brentq(N_eval, r[i], r[i + 1], xtol=1e-15, rtol=1e-15))


def rho_grid(n: int = 100_000) -> np.ndarray:
    return np.linspace(RHO_MIN + ENDPOINT_GUARD, 1.0 - ENDPOINT_GUARD, n)


@functools.lru_cache(maxsize=8)
def _nstar_parts(n: int):
    r = rho_grid(n)
    w = 2.0 * r ** 4 - 1.0
    d = 8.0 * r ** 3 - 6.0 * r ** 4 - 1.0
    return r, -N_eval(r) / d, 4.0 / w ** 2


def n_star_min(eps: float, n: int = 100_000) -> float:
    _, a, b = _nstar_parts(n)
    return float(np.min(a + (1.0 / eps - 0.5) * b))


def n_star_sign_changes(eps: float, n: int = 100_000) -> int:
    _, a, b = _nstar_parts(n)
    s = np.sign(a + (1.0 / eps - 0.5) * b)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def bracket_epsilon_a0(tol: float = 1e-4, n: int = 100_000) -> tuple[float, float]:
    """Bracket of width <= tol around the onset of negative N* values."""
    if not tol > 0:
        raise DomainError("tol must be > 0")
    lo, hi = 1.9, 2.0 - 1e-12
    if n_star_min(lo, n) < 0 or not n_star_min(hi, n) < 0:
        raise DomainError("sign change of min N* not bracketed by (1.9, 2)")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if n_star_min(mid, n) < 0:
            hi = mid
        else:
            lo = mid
    assert 1.9 < lo < hi < 2.0
    return lo, hi


@dataclass(frozen=True)
class ConvexityReport:
    epsilon_a: float
    rho: np.ndarray
    N: np.ndarray
    N_star: np.ndarray
    min_N_star: float
    sign_changes: int
    phi2_all_positive: Optional[bool]
    eps_a0_bracket: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "epsilon_a": self.epsilon_a,
            "min_N_star": self.min_N_star,
            "N_star_sign_changes": self.sign_changes,
            "phi_second_all_positive": self.phi2_all_positive,
            "epsilon_a0_bracket": list(self.eps_a0_bracket),
            "N_at_left_endpoint": float(N_eval(RHO_MIN)),
            "N_root": n_root(),
        }


def convexity_report(p: ModelParams, tol: float = 1e-4, n_rho: int = 2001,
                     ts_grid: Optional[np.ndarray] = None) -> ConvexityReport:
    if not 0 < p.epsilon_a < 2:
        raise EpsilonOutOfRange(f"epsilon_a must lie in (0, 2), got {p.epsilon_a}")
    r = np.linspace(RHO_MIN + ENDPOINT_GUARD, 1.0 - ENDPOINT_GUARD, n_rho)
    ns = N_star_eval(p, r)
    pos = None
    if p.lam > 0:
        if ts_grid is None:
            ts_grid = np.linspace(1.0, 500.0, 500)
        pos = bool(all(phi_second_closed(p, float(x)) > 0 for x in ts_grid))
    return ConvexityReport(p.epsilon_a, r, N_eval(r), ns, n_star_min(p.epsilon_a),
                           n_star_sign_changes(p.epsilon_a), pos, bracket_epsilon_a0(tol))


# ------------------------------------------------------------------ blow-up

def _require_supercritical(p: ModelParams):
    if not p.epsilon_a > 2:
        raise EpsilonNotSupercritical(f"need epsilon_a > 2, got {p.epsilon_a}")


def mu_star_residual(p: ModelParams, mu: float) -> float:
    eps = p.epsilon_a
    return p.gamma_s / p.gamma_a * mu - (eps - mu ** 4) / (eps * (mu ** 4 - 2.0))


def mu_star(p: ModelParams) -> float:
    """Critical comparison slope, by bisection on (2^{1/4}, eps^{1/4})."""
    _require_supercritical(p)
    lo, hi = MU_MIN, p.epsilon_a ** 0.25
    # residual -> -inf at the left end and is positive at the right end
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if mu_star_residual(p, mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _solve_lin_quartic(lam: float, c: float, rhs: float) -> float:
    """Nonnegative root of lam x + c x^4 = rhs (0 when rhs <= 0)."""
    if rhs <= 0:
        return 0.0
    x = (rhs / c) ** 0.25 if lam == 0 else min((rhs / c) ** 0.25, rhs / lam)
    for _ in range(200):
        g = lam * x + c * x ** 4 - rhs
        xn = x - g / (lam + 4.0 * c * x ** 3)
        if abs(xn - x) <= 1e-15 * x:
            return xn
        x = xn
    return x


def _ra(p: ModelParams, ta: float) -> float:
    return p.q * coalbedo_eval(p.coalbedo_a, ta) if p.coalbedo_a is not None else 0.0


@functools.lru_cache(maxsize=64)
def escape_floor(p: ModelParams, t_lo: float = 1.0, t_hi: float = 1.0e6,
                 n: int = 2048) -> float:
    """Smallest T_a on a geometric grid past which the crossing condition
    T_a2(T_s1(T_a)) < T_a holds at every later grid point."""
    _require_supercritical(p)
    lam, sig, es = p.lam, p.sigma_b, p.epsilon_a * p.sigma_b
    grid = np.geomspace(t_lo, t_hi, n)
    ok = np.zeros(n, dtype=bool)
    for i, ta in enumerate(grid):
        rhs1 = lam * ta + 2.0 * es * ta ** 4 - _ra(p, ta)
        if rhs1 <= 0:
            continue
        ts1 = _solve_lin_quartic(lam, es, rhs1)
        rhs2 = lam * ts1 + sig * ts1 ** 4 - p.q * coalbedo_eval(p.coalbedo_s, ts1)
        ok[i] = _solve_lin_quartic(lam, es, rhs2) < ta
    if not ok[-1]:
        raise DomainError("escape-region floor not found below the scan ceiling")
    bad = np.nonzero(~ok)[0]
    return float(grid[0] if bad.size == 0 else grid[bad[-1] + 1])


def in_escape_region(p: ModelParams, s) -> bool:
    _require_supercritical(p)
    ta, ts = float(s[0]), float(s[1])
    sig, eps = p.sigma_b, p.epsilon_a
    if p.lam == 0.0 and p.coalbedo_a is None:
        mid = eps * sig * ta ** 4
        return sig * ts ** 4 - p.q * coalbedo_eval(p.coalbedo_s, ts) < mid < 0.5 * eps * sig * ts ** 4
    fa, fs = rates(p, ta, ts)
    return fa > 0 and fs > 0 and ta >= escape_floor(p)


def choose_mu(p: ModelParams, s, n_grid: int = 64) -> Optional[float]:
    """Comparison slope for the bound, or None if the ratio is too close to 2^{1/4}."""
    ms = mu_star(p)
    ratio = s[1] / s[0]
    mid = 0.5 * (MU_MIN + ms)
    if ratio > mid:
        return mid
    grid = np.linspace(MU_MIN, ms, n_grid + 2)[1:-1]
    cand = grid[grid < ratio]
    return float(cand[-1]) if cand.size else None


def blowup_time_remainder(p: ModelParams, ta: float, mu: float) -> float:
    return p.gamma_a / (3.0 * p.epsilon_a * p.sigma_b * (mu ** 4 - 2.0) * ta ** 3)


def escape_remainder_bound(p: ModelParams, s) -> Optional[float]:
    """Remaining time to blow-up from a state in the escape region (lam = 0)."""
    if not (p.epsilon_a > 2 and p.lam == 0.0 and p.coalbedo_a is None):
        return None
    if not in_escape_region(p, s):
        return None
    mu = choose_mu(p, s)
    return None if mu is None else blowup_time_remainder(p, s[0], mu)


@dataclass(frozen=True)
class BlowupCertificate:
    tau0: float
    state0: State
    mu: float
    mu_star: float
    bound: float
    observed_escape: Optional[float]
    comparison_holds: bool
    stays_in_region: bool
    ratio_in_range: bool

    @property
    def valid(self) -> bool:
        return (self.observed_escape is not None and self.observed_escape <= self.bound
                and self.comparison_holds)

    def to_dict(self) -> dict:
        return {
            "tau0_seconds": self.tau0,
            "T_a_tau0": self.state0.t_a,
            "T_s_tau0": self.state0.t_s,
            "mu": self.mu,
            "mu_star": self.mu_star,
            "bound_seconds": self.bound,
            "observed_escape_seconds": self.observed_escape,
            "comparison_holds": self.comparison_holds,
            "stays_in_region": self.stays_in_region,
            "ratio_in_range": self.ratio_in_range,
            "valid": self.valid,
        }


def blow_up_certificate(p: ModelParams, s0,
                        opts: IntegrationOptions = IntegrationOptions()) -> BlowupCertificate:
    _require_supercritical(p)
    if not (s0[0] > 0 and s0[1] > 0):
        raise DomainError("s0 must be positive")
    traj = integrate(p, s0, opts)
    inside = np.array([in_escape_region(p, (a, b)) for a, b in zip(traj.t_a, traj.t_s)])
    hits = np.nonzero(inside)[0]
    if hits.size == 0:
        raise NoEntry(f"no entry into the escape region ({traj.termination.outcome.value})")
    i0 = int(hits[0])
    ms = mu_star(p)
    s_entry = State(float(traj.t_a[i0]), float(traj.t_s[i0]))
    # a state just across C1 may be too close to 2^{1/4}; move on to the next sample
    mu = None
    for j in hits:
        mu = choose_mu(p, (traj.t_a[j], traj.t_s[j]))
        if mu is not None:
            i0 = int(j)
            s_entry = State(float(traj.t_a[j]), float(traj.t_s[j]))
            break
    if mu is None:
        raise NoEntry("ratio T_s/T_a never separated from 2^{1/4}")
    tau0 = float(traj.t[i0])
    bound = tau0 + blowup_time_remainder(p, s_entry.t_a, mu)
    tail_a, tail_s = traj.t_a[i0:], traj.t_s[i0:]
    comparison = bool(np.all(tail_s >= mu * tail_a))
    stays = bool(np.all(inside[int(hits[0]):]))
    # inside E the ratio exceeds 2^{1/4}; the upper side eps^{1/4} is only
    # approached once q beta_s is negligible, so it is checked at escape
    ratio = traj.t_s[int(hits[0]):] / traj.t_a[int(hits[0]):]
    in_range = bool(np.all(ratio > MU_MIN) and ratio[-1] < p.epsilon_a ** 0.25)
    observed = traj.termination.time if traj.termination.outcome is Outcome.BLOWUP else None
    return BlowupCertificate(tau0, s_entry, mu, ms, bound, observed, comparison, stays, in_range)
