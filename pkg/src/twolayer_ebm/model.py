"""Parameters, coalbedo ramp, vector field and Jacobian of the two-layer model.

The state is (T_a, T_s): atmosphere and surface temperature in kelvin.  The
right-hand side is

    gamma_a T_a' = -lam (T_a - T_s) + eps sigma |T_s|^3 T_s
                   - 2 eps sigma |T_a|^3 T_a + q beta_a(T_a)
    gamma_s T_s' = -lam (T_s - T_a) - sigma |T_s|^3 T_s
                   + eps sigma |T_a|^3 T_a + q beta_s(T_s)

with beta_s a piecewise-linear nondecreasing ramp and beta_a optional.
"""

from __future__ import annotations

import cmath
import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import InvalidParameter, KinkPoint

SIGMA_B = 5.67e-8
SECONDS_PER_YEAR = 365.25 * 86400.0


@dataclass(frozen=True)
class CoalbedoRamp:
    """Piecewise-linear coalbedo: flat at beta_minus below t_minus, flat at
    beta_plus above t_plus, linear in between."""

    beta_minus: float = 0.3
    beta_plus: float = 0.7
    t_minus: float = 250.0
    t_plus: float = 280.0

    def __post_init__(self):
        for name in ("beta_minus", "beta_plus", "t_minus", "t_plus"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidParameter(f"{name} must be finite, got {v!r}")
        if not self.t_plus > self.t_minus > 0:
            raise InvalidParameter(
                f"need t_plus > t_minus > 0, got t_minus={self.t_minus}, t_plus={self.t_plus}")
        if not self.beta_plus > self.beta_minus:
            raise InvalidParameter(
                f"need beta_plus > beta_minus, got {self.beta_minus}, {self.beta_plus}")
        if self.beta_minus < 0:
            raise InvalidParameter(f"beta_minus must be >= 0, got {self.beta_minus}")

    @property
    def slope(self) -> float:
        return (self.beta_plus - self.beta_minus) / (self.t_plus - self.t_minus)


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of one scenario.

    gamma_a, gamma_s, q and lam have no canonical values; the defaults here
    describe a bistable Earth-like scenario (see README).
    """

    gamma_a: float = 1.0e7
    gamma_s: float = 1.0e8
    lam: float = 0.0
    epsilon_a: float = 0.62
    sigma_b: float = SIGMA_B
    q: float = 420.0
    coalbedo_s: CoalbedoRamp = CoalbedoRamp()
    coalbedo_a: Optional[CoalbedoRamp] = None

    def __post_init__(self):
        for name in ("gamma_a", "gamma_s", "lam", "epsilon_a", "sigma_b", "q"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise InvalidParameter(f"{name} must be a finite number, got {v!r}")
        for name in ("gamma_a", "gamma_s", "sigma_b", "q", "epsilon_a"):
            if getattr(self, name) <= 0:
                raise InvalidParameter(f"{name} must be > 0, got {getattr(self, name)}")
        if self.lam < 0:
            raise InvalidParameter(f"lam must be >= 0, got {self.lam}")
        if self.coalbedo_s.beta_minus <= 0:
            raise InvalidParameter("surface coalbedo must be strictly positive")

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)


class State(NamedTuple):
    t_a: float
    t_s: float


class Slope(NamedTuple):
    """One-sided slopes of a ramp; they differ only at a corner."""

    left: float
    right: float
    kink: bool


@dataclass(frozen=True)
class Jacobian2:
    a11: float
    a12: float
    a21: float
    a22: float

    @property
    def trace(self) -> float:
        return self.a11 + self.a22

    @property
    def determinant(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    @property
    def eigenvalues(self) -> tuple[complex, complex]:
        tr = self.trace
        # discriminant written to avoid cancellation when a11 ~ a22
        disc = (self.a11 - self.a22) ** 2 + 4.0 * self.a12 * self.a21
        r = cmath.sqrt(disc)
        return ((tr - r) / 2.0, (tr + r) / 2.0)

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])


def coalbedo_eval(ramp: CoalbedoRamp, t):
    """Coalbedo at temperature ``t`` (scalar or array)."""
    if isinstance(t, np.ndarray):
        x = np.clip(t - ramp.t_minus, 0.0, ramp.t_plus - ramp.t_minus)
        return ramp.beta_minus + ramp.slope * x
    if t <= ramp.t_minus:
        return ramp.beta_minus
    if t >= ramp.t_plus:
        return ramp.beta_plus
    return ramp.beta_minus + ramp.slope * (t - ramp.t_minus)


def coalbedo_slope(ramp: CoalbedoRamp, t: float) -> Slope:
    k = ramp.slope
    if t == ramp.t_minus:
        return Slope(0.0, k, True)
    if t == ramp.t_plus:
        return Slope(k, 0.0, True)
    if ramp.t_minus < t < ramp.t_plus:
        return Slope(k, k, False)
    return Slope(0.0, 0.0, False)


def _quartic(x):
    return abs(x) ** 3 * x


def vector_field(p: ModelParams, s) -> tuple[float, float]:
    """Time derivative (dT_a/dt, dT_s/dt) in K/s."""
    ta, ts = s
    return rates(p, ta, ts)


def rates(p: ModelParams, ta, ts):
    """Vector field on scalars or equally shaped arrays."""
    es = p.epsilon_a * p.sigma_b
    qa = _quartic(ta)
    qs = _quartic(ts)
    ex = p.lam * (ta - ts)
    ra = -ex + es * qs - 2.0 * es * qa
    if p.coalbedo_a is not None:
        ra = ra + p.q * coalbedo_eval(p.coalbedo_a, ta)
    rs = ex - p.sigma_b * qs + es * qa + p.q * coalbedo_eval(p.coalbedo_s, ts)
    return ra / p.gamma_a, rs / p.gamma_s


def make_rhs(p: ModelParams):
    """Scalar right-hand side with constants pre-bound, for the stepper."""
    ga = 1.0 / p.gamma_a
    gs = 1.0 / p.gamma_s
    lam = p.lam
    sig = p.sigma_b
    es = p.epsilon_a * sig
    q = p.q
    rs_ = p.coalbedo_s
    b0, b1, t0, t1 = rs_.beta_minus, rs_.beta_plus, rs_.t_minus, rs_.t_plus
    k = rs_.slope
    ramp_a = p.coalbedo_a

    def f(ta, ts):
        qa = abs(ta) ** 3 * ta
        qs = abs(ts) ** 3 * ts
        ex = lam * (ta - ts)
        if ts <= t0:
            b = b0
        elif ts >= t1:
            b = b1
        else:
            b = b0 + k * (ts - t0)
        fa = -ex + es * qs - 2.0 * es * qa
        if ramp_a is not None:
            fa += q * coalbedo_eval(ramp_a, ta)
        return fa * ga, (ex - sig * qs + es * qa + q * b) * gs

    return f


def make_spectral_radius(p: ModelParams):
    """Upper bound on the spectral radius of the Jacobian, kinks ignored.

    The off-diagonal entries are nonnegative on the quadrant so the
    eigenvalues are real; the bound uses the steepest ramp slope.
    """
    ga, gs = p.gamma_a, p.gamma_s
    lam, sig, es = p.lam, p.sigma_b, p.epsilon_a * p.sigma_b
    qk_s = p.q * p.coalbedo_s.slope
    qk_a = p.q * p.coalbedo_a.slope if p.coalbedo_a is not None else 0.0

    def rho(ta, ts):
        ca, cs = abs(ta) ** 3, abs(ts) ** 3
        a11 = (lam + 8.0 * es * ca + qk_a) / ga
        a22 = (lam + 4.0 * sig * cs + qk_s) / gs
        off = (lam + 4.0 * es * cs) * (lam + 4.0 * es * ca) / (ga * gs)
        return 0.5 * (a11 + a22 + ((a11 - a22) ** 2 + 4.0 * off) ** 0.5)

    return rho


def jacobian(p: ModelParams, s) -> Jacobian2:
    """Jacobian of the vector field at a positive state (beta_a absent)."""
    ta, ts = s
    sl = coalbedo_slope(p.coalbedo_s, ts)
    if sl.kink:
        raise KinkPoint(f"T_s={ts} sits on a coalbedo corner")
    es = p.epsilon_a * p.sigma_b
    a11 = (-p.lam - 8.0 * es * abs(ta) ** 3) / p.gamma_a
    a12 = (p.lam + 4.0 * es * abs(ts) ** 3) / p.gamma_a
    a21 = (p.lam + 4.0 * es * abs(ta) ** 3) / p.gamma_s
    a22 = (-p.lam - 4.0 * p.sigma_b * abs(ts) ** 3 + p.q * sl.left) / p.gamma_s
    if p.coalbedo_a is not None:
        sa = coalbedo_slope(p.coalbedo_a, ta)
        if sa.kink:
            raise KinkPoint(f"T_a={ta} sits on an atmospheric coalbedo corner")
        a11 += p.q * sa.left / p.gamma_a
    return Jacobian2(a11, a12, a21, a22)
