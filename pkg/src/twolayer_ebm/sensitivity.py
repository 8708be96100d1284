"""Parameter sensitivities of equilibria, continuation sweeps and jump experiments.

On the flat pieces of the coalbedo (beta_s' = 0) the implicit function
theorem gives closed forms for the derivatives of (T_a, T_s) with respect to
lam and eps_a.  With M the Jacobian of the unscaled balance (so that
det M = gamma_a gamma_s det J):

    d(T_a, T_s)/d lam = (T_s - T_a)/det M * (4 sigma (1 - eps) T_s^3, -4 eps sigma T_a^3)
    dT_s/d eps = [lam sigma (T_s^4 - T_a^4) + 4 eps sigma^2 T_a^3 T_s^4] / det M
    dT_a/d eps = sigma [lam (T_s^4 - T_a^4) + 4 sigma T_s^3 (T_s^4 - (2 - eps) T_a^4)] / det M
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .equilibria import EqClass, Equilibrium, find_equilibria
from .errors import (Degenerate, EpsilonOutOfRange, NotConverged, NoWarmEquilibrium, OnRamp,
                     RangeInvalid)
from .integrator import IntegrationOptions, Outcome, Trajectory, integrate
from .model import ModelParams, State, jacobian, vector_field

DET_REL_TOL = 1e-12
PARAM_ALIASES = {"lambda": "lam", "lam": "lam", "epsilon_a": "epsilon_a", "eps": "epsilon_a"}


@dataclass(frozen=True)
class Derivative:
    d_ta: float
    d_ts: float
    unproven_sign: bool = False


def _flat_det(p: ModelParams, e: Equilibrium) -> float:
    if e.eq_class not in (EqClass.COLD, EqClass.WARM):
        raise OnRamp(f"closed forms need a flat coalbedo piece, got {e.eq_class.value}")
    J = jacobian(p, e.state)
    det_m = J.determinant * p.gamma_a * p.gamma_s
    scale = (abs(J.a11 * J.a22) + abs(J.a12 * J.a21)) * p.gamma_a * p.gamma_s
    if abs(det_m) <= DET_REL_TOL * scale:
        raise Degenerate(f"determinant {det_m:.3e} too close to zero")
    return det_m


def d_eq_d_lambda(p: ModelParams, e: Equilibrium) -> Derivative:
    det_m = _flat_det(p, e)
    ta, ts = e.state
    sig, eps = p.sigma_b, p.epsilon_a
    c = (ts - ta) / det_m
    return Derivative(c * 4.0 * sig * (1.0 - eps) * ts ** 3, -c * 4.0 * eps * sig * ta ** 3)


def d_eq_d_epsilon(p: ModelParams, e: Equilibrium) -> Derivative:
    det_m = _flat_det(p, e)
    ta, ts = e.state
    sig, eps, lam = p.sigma_b, p.epsilon_a, p.lam
    d_ts = (lam * sig * (ts ** 4 - ta ** 4) + 4.0 * eps * sig ** 2 * ta ** 3 * ts ** 4) / det_m
    d_ta = sig * (lam * (ts ** 4 - ta ** 4)
                  + 4.0 * sig * ts ** 3 * (ts ** 4 - (2.0 - eps) * ta ** 4)) / det_m
    # the sign of d_ta is only established for eps >= 1 or lam = 0
    return Derivative(d_ta, d_ts, unproven_sign=(eps < 1.0 and lam > 0))


@dataclass(frozen=True)
class SweepRecord:
    param: str
    value: float
    branch: int
    equilibrium: Equilibrium
    derivative: Optional[Derivative] = None

    @property
    def flags(self) -> str:
        out = []
        if self.derivative is not None and self.derivative.unproven_sign:
            out.append("unproven_sign")
        if self.equilibrium.double_root:
            out.append("double_root")
        return ";".join(out)


@dataclass(frozen=True)
class SweepEvent:
    kind: str            # "fold" (branch ends) or "birth" (branch appears)
    branch: int
    between: tuple[float, float]
    t_s: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "branch": self.branch,
                "between": list(self.between), "T_s": self.t_s}


@dataclass(frozen=True)
class SweepResult:
    param: str
    records: list[SweepRecord]
    events: list[SweepEvent]

    def branch(self, branch_id: int) -> list[SweepRecord]:
        return [r for r in self.records if r.branch == branch_id]

    def branches_of_class(self, cls: EqClass) -> list[int]:
        ids = []
        for r in self.records:
            if r.equilibrium.eq_class is cls and r.branch not in ids:
                ids.append(r.branch)
        return ids


def _param_name(param: str) -> str:
    try:
        return PARAM_ALIASES[param]
    except KeyError:
        raise RangeInvalid(f"unknown sweep parameter {param!r}") from None


def _derivative(p: ModelParams, name: str, e: Equilibrium) -> Optional[Derivative]:
    if e.eq_class not in (EqClass.COLD, EqClass.WARM) or not e.stable:
        return None
    try:
        return d_eq_d_lambda(p, e) if name == "lam" else d_eq_d_epsilon(p, e)
    except Degenerate:
        return None


def _predictor_slope(p: ModelParams, name: str, e: Equilibrium) -> Optional[float]:
    """dT_s/dparam from the linearised balance, ramp slope included."""
    if e.eq_class is EqClass.KINK:
        return None
    ta, ts = e.state
    J = jacobian(p, e.state)
    m11, m12 = J.a11 * p.gamma_a, J.a12 * p.gamma_a
    m21, m22 = J.a21 * p.gamma_s, J.a22 * p.gamma_s
    det_m = m11 * m22 - m12 * m21
    if abs(det_m) <= 1e-6 * (abs(m11 * m22) + abs(m12 * m21)):
        return None
    if name == "lam":
        g1, g2 = ts - ta, ta - ts
    else:
        g1, g2 = p.sigma_b * (ts ** 4 - 2.0 * ta ** 4), p.sigma_b * ta ** 4
    return -(-m21 * g1 + m11 * g2) / det_m


def sweep(p: ModelParams, param: str, lo: float, hi: float, n_steps: int) -> SweepResult:
    """Continuation of every equilibrium branch over a parameter range."""
    name = _param_name(param)
    if n_steps < 2:
        raise RangeInvalid("n_steps must be >= 2")
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise RangeInvalid("sweep range must be finite")
    if name == "epsilon_a" and not (0 < min(lo, hi) and max(lo, hi) < 2):
        raise RangeInvalid(f"epsilon_a range must lie in (0, 2), got [{lo}, {hi}]")
    if name == "lam" and min(lo, hi) < 0:
        raise RangeInvalid(f"lambda range must be >= 0, got [{lo}, {hi}]")

    values = np.linspace(lo, hi, n_steps)
    records: list[SweepRecord] = []
    events: list[SweepEvent] = []
    # branch id -> (equilibrium, dT_s/dparam for the prediction step)
    active: dict[int, tuple[Equilibrium, Optional[float]]] = {}
    next_id = 0
    prev_v = None
    for v in values:
        q = p.replace(**{name: float(v)})
        eqs = find_equilibria(q)
        ts_now = [e.t_s for e in eqs]
        old_ts = {b: e.t_s for b, (e, _) in active.items()}

        def nearest_gap(x, pool):
            d = [abs(x - y) for y in pool if y != x]
            return min(d) if d else math.inf

        pairs = []
        for bid, (e_old, slope) in active.items():
            pred = e_old.t_s + (slope * (v - prev_v) if slope is not None else 0.0)
            g_old = nearest_gap(e_old.t_s, old_ts.values())
            for j, e_new in enumerate(eqs):
                if {e_old.eq_class, e_new.eq_class} == {EqClass.COLD, EqClass.WARM}:
                    continue
                cap = 0.5 * min(g_old, nearest_gap(e_new.t_s, ts_now))
                d = abs(e_new.t_s - pred)
                if d <= cap:
                    pairs.append((d, bid, j))
        # greedy matching, closest pairs first
        pairs.sort()
        taken_b, taken_e = set(), {}
        for d, bid, j in pairs:
            if bid in taken_b or j in taken_e:
                continue
            taken_b.add(bid)
            taken_e[j] = bid
        for bid in list(active):
            if bid not in taken_b:
                events.append(SweepEvent("fold", bid, (float(prev_v), float(v)),
                                         active[bid][0].t_s))
                del active[bid]
        for j, e in enumerate(eqs):
            if j not in taken_e:
                bid = next_id
                next_id += 1
                if prev_v is not None:
                    events.append(SweepEvent("birth", bid, (float(prev_v), float(v)), e.t_s))
            else:
                bid = taken_e[j]
            active[bid] = (e, _predictor_slope(q, name, e))
            records.append(SweepRecord(param, float(v), bid, e, _derivative(q, name, e)))
        prev_v = v
    return SweepResult(param, records, events)


@dataclass(frozen=True)
class JumpResult:
    old: Equilibrium
    trajectory: Trajectory
    new: Equilibrium
    rate_a_field: float
    rate_s_field: float
    rate_a_formula: float
    rate_s_formula: float

    @property
    def rate_identity_error(self) -> float:
        ea = abs(self.rate_a_field - self.rate_a_formula) / max(abs(self.rate_a_formula), 1e-300)
        es = abs(self.rate_s_field - self.rate_s_formula) / max(abs(self.rate_s_formula), 1e-300)
        return max(ea, es)


def _warm(eqs: list[Equilibrium]) -> Optional[Equilibrium]:
    w = [e for e in eqs if e.eq_class is EqClass.WARM]
    return w[-1] if w else None


def greenhouse_jump(p: ModelParams, eps_star: float, eps_plus: float,
                    opts: IntegrationOptions = IntegrationOptions(),
                    match_tol: float = 1e-4) -> JumpResult:
    """Raise eps_a from eps_star to eps_plus starting at the old warm state."""
    if not 0 < eps_star <= eps_plus < 2:
        raise EpsilonOutOfRange(f"need 0 < eps_star <= eps_plus < 2, got {eps_star}, {eps_plus}")
    p_old = p.replace(epsilon_a=eps_star)
    old = _warm(find_equilibria(p_old))
    if old is None:
        raise NoWarmEquilibrium(f"no warm equilibrium at epsilon_a={eps_star}")
    p_new = p.replace(epsilon_a=eps_plus)
    ta, ts = old.state
    fa, fs = vector_field(p_new, old.state)
    de = eps_plus - eps_star
    rate_a = p.sigma_b * de * (ts ** 4 - 2.0 * ta ** 4) / p.gamma_a
    rate_s = de * p.sigma_b * ta ** 4 / p.gamma_s
    traj = integrate(p_new, old.state, opts)
    if not traj.converged:
        raise NotConverged(f"jump run ended with {traj.termination.outcome.value}")
    new = _warm(find_equilibria(p_new))
    if new is None:
        raise NoWarmEquilibrium(f"no warm equilibrium at epsilon_a={eps_plus}")
    end = traj.last
    if max(abs(end.t_a - new.t_a), abs(end.t_s - new.t_s)) > match_tol:
        raise NotConverged("jump run did not settle on the new warm equilibrium")
    if eps_plus > eps_star and not new.t_s > old.t_s:
        raise NotConverged("new warm surface temperature is not larger")
    return JumpResult(old, traj, new, fa, fs, rate_a, rate_s)


@dataclass(frozen=True)
class HysteresisRecord:
    epsilon_a: float
    state: State
    branch: str
    outcome: Outcome


@dataclass(frozen=True)
class JumpEvent:
    between: tuple[float, float]
    from_branch: str
    to_branch: str

    def to_dict(self) -> dict:
        return {"between": list(self.between), "from": self.from_branch, "to": self.to_branch}


@dataclass(frozen=True)
class HysteresisResult:
    records: list[HysteresisRecord]
    jumps: list[JumpEvent]

    @property
    def width(self) -> Optional[float]:
        """Distance between the upward and downward jump parameters, if both occur."""
        up = [j for j in self.jumps if j.between[1] > j.between[0]]
        down = [j for j in self.jumps if j.between[1] < j.between[0]]
        if not up or not down:
            return None
        return abs(0.5 * sum(up[0].between) - 0.5 * sum(down[-1].between))


def hysteresis_loop(p: ModelParams, eps_path: Sequence[float],
                    opts: IntegrationOptions = IntegrationOptions(),
                    s0=None) -> HysteresisResult:
    """Quasi-static sweep of eps_a by full integration from the previous attractor.

    Starts from s0, or from the coldest stable equilibrium at the first path
    value.
    """
    path = [float(x) for x in eps_path]
    if not path:
        return HysteresisResult([], [])
    if any(not 0 < x < 2 for x in path):
        raise EpsilonOutOfRange("eps_path must lie in (0, 2)")
    if s0 is None:
        first = [e for e in find_equilibria(p.replace(epsilon_a=path[0])) if e.stable]
        s0 = first[0].state
    state = State(float(s0[0]), float(s0[1]))
    records: list[HysteresisRecord] = []
    jumps: list[JumpEvent] = []
    for eps in path:
        q = p.replace(epsilon_a=eps)
        traj = integrate(q, state, opts)
        state = traj.last
        eqs = find_equilibria(q)
        near = min(eqs, key=lambda e: math.hypot(e.t_a - state.t_a, e.t_s - state.t_s))
        branch = near.eq_class.value
        if records and records[-1].branch != branch:
            jumps.append(JumpEvent((records[-1].epsilon_a, eps), records[-1].branch, branch))
        records.append(HysteresisRecord(eps, state, branch, traj.termination.outcome))
    return HysteresisResult(records, jumps)


__all__ = [
    "Derivative", "SweepRecord", "SweepEvent", "SweepResult", "JumpResult",
    "HysteresisRecord", "JumpEvent", "HysteresisResult",
    "d_eq_d_lambda", "d_eq_d_epsilon", "sweep", "greenhouse_jump", "hysteresis_loop",
]
