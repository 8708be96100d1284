"""Acceptance criteria 1-10, each with its tolerance and runtime budget.

Every criterion prints one PASS/FAIL line.  Run with ``pytest
tests/test_acceptance.py`` or directly as ``python3 tests/test_acceptance.py``.
"""

import math
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from oracles import lam0_oracle, newton_equilibrium  # noqa: E402

from twolayer_ebm.asymptotics import (RHO_MIN, N_eval, blow_up_certificate,  # noqa: E402
                                      bracket_epsilon_a0, n_root, phi_second_closed,
                                      phi_second_fd)
from twolayer_ebm.basins import axis_threshold, basin_map, capture  # noqa: E402
from twolayer_ebm.equilibria import (EqClass, Verdict, equilibrium_bounds,  # noqa: E402
                                     find_equilibria)
from twolayer_ebm.integrator import (IntegrationOptions, detect_monotone_tail,  # noqa: E402
                                     integrate, invariant_rectangle)
from twolayer_ebm.model import CoalbedoRamp, ModelParams  # noqa: E402
from twolayer_ebm.sensitivity import (d_eq_d_epsilon, d_eq_d_lambda,  # noqa: E402
                                      greenhouse_jump, sweep)

SEED = 12345


class Result:
    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.failures: list[str] = []
        self.notes: list[str] = []
        self.elapsed = 0.0

    def check(self, cond, msg):
        if not cond:
            self.failures.append(msg)

    @property
    def passed(self):
        return not self.failures and self.elapsed < self.budget

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        info = "; ".join(self.notes)
        bad = "" if not self.failures else " | " + "; ".join(self.failures[:3])
        over = "" if self.elapsed < self.budget else f" | over budget {self.budget:g} s"
        return (f"criterion {self.number:2d} {status}: {self.title} "
                f"({self.elapsed:.2f} s) {info}{bad}{over}")


def timed(number, title, budget):
    def wrap(fn):
        def run():
            res = Result(number, title, budget)
            t0 = time.perf_counter()
            fn(res)
            res.elapsed = time.perf_counter() - t0
            return res
        run.__name__ = fn.__name__
        return run
    return wrap


# 1 ------------------------------------------------------------------------
@timed(1, "equilibria match piecewise closed forms at lam=0", 1.0)
def criterion_1(res):
    rng = np.random.default_rng(SEED)
    worst_ts = worst_ta = 0.0
    for _ in range(50):
        lo = rng.uniform(220, 260)
        ramp = CoalbedoRamp(rng.uniform(0.2, 0.4), rng.uniform(0.6, 0.8), lo,
                            lo + rng.uniform(15, 45))
        eps = rng.uniform(0.0, 2.0)
        while eps == 0.0:
            eps = rng.uniform(0.0, 2.0)
        p = ModelParams(epsilon_a=eps, q=rng.uniform(250, 650), coalbedo_s=ramp)
        eqs = find_equilibria(p, classify_all=False)
        ref = lam0_oracle(p)
        if len(eqs) != len(ref):
            res.check(False, f"count {len(eqs)} vs {len(ref)} at eps={eps:.4f}")
            continue
        for e, t in zip(eqs, ref):
            worst_ts = max(worst_ts, abs(e.t_s - t) / t)
            worst_ta = max(worst_ta, abs(e.t_a - 2 ** -0.25 * e.t_s) / e.t_a)
    res.check(worst_ts <= 1e-9, f"T_s rel err {worst_ts:.2e}")
    res.check(worst_ta <= 1e-10, f"T_a rel err {worst_ta:.2e}")
    res.notes.append(f"max rel err T_s {worst_ts:.1e}, T_a {worst_ta:.1e}")


# 2 and 3 share one census --------------------------------------------------
def _census():
    out = []
    for eps in np.linspace(0.1, 1.0, 21)[1:]:
        for lam in np.linspace(0.0, 200.0, 20):
            p = ModelParams(epsilon_a=float(eps), lam=float(lam))
            out.append((p, find_equilibria(p)))
    return out


_CENSUS = {}


def census():
    if "data" not in _CENSUS:
        t0 = time.perf_counter()
        _CENSUS["data"] = _census()
        _CENSUS["time"] = time.perf_counter() - t0
    return _CENSUS["data"], _CENSUS["time"]


@timed(2, "at most three equilibria, all inside the bounds", 10.0)
def criterion_2(res):
    data, _ = census()
    counts = {}
    for p, eqs in data:
        n = len(eqs)
        counts[n] = counts.get(n, 0) + 1
        res.check(n in (1, 2, 3), f"{n} equilibria at eps={p.epsilon_a}, lam={p.lam}")
        b = equilibrium_bounds(p)
        for e in eqs:
            res.check(b.contains(e.state), f"{e.state} outside bounds")
    res.notes.append(f"census {dict(sorted(counts.items()))}")


@timed(3, "flat-piece equilibria stable, intermediate unstable", 1.0)
def criterion_3(res):
    data, _ = census()
    n_flat = n_mid = 0
    for p, eqs in data:
        for e in eqs:
            if e.eq_class in (EqClass.COLD, EqClass.WARM):
                n_flat += 1
                res.check(e.stability.verdict is Verdict.STABLE,
                          f"{e.eq_class.value} not stable at eps={p.epsilon_a}, lam={p.lam}")
        if len(eqs) == 3:
            mid = eqs[1]
            n_mid += 1
            res.check(mid.stability.verdict is Verdict.UNSTABLE
                      and mid.stability.determinant < 0,
                      f"intermediate not a saddle at eps={p.epsilon_a}, lam={p.lam}")
    res.notes.append(f"{n_flat} stable flat-piece states, {n_mid} saddles")


# 4 ------------------------------------------------------------------------
@timed(4, "global convergence from a 20x20 grid of starts", 30.0)
def criterion_4(res):
    grid = np.linspace(0.0, 400.0, 20)
    worst = 0.0
    n = 0
    for lam in (0.0, 50.0):
        p = ModelParams(lam=lam)
        eqs = find_equilibria(p)
        pts = np.array([e.state for e in eqs])
        for ta in grid:
            for ts in grid:
                tr = integrate(p, (ta, ts))
                n += 1
                if not tr.converged:
                    res.check(False, f"{tr.termination.outcome.value} from ({ta}, {ts})")
                    continue
                try:
                    detect_monotone_tail(tr, 1e-9 * 400)
                except Exception as exc:  # noqa: BLE001
                    res.check(False, f"no monotone tail from ({ta}, {ts}): {exc}")
                d = np.max(np.abs(pts - np.array(tr.last)), axis=1).min()
                worst = max(worst, d)
    res.check(worst <= 1e-4, f"limit off by {worst:.2e} K")
    res.notes.append(f"{n} runs, worst limit distance {worst:.1e} K")


# 5 ------------------------------------------------------------------------
def _fd(p, e, name, h):
    """Central difference, or a second-order forward one at a lower bound of zero."""
    base = getattr(p, name)
    if base - h >= 0:
        lo = newton_equilibrium(p.replace(**{name: base - h}), e.state)
        hi = newton_equilibrium(p.replace(**{name: base + h}), e.state)
        return (hi - lo) / (2 * h)
    x0 = newton_equilibrium(p, e.state)
    x1 = newton_equilibrium(p.replace(**{name: base + h}), e.state)
    x2 = newton_equilibrium(p.replace(**{name: base + 2 * h}), e.state)
    return (-3 * x0 + 4 * x1 - x2) / (2 * h)


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


@timed(5, "sensitivity formulas and signs along two sweeps", 10.0)
def criterion_5(res):
    worst = 0.0
    n = 0
    runs = [(ModelParams(lam=1.0), "epsilon_a", 0.3, 1.9),
            (ModelParams(), "lambda", 0.0, 100.0)]
    for base, param, lo, hi in runs:
        sw = sweep(base, param, lo, hi, 100)
        for rec in sw.records:
            e = rec.equilibrium
            if e.eq_class not in (EqClass.COLD, EqClass.WARM):
                continue
            p = base.replace(**{"epsilon_a" if param == "epsilon_a" else "lam": rec.value})
            dl, de = d_eq_d_lambda(p, e), d_eq_d_epsilon(p, e)
            fl = _fd(p, e, "lam", 1e-4 * max(p.lam, 1.0))
            fe = _fd(p, e, "epsilon_a", 1e-5)
            for a, b in ((dl.d_ta, fl[0]), (dl.d_ts, fl[1]), (de.d_ta, fe[0]), (de.d_ts, fe[1])):
                worst = max(worst, _rel(a, b))
            n += 1
            res.check(de.d_ts > 0, f"dTs/deps <= 0 at {param}={rec.value}")
            res.check(dl.d_ts < 0, f"dTs/dlam >= 0 at {param}={rec.value}")
            res.check(np.sign(dl.d_ta) == np.sign(1 - p.epsilon_a),
                      f"sign dTa/dlam wrong at {param}={rec.value}")
    res.check(worst <= 1e-4, f"closed form vs FD rel {worst:.2e}")
    res.notes.append(f"{n} records, worst rel diff {worst:.1e}")


# 6 ------------------------------------------------------------------------
@timed(6, "greenhouse jump 0.62 -> 0.70 (lam=1)", 5.0)
def criterion_6(res):
    p = ModelParams(lam=1.0)
    for eps in (0.62, 0.70):
        census_ = [e.eq_class for e in find_equilibria(p.replace(epsilon_a=eps))]
        res.check(census_ == [EqClass.COLD, EqClass.INTERMEDIATE, EqClass.WARM],
                  f"not bistable at eps={eps}")
    jr = greenhouse_jump(p, 0.62, 0.70)
    res.check(jr.trajectory.converged, "jump run did not converge")
    res.check(jr.new.t_s > jr.old.t_s, "warm T_s did not increase")
    res.check(jr.rate_identity_error <= 1e-12, f"rate identity {jr.rate_identity_error:.2e}")
    res.notes.append(f"T_s {jr.old.t_s:.3f} -> {jr.new.t_s:.3f} K, "
                     f"rate identity {jr.rate_identity_error:.1e}")


# 7 ------------------------------------------------------------------------
@timed(7, "axis thresholds and 128x128 basin map", 120.0)
def criterion_7(res):
    p = ModelParams()
    tol = 1e-6
    eqs = find_equilibria(p)
    plain = IntegrationOptions()
    for axis in ("horizontal", "vertical"):
        th = axis_threshold(p, axis, tol)
        res.check(th.bracket[1] - th.bracket[0] <= tol, f"{axis} bracket too wide")
        res.check(capture(p, th.start(-10 * tol), eqs, plain) == 0, f"{axis}: below not cold")
        res.check(capture(p, th.start(10 * tol), eqs, plain) == 2, f"{axis}: above not warm")
        res.notes.append(f"{axis} threshold {th.value:.6f} K")
    bm = basin_map(p, 128)
    res.check(bm.attractors == [0, 2], f"attractors {bm.attractors}")
    res.check(bm.n_unconverged == 0, f"{bm.n_unconverged} cells unconverged")
    res.check(bm.boundary_components() == 1, f"{bm.boundary_components()} boundary pieces")
    res.notes.append(f"{int(bm.boundary.sum())} boundary cells")


# 8 ------------------------------------------------------------------------
@timed(8, "convexity constants", 10.0)
def criterion_8(res):
    n0 = N_eval(RHO_MIN)
    res.check(abs(n0 - 1) <= 1e-12, f"N(2^-1/4) = {n0!r}")
    r0 = n_root()
    res.check(abs(r0 - 0.89) <= 0.01, f"root of N {r0}")
    lo, hi = bracket_epsilon_a0(1e-4)
    res.check(1.99 < lo < hi < 1.991 and hi - lo <= 1e-4, f"bracket ({lo}, {hi})")
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(20):
        p = ModelParams(lam=rng.uniform(0.5, 200), epsilon_a=rng.uniform(0.1, 1.95))
        ts = rng.uniform(150, 450)
        worst = max(worst, _rel(phi_second_closed(p, ts), phi_second_fd(p, ts)))
    res.check(worst <= 1e-5, f"Phi'' rel err {worst:.2e}")
    res.notes.append(f"rho0 {r0:.5f}, eps_a0 in ({lo:.5f}, {hi:.5f}), Phi'' err {worst:.1e}")


# 9 ------------------------------------------------------------------------
@timed(9, "blow-up certificates for eps in {2.5, 3, 4}", 30.0)
def criterion_9(res):
    rng = np.random.default_rng(SEED)
    worst_margin = math.inf
    for eps in (2.5, 3.0, 4.0):
        p = ModelParams(epsilon_a=eps)
        for ta, ts in rng.uniform(1.0, 400.0, (10, 2)):
            c = blow_up_certificate(p, (ta, ts))
            res.check(c.comparison_holds, f"comparison fails eps={eps} from ({ta:.1f}, {ts:.1f})")
            res.check(c.observed_escape is not None and c.observed_escape <= c.bound,
                      f"escape after bound eps={eps}")
            if c.observed_escape is not None:
                worst_margin = min(worst_margin, (c.bound - c.observed_escape) / c.bound)
    res.notes.append(f"smallest relative slack {worst_margin:.2f}")


# 10 -----------------------------------------------------------------------
@timed(10, "invariant rectangles and positivity", 20.0)
def criterion_10(res):
    rng = np.random.default_rng(SEED)
    worst_neg = 0.0
    for eps in (0.5, 1.0, 1.9):
        p = ModelParams(epsilon_a=eps)
        starts = rng.uniform(0.0, 1000.0, (100, 2))
        # put some starts on the axes, where positivity is tightest
        starts[:5, 0] = 0.0
        starts[5:10, 1] = 0.0
        starts[10] = 0.0
        for ta, ts in starts:
            rect = invariant_rectangle(p, (ta, ts))
            tr = integrate(p, (ta, ts))
            inside = (tr.t_a <= rect.m_a).all() and (tr.t_s <= rect.m_s).all()
            res.check(inside, f"left rectangle eps={eps} from ({ta:.1f}, {ts:.1f})")
            worst_neg = min(worst_neg, tr.min_temperature())
    res.check(worst_neg >= -1e-9, f"min temperature {worst_neg}")
    res.notes.append(f"lowest temperature seen {worst_neg:.1e} K")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("crit", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 11)])
def test_acceptance(crit, capsys):
    res = crit()
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    for r in results:
        print(r.line())
    sys.exit(0 if all(r.passed for r in results) else 1)
