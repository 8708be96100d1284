"""Phase-plane structure for the bistable regime.

Regions are read off the signs of the two flux balances

    g1 = -lam (T_a - T_s) + eps sigma (T_s^4 - 2 T_a^4)
    g2 = -lam (T_s - T_a) - sigma T_s^4 + eps sigma T_a^4 + q beta_s(T_s)

together with where T_s sits relative to the equilibrium temperatures
T_1 < T_2 < T_3.  The (+,+) set splits into Q1 (below T_1, flows up to the
cold state) and Q3' (between T_2 and T_3, flows up to the warm state); the
(-,-) set splits into Q1' (between T_1 and T_2) and Q3 (above T_3).  Q2 and
Q4 are the mixed-sign sets.

The separatrix between the cold and warm basins is traced forward from the
two points on the axes where capture switches from one attractor to the
other.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .equilibria import (EqClass, Equilibrium, equilibrium_bounds, find_equilibria,
                         is_bistable)
from .errors import EpsilonOutOfRange, NonConvergent, NotBistable
from .integrator import IntegrationOptions, Trajectory, integrate, integrate_batch
from .model import ModelParams, State, coalbedo_eval

# tight options for capture tests near the separatrix
CAPTURE_OPTIONS = IntegrationOptions(rel_tol=1e-11, abs_tol=1e-11,
                                     convergence_tol=1e-16, displacement_tol=1e-9)


class RegionLabel(str, enum.Enum):
    Q1 = "Q1"
    Q1P = "Q1p"
    Q2 = "Q2"
    Q3 = "Q3"
    Q3P = "Q3p"
    Q4 = "Q4"
    ON_C1 = "OnC1"
    ON_C2 = "OnC2"
    EXTERIOR = "Exterior"


def flux_balances(p: ModelParams, s) -> tuple[float, float]:
    """(g1, g2) in W m^-2; g1 omits any atmospheric coalbedo."""
    ta, ts = s
    es = p.epsilon_a * p.sigma_b
    qa, qs = abs(ta) ** 3 * ta, abs(ts) ** 3 * ts
    g1 = -p.lam * (ta - ts) + es * qs - 2.0 * es * qa
    g2 = (-p.lam * (ts - ta) - p.sigma_b * qs + es * qa
          + p.q * coalbedo_eval(p.coalbedo_s, ts))
    return g1, g2


def _equilibrium_ts(p: ModelParams, equilibria) -> list[float]:
    if equilibria is None:
        try:
            equilibria = find_equilibria(p, classify_all=False)
        except EpsilonOutOfRange:
            equilibria = []
    return sorted(e.t_s for e in equilibria)


def classify_region(p: ModelParams, s, curve_tol: float = 1e-9,
                    equilibria: Optional[Sequence[Equilibrium]] = None) -> RegionLabel:
    """Region of the open quadrant containing ``s``.

    ``curve_tol`` (W m^-2) is the band around C1 (g1 = 0) and C2 (g2 = 0)
    reported as lying on the curve; C1 wins where both vanish.  Pass the
    equilibria when classifying many points of one scenario.
    """
    g1, g2 = flux_balances(p, s)
    if abs(g1) <= curve_tol:
        return RegionLabel.ON_C1
    if abs(g2) <= curve_tol:
        return RegionLabel.ON_C2
    if (g1 > 0) != (g2 > 0):
        return RegionLabel.Q2 if g1 > 0 else RegionLabel.Q4

    roots = _equilibrium_ts(p, equilibria)
    ts = s[1]
    below = sum(1 for r in roots if r < ts)
    n = len(roots)
    if g1 > 0:
        if below == 0:
            return RegionLabel.Q1
        if n == 3 and below == 2:
            return RegionLabel.Q3P
    else:
        if below == n:
            return RegionLabel.Q3
        if n == 3 and below == 1:
            return RegionLabel.Q1P
    return RegionLabel.EXTERIOR


def region_sequence(p: ModelParams, traj: Trajectory,
                    curve_tol: float = 1e-9) -> list[RegionLabel]:
    """Labels of every accepted sample of a trajectory."""
    eqs = find_equilibria(p, classify_all=False)
    return [classify_region(p, (a, s), curve_tol, eqs)
            for a, s in zip(traj.t_a, traj.t_s)]


# --- thresholds -----------------------------------------------------------

def _require_bistable(p: ModelParams) -> list[Equilibrium]:
    eqs = find_equilibria(p)
    if not is_bistable(eqs):
        census = [e.eq_class.value for e in eqs]
        raise NotBistable(f"need (Cold, Intermediate, Warm) equilibria, got {census}")
    return eqs


def capture(p: ModelParams, s0, eqs: Sequence[Equilibrium],
            opts: IntegrationOptions = CAPTURE_OPTIONS) -> int:
    """Index (0, 1, 2) of the equilibrium a start converges to.

    A run that stalls next to the saddle is settled by the trapping region
    it ended in; 1 is returned only when that is inconclusive.
    """
    traj = integrate(p, s0, opts)
    if not traj.converged:
        raise NonConvergent(f"start {tuple(s0)} ended with "
                            f"{traj.termination.outcome.value}")
    end = np.array(traj.last)
    idx = int(np.argmin([np.hypot(*(end - np.array(e.state))) for e in eqs]))
    if idx != 1:
        return idx
    lab = classify_region(p, traj.last, equilibria=eqs)
    if lab in (RegionLabel.Q1, RegionLabel.Q1P):
        return 0
    if lab in (RegionLabel.Q3, RegionLabel.Q3P):
        return 2
    return 1


@dataclass(frozen=True)
class Threshold:
    axis: str
    value: float
    bracket: tuple[float, float]
    iterations: int

    def start(self, offset: float = 0.0) -> State:
        x = self.value + offset
        return State(x, 0.0) if self.axis == "horizontal" else State(0.0, x)


def axis_threshold(p: ModelParams, axis: str = "horizontal", tol: float = 1e-6,
                   opts: IntegrationOptions = CAPTURE_OPTIONS) -> Threshold:
    """Start coordinate on an axis where capture switches from cold to warm.

    ``axis`` is "horizontal" (starts (x, 0)) or "vertical" (starts (0, x)).
    """
    if axis not in ("horizontal", "vertical"):
        raise ValueError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    eqs = _require_bistable(p)

    def start(x):
        return (x, 0.0) if axis == "horizontal" else (0.0, x)

    lo = 0.0
    if capture(p, start(lo), eqs, opts) != 0:
        raise NonConvergent(f"the origin is not captured by the cold state on the {axis} axis")
    b = equilibrium_bounds(p)
    hi = 1.5 * (b.ta_hi if axis == "horizontal" else b.ts_hi)
    while True:
        c = capture(p, start(hi), eqs, opts)
        if c == 2:
            break
        if c == 1:
            return Threshold(axis, hi, (hi, hi), 0)
        lo = hi
        hi *= 2.0
        if hi > 1e5:
            raise NonConvergent(f"no warm capture on the {axis} axis below 1e5 K")

    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        c = capture(p, start(mid), eqs, opts)
        it += 1
        if c == 0:
            lo = mid
        elif c == 2:
            hi = mid
        else:
            return Threshold(axis, mid, (mid, mid), it)
    return Threshold(axis, 0.5 * (lo + hi), (lo, hi), it)


# --- separatrix -----------------------------------------------------------

@dataclass(frozen=True)
class Separatrix:
    points: np.ndarray                 # (n, 2) columns T_a, T_s
    anchors: tuple[State, State]       # (T_a,thr, 0) and (0, T_s,thr)
    saddle: State
    arc_approach: tuple[float, float]  # closest approach of each arc to the saddle
    closest_approach: float            # distance from the saddle to the polyline

    @property
    def t_a(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def t_s(self) -> np.ndarray:
        return self.points[:, 1]


def _segment_distance(points: np.ndarray, q) -> np.ndarray:
    """Distance from ``q`` to each segment of a polyline."""
    a, b = points[:-1], points[1:]
    d = b - a
    L2 = np.einsum("ij,ij->i", d, d)
    w = np.asarray(q) - a
    t = np.where(L2 > 0, np.einsum("ij,ij->i", w, d) / np.where(L2 > 0, L2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(*(a + t[:, None] * d - q).T)


def polyline_distance(points: np.ndarray, q) -> float:
    return float(_segment_distance(np.asarray(points, float), np.asarray(q, float)).min())


def _arc_to_saddle(p, s0, saddle, opts):
    traj = integrate(p, s0, opts)
    pts = traj.states()
    d = np.hypot(pts[:, 0] - saddle[0], pts[:, 1] - saddle[1])
    k = int(np.argmin(d))
    return pts[:k + 1], float(d[k])


def resample_arclength(points: np.ndarray, n: int, pin: Optional[int] = None) -> np.ndarray:
    """``n`` points evenly spaced in arclength.

    If ``pin`` is given, the sample closest to input vertex ``pin`` is moved
    onto it so that vertex survives the resampling.
    """
    seg = np.hypot(*np.diff(points, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    u = np.linspace(0.0, s[-1], n)
    if pin is not None:
        k = int(np.argmin(np.abs(u - s[pin])))
        if 0 < k < n - 1:
            u[k] = s[pin]
    keep = np.concatenate([[True], seg > 0])
    s, pts = s[keep], points[keep]
    return np.column_stack([np.interp(u, s, pts[:, 0]), np.interp(u, s, pts[:, 1])])


def trace_separatrix(p: ModelParams, n_points: int = 400, tol: float = 1e-6,
                     opts: IntegrationOptions = CAPTURE_OPTIONS) -> Separatrix:
    """Boundary between the cold and warm basins as a polyline.

    Runs forward from both axis thresholds, nudged ``tol`` into the quadrant,
    keeps each arc up to its closest approach to the saddle and joins them.
    Raises NonConvergent when an arc misses the saddle by more than 1e3 tol.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    eqs = _require_bistable(p)
    saddle = eqs[1].state
    th = axis_threshold(p, "horizontal", tol, opts)
    tv = axis_threshold(p, "vertical", tol, opts)
    arc1, d1 = _arc_to_saddle(p, (th.value, tol), saddle, opts)
    arc2, d2 = _arc_to_saddle(p, (tol, tv.value), saddle, opts)
    worst = max(d1, d2)
    if worst > 1e3 * tol:
        raise NonConvergent(f"separatrix arcs miss the saddle by {d1:.3g} K and {d2:.3g} K")
    anchor_h, anchor_v = State(th.value, 0.0), State(0.0, tv.value)
    joined = np.vstack([[anchor_h], arc1, arc2[::-1], [anchor_v]])
    # pin the end of the arc that came closest to the saddle
    pin = len(arc1) if d1 <= d2 else len(arc1) + 1
    pts = resample_arclength(joined, n_points, pin)
    return Separatrix(pts, (anchor_h, anchor_v), saddle, (d1, d2),
                      polyline_distance(pts, saddle))


# --- basin map ------------------------------------------------------------

BASIN_OPTIONS = IntegrationOptions(rel_tol=1e-8, abs_tol=1e-8)


@dataclass(frozen=True)
class BasinMap:
    t_a: np.ndarray          # cell-centre T_a values (columns)
    t_s: np.ndarray          # cell-centre T_s values (rows)
    ids: np.ndarray          # (len(t_s), len(t_a)); -1 for non-converged cells
    boundary: np.ndarray     # bool, same shape
    equilibria: list = field(default_factory=list)

    @property
    def attractors(self) -> list[int]:
        return sorted(int(i) for i in np.unique(self.ids) if i >= 0)

    @property
    def n_unconverged(self) -> int:
        return int((self.ids < 0).sum())

    def boundary_components(self) -> int:
        """Number of 8-connected pieces of the boundary band."""
        _, n = ndimage.label(self.boundary, structure=np.ones((3, 3), int))
        return int(n)

    def legend(self) -> dict:
        from .equilibria import equilibrium_to_dict
        return {str(i): equilibrium_to_dict(e) for i, e in enumerate(self.equilibria)}


def boundary_cells(ids: np.ndarray) -> np.ndarray:
    """Cells with a 4-neighbour of smaller id.

    Marking one side of each disagreement keeps the band one cell thick.
    """
    b = np.zeros(ids.shape, bool)
    b[1:, :] |= ids[:-1, :] < ids[1:, :]
    b[:-1, :] |= ids[1:, :] < ids[:-1, :]
    b[:, 1:] |= ids[:, :-1] < ids[:, 1:]
    b[:, :-1] |= ids[:, 1:] < ids[:, :-1]
    return b


def basin_map(p: ModelParams, n: int = 256, m: Optional[int] = None,
              extent: Optional[tuple[float, float]] = None,
              opts: IntegrationOptions = BASIN_OPTIONS, threads: int = 1) -> BasinMap:
    """Attractor index of every cell centre of an ``n`` x ``m`` grid.

    The grid covers [0, T_a,max] x [0, T_s,max], by default 1.5 times the
    equilibrium bounds.  Ids index ``find_equilibria(p)`` (sorted by T_s).
    """
    m = n if m is None else m
    if n < 2 or m < 2:
        raise ValueError("grid needs at least 2 cells per side")
    eqs = find_equilibria(p)
    if extent is None:
        b = equilibrium_bounds(p)
        extent = (1.5 * b.ta_hi, 1.5 * b.ts_hi)
    ta = (np.arange(n) + 0.5) * extent[0] / n
    ts = (np.arange(m) + 0.5) * extent[1] / m
    TA, TS = np.meshgrid(ta, ts)
    a0, s0 = TA.ravel(), TS.ravel()

    chunks = max(1, int(threads))
    parts = np.array_split(np.arange(a0.size), chunks)
    if chunks == 1:
        results = [integrate_batch(p, a0, s0, opts)]
    else:
        with ThreadPoolExecutor(max_workers=chunks) as ex:
            results = list(ex.map(lambda ix: integrate_batch(p, a0[ix], s0[ix], opts), parts))
    fa = np.concatenate([r.t_a for r in results])
    fs = np.concatenate([r.t_s for r in results])
    ok = np.concatenate([r.converged for r in results])

    eq_pts = np.array([e.state for e in eqs])
    d = np.hypot(fa[:, None] - eq_pts[None, :, 0], fs[:, None] - eq_pts[None, :, 1])
    ids = np.where(ok, np.argmin(d, axis=1), -1).reshape(m, n)
    return BasinMap(ta, ts, ids, boundary_cells(ids), eqs)


def band_matches(bm: BasinMap, sep: Separatrix, cells: float = 1.5) -> float:
    """Fraction of boundary cells within ``cells`` cell diagonals of the separatrix."""
    dx = bm.t_a[1] - bm.t_a[0]
    dy = bm.t_s[1] - bm.t_s[0]
    r = cells * math.hypot(dx, dy)
    rows, cols = np.nonzero(bm.boundary)
    if rows.size == 0:
        return 1.0
    hits = sum(polyline_distance(sep.points, (bm.t_a[c], bm.t_s[r_])) <= r
               for r_, c in zip(rows, cols))
    return hits / rows.size


__all__ = [
    "RegionLabel", "flux_balances", "classify_region", "region_sequence", "capture",
    "Threshold", "axis_threshold", "Separatrix", "trace_separatrix", "resample_arclength",
    "polyline_distance", "BasinMap", "boundary_cells", "basin_map", "band_matches",
    "CAPTURE_OPTIONS", "BASIN_OPTIONS", "EqClass",
]
