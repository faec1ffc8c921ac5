"""Shooting-method solver: index-policy rollouts plus Broyden root finding.

A rollout fixes the initial costate guess, then walks the time grid: at each
grid point the control is the top-m index selection, and the state/costate
advance by the exact constant-control solution.  Control changes open new
segments.  The solver drives the terminal costate to zero by Broyden's
quasi-Newton update on the initial costate.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .dynamics import FrmabInstance, StateCostatePoint
from .errors import NoConvergence, SingularJacobian, StateBoundViolation
from .pmp import index_kernel, select_kernel

log = logging.getLogger(__name__)

# Grid points propagated per vectorised lookahead block.  Purely a speed
# knob: results are identical for any value because propagation within a
# constant-control segment is evaluated from the segment start.
_BLOCK = 512

_BOUND_SLACK = 1e-9

MAX_ITER = 200
MAX_RESTARTS = 5
_DENOM_GUARD = 1e-16


@dataclass
class Segment:
    """Maximal interval [t_start, t_end) with a constant binary control."""

    t_start: float
    t_end: float
    control: np.ndarray
    entry_state: np.ndarray
    entry_costate: np.ndarray


@dataclass
class PiecewiseTrajectory:
    """Solved trajectory sampled on the delta-grid, tiled by control segments."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    segments: list[Segment]
    objective: float
    solver: dict | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def point(self, k: int) -> StateCostatePoint:
        return StateCostatePoint(t=float(self.t[k]), x=self.x[k], y=self.y[k])

    def terminal_costate(self) -> np.ndarray:
        return self.y[-1]

    def control_at(self, t: float) -> np.ndarray:
        """Control of the segment containing time t (right-open intervals)."""
        starts = [s.t_start for s in self.segments]
        k = int(np.searchsorted(starts, t, side="right")) - 1
        k = min(max(k, 0), len(self.segments) - 1)
        return self.segments[k].control


def grid_times(horizon: float, delta: float) -> np.ndarray:
    """Multiples of delta covering [0, horizon], last point snapped to horizon."""
    n_full = int(np.floor(horizon / delta + 1e-9))
    ts = delta * np.arange(n_full + 1)
    if horizon - ts[-1] > 1e-9 * max(1.0, horizon):
        ts = np.append(ts, horizon)
    else:
        ts[-1] = horizon
    return ts


def _check_bounds(x_block: np.ndarray, h: np.ndarray, t_lo: float, t_hi: float):
    bad = ~np.isfinite(x_block) | (x_block <= -_BOUND_SLACK) | (x_block >= h + _BOUND_SLACK)
    if bad.any():
        raise StateBoundViolation(
            f"state left (0, H) beyond {_BOUND_SLACK} within t in [{t_lo:.6g}, {t_hi:.6g}]; "
            "instance is outside the supported problem families")


def rollout(inst: FrmabInstance, x0, y0) -> PiecewiseTrajectory:
    """Index-policy trajectory from (x0, y0), plus the exact running objective.

    The control is re-evaluated at every delta-grid point; within a stretch of
    constant control the state and costate are obtained in closed form from
    the segment entry point, and the reward integral is accumulated exactly
    per stretch.
    """
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    n = inst.n
    if x0.shape != (n,) or y0.shape != (n,):
        raise ValueError(f"x0 and y0 must have shape ({n},)")
    c = dyn.coeff_arrays(inst)
    _check_bounds(x0[None, :], c.h, 0.0, 0.0)

    ts = grid_times(inst.horizon, inst.delta)
    last = len(ts) - 1
    X = np.empty((last + 1, n))
    Y = np.empty_like(X)
    U = np.empty((last + 1, n), dtype=np.int8)
    X[0], Y[0] = x0, y0
    u_s = select_kernel(index_kernel(c, x0, y0), inst.budget)[0]
    U[0] = u_s

    segments: list[Segment] = []
    objective = 0.0
    s = 0            # grid index of the current segment entry
    x_s, y_s = x0, y0
    k = 0
    while k < last:
        hi = min(k + _BLOCK, last)
        taus = ts[k + 1:hi + 1] - ts[s]
        xb, yb = dyn.step_from(c, x_s, y_s, u_s, taus)
        gb = index_kernel(c, xb, yb)
        ub = select_kernel(gb, inst.budget)
        diff = np.any(ub != u_s, axis=1)
        j = int(np.argmax(diff)) if diff.any() else -1
        if j < 0:
            _check_bounds(xb, c.h, ts[k + 1], ts[hi])
            X[k + 1:hi + 1] = xb
            Y[k + 1:hi + 1] = yb
            U[k + 1:hi + 1] = u_s
            k = hi
            continue
        b = k + 1 + j
        _check_bounds(xb[:j + 1], c.h, ts[k + 1], ts[b])
        X[k + 1:b + 1] = xb[:j + 1]
        Y[k + 1:b + 1] = yb[:j + 1]
        U[k + 1:b] = u_s
        U[b] = ub[j]
        if b < last:
            objective += dyn.reward_stretch(c, x_s, u_s, float(ts[b] - ts[s]))
            segments.append(Segment(float(ts[s]), float(ts[b]), u_s.copy(), x_s, y_s))
            s, x_s, y_s, u_s = b, xb[j], yb[j], ub[j]
        k = b

    objective += dyn.reward_stretch(c, x_s, u_s, float(ts[last] - ts[s]))
    segments.append(Segment(float(ts[s]), float(ts[last]), u_s.copy(), x_s, y_s))
    return PiecewiseTrajectory(t=ts, x=X, y=Y, u=U, segments=segments, objective=objective)


def terminal_residual(inst: FrmabInstance, x0, y0) -> np.ndarray:
    """Terminal costate reached from an initial costate guess."""
    return rollout(inst, x0, y0).terminal_costate()


def _broyden_attempt(inst: FrmabInstance, x0: np.ndarray, y0: np.ndarray):
    """One Broyden run from y0.  Returns (trajectory, iterations) on success,
    None when the iteration cap, a non-finite step, or a vanishing secant
    denominator calls for a restart."""
    n = inst.n
    traj = rollout(inst, x0, y0)
    g = traj.terminal_costate().copy()
    if np.max(np.abs(g)) <= inst.eps:
        return traj, 0
    J = np.eye(n)
    y = y0.astype(float).copy()
    for it in range(1, MAX_ITER + 1):
        try:
            step = -np.linalg.solve(J, g)
        except np.linalg.LinAlgError:
            return None
        if not np.isfinite(step).all():
            return None
        y_new = y + step
        traj = rollout(inst, x0, y_new)
        g_new = traj.terminal_costate().copy()
        denom = float(step @ step)
        if denom < _DENOM_GUARD:
            return None
        J = J + np.outer((g_new - g - J @ step) / denom, step)
        if not np.isfinite(J).all():
            raise SingularJacobian("Jacobian surrogate has non-finite entries")
        y, g = y_new, g_new
        if np.max(np.abs(g)) <= inst.eps:
            return traj, it
    return None


def solve(inst: FrmabInstance, x0, seed: int = 0) -> PiecewiseTrajectory:
    """Find the trajectory whose terminal costate vanishes (within eps).

    Starts from a zero initial costate with an identity Jacobian surrogate;
    on stagnation retries up to MAX_RESTARTS times from uniform random
    costates in [-1, 1]^n drawn from `seed`.
    """
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    y0 = np.zeros(inst.n)
    for attempt in range(MAX_RESTARTS + 1):
        out = _broyden_attempt(inst, x0, y0)
        if out is not None:
            traj, iters = out
            traj.solver = {
                "iterations": iters,
                "restarts": attempt,
                "residual_inf": float(np.max(np.abs(traj.terminal_costate()))),
            }
            return traj
        y0 = rng.uniform(-1.0, 1.0, inst.n)
        log.debug("shooting restart %d from %s", attempt + 1, y0)
    raise NoConvergence(
        f"no convergence after {MAX_RESTARTS + 1} attempts of {MAX_ITER} iterations")


# ---------------------------------------------------------------------------
# trajectory export

def write_trajectory_csv(traj: PiecewiseTrajectory, path):
    """One row per grid point: t, x_1..x_n, y_1..y_n, u_1..u_n."""
    n = traj.n
    header = (["t"] + [f"x_{i + 1}" for i in range(n)]
              + [f"y_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(n)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(traj.t)):
            row = [repr(float(traj.t[k]))]
            row += [repr(float(v)) for v in traj.x[k]]
            row += [repr(float(v)) for v in traj.y[k]]
            row += [str(int(v)) for v in traj.u[k]]
            w.writerow(row)


def segments_to_dict(traj: PiecewiseTrajectory) -> dict:
    return {
        "objective": traj.objective,
        "residual_inf": float(np.max(np.abs(traj.terminal_costate()))),
        "solver": traj.solver,
        "segments": [
            {
                "t_start": s.t_start,
                "t_end": s.t_end,
                "control": [int(v) for v in s.control],
                "entry_state": [float(v) for v in s.entry_state],
                "entry_costate": [float(v) for v in s.entry_costate],
            }
            for s in traj.segments
        ],
    }


def write_segments_json(traj: PiecewiseTrajectory, path):
    with open(path, "w") as fh:
        json.dump(segments_to_dict(traj), fh, indent=2)
        fh.write("\n")
