"""Static SVG figures for solved trajectories and learned policies."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dynamics import FrmabInstance
from .shooting import PiecewiseTrajectory


def save_trajectory_figure(traj: PiecewiseTrajectory, path):
    """States on top, active controls below, switch times marked."""
    n = traj.n
    fig, (ax_x, ax_u) = plt.subplots(2, 1, sharex=True, figsize=(7, 5),
                                     gridspec_kw={"height_ratios": [2, 1]})
    stride = max(1, len(traj.t) // 2000)
    ts = traj.t[::stride]
    for i in range(n):
        ax_x.plot(ts, traj.x[::stride, i], label=f"x_{i + 1}", lw=1.2)
        ax_u.step(ts, traj.u[::stride, i] + 1.05 * i, where="post", lw=1.0)
    for seg in traj.segments[1:]:
        ax_x.axvline(seg.t_start, color="0.8", lw=0.6, zorder=0)
        ax_u.axvline(seg.t_start, color="0.8", lw=0.6, zorder=0)
    ax_x.set_ylabel("state")
    ax_x.legend(loc="best", fontsize=8)
    ax_u.set_ylabel("control (offset per project)")
    ax_u.set_xlabel("t")
    ax_u.set_yticks([])
    fig.suptitle(f"objective = {traj.objective:.6g}")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def save_policy_figure(policy, inst: FrmabInstance, path, x0_box: float = 10.0,
                       t_points: int = 60, x_points: int = 40, seed: int = 0):
    """Sampled decision map: per project, (t, x_i) points coloured by the
    policy's action for that project (other coordinates drawn at random)."""
    n = inst.n
    rng = np.random.default_rng(seed)
    hi = np.array([p.h_bound if np.isfinite(p.h_bound) else x0_box for p in inst.projects])
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
    ts = np.linspace(0.0, inst.horizon, t_points)
    for i in range(n):
        pts_t, pts_x, acts = [], [], []
        for t in ts:
            xs = rng.uniform(1e-3, hi, size=(x_points, n)) * 0.999
            for x in xs:
                u = policy(x, float(t))
                pts_t.append(t)
                pts_x.append(x[i])
                acts.append(int(u[i]))
        ax = axes[0, i]
        acts = np.asarray(acts)
        ax.scatter(np.asarray(pts_t)[acts == 0], np.asarray(pts_x)[acts == 0],
                   s=4, c="#9ecae1", label="u=0")
        ax.scatter(np.asarray(pts_t)[acts == 1], np.asarray(pts_x)[acts == 1],
                   s=4, c="#de2d26", label="u=1")
        ax.set_xlabel("t")
        ax.set_ylabel(f"x_{i + 1}")
        ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
