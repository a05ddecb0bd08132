"""Two-class qubit feedback demo, in matrix form and in Bloch coordinates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graphon as gr
from . import limit as lm
from . import qmatrix as qm
from .model import ParticleModel, demo_control, demo_model

BALL_TOL = 1e-9


@dataclass(frozen=True)
class BlochState:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if self.x**2 + self.y**2 + self.z**2 > 1.0 + BALL_TOL:
            raise ValueError("Bloch vector outside the unit ball")

    def density(self):
        return qm.bloch_density(self.x, self.y, self.z)

    def as_array(self):
        return np.array([self.x, self.y, self.z])


def bloch_drift_noise(r, means, u):
    """Drift and noise coefficients of the two-class Bloch equations.

    ``r`` is ``(..., 3)``; ``means`` holds the other class's ``(E[x], E[y])``.
    """
    r = np.asarray(r, dtype=float)
    x, y, z = r[..., 0], r[..., 1], r[..., 2]
    mx, my = np.asarray(means[0], dtype=float), np.asarray(means[1], dtype=float)
    drift = np.stack([
        -y - x + z * my,
        x - y + u * z - z * mx,
        -u * x + y * mx + x * my,
    ], axis=-1)
    noise = np.stack([-x * z, y * z, 1.0 - z * z], axis=-1)
    return drift, noise


def _to_ball(r):
    n = np.linalg.norm(r, axis=-1)
    over = n > 1.0 + BALL_TOL
    if np.any(over):
        r = r.copy()
        r[over] /= n[over, None]
    return r


def bloch_step_array(r, means, u, dt, dW):
    """Euler-Maruyama step on stacked Bloch vectors ``(..., 3)``."""
    drift, noise = bloch_drift_noise(r, means, u)
    dW = np.asarray(dW, dtype=float)
    return _to_ball(r + drift * dt + noise * dW[..., None])


def bloch_step(state: BlochState, means, u, dt, dW) -> BlochState:
    r = bloch_step_array(state.as_array(), means, u, dt, dW)
    return BlochState(*r.tolist())


@dataclass(frozen=True)
class DemoConfig:
    n_traj: int = 100
    dt: float = 1e-3
    T: float = 10.0
    seed: int = 0
    U: float = 10.0
    feedback: bool = True
    interaction: bool = True
    initial: tuple = (1.0, 0.0, 0.0)
    check_T: float = 1.0
    check_traj: int = 20


@dataclass
class DemoResult:
    times: np.ndarray
    matrix_mean: np.ndarray
    bloch_mean: np.ndarray
    matrix_fidelity: np.ndarray
    bloch_fidelity: np.ndarray
    matrix_first: np.ndarray
    bloch_first: np.ndarray
    summary: dict = field(default_factory=dict)


def targets():
    return np.stack([qm.NAMED_STATES["proj0"], qm.NAMED_STATES["proj1"]])


def _fidelity(states, tau):
    return np.einsum("...ab,ba->...", states, tau).real


def _bloch_ensemble(model: ParticleModel, mean_path, cfg: lm.LimitSimConfig, r0, U):
    """Bloch equations for ``cfg.M`` trajectories per class with the matrix run's noise streams."""
    M = cfg.M
    cells, trajs = lm._ensemble_plan(range(2), M)
    dW = lm.cell_noise(cfg.seed, trajs, cells, cfg.n_steps, cfg.dt)
    tau = targets()[cells]
    mb = qm.bloch_vector(mean_path.values)  # (2, n_t, 3)
    other = 1 - cells
    r = np.broadcast_to(np.asarray(r0, dtype=float), (len(cells), 3)).copy()
    n_t = cfg.n_steps + 1
    mean = np.empty((2, n_t, 3))
    first = np.empty((2, n_t, 3))
    max_norm = 0.0

    def record(k, r):
        nonlocal max_norm
        mean[0, k] = r[:M].mean(axis=0)
        mean[1, k] = r[M:].mean(axis=0)
        first[0, k], first[1, k] = r[0], r[M]
        max_norm = max(max_norm, float(np.linalg.norm(r, axis=-1).max()))

    record(0, r)
    for k in range(cfg.n_steps):
        means = (mb[other, k, 0], mb[other, k, 1])
        if model.control.active:
            u = demo_control(qm.bloch_density(r[:, 0], r[:, 1], r[:, 2]), tau, U)
        else:
            u = np.zeros(len(cells))
        r = bloch_step_array(r, means, u, cfg.dt, dW[:, k])
        record(k + 1, r)
    fid = (1.0 + np.where(cells == 0, 1.0, -1.0) * r[:, 2]) / 2.0
    return mean, first, fid.reshape(2, M), max_norm


def dephasing_reduction(dt=1e-3, T=1.0, n_traj=20, seed=0, initial=(1.0, 0.0, 0.0)):
    """Matrix filter vs Bloch equations with control and interaction off and ``L = sigma_z``.

    Both are driven by the same Brownian paths. Returns the largest
    component-wise deviation over time and trajectories, and the dephasing
    mean check of the matrix ensemble against the mean equation.
    """
    model = demo_model(feedback=False, interaction=False)
    W = gr.discretize(gr.two_block(), 2)
    cfg = lm.LimitSimConfig(n_u=2, dt=dt, T=T, M=n_traj, seed=seed)
    rho0 = qm.bloch_density(*initial)
    path = lm.solve_mean_ode(W, model, rho0, cfg)
    ens = lm.simulate_limit_ensemble(W, model, path, cfg, keep=n_traj)
    cells, trajs = lm._ensemble_plan(range(2), n_traj)
    dW = lm.cell_noise(seed, trajs, cells, cfg.n_steps, dt)
    r = np.broadcast_to(np.asarray(initial, dtype=float), (len(cells), 3)).copy()
    mat = qm.bloch_vector(ens.kept).reshape(2 * n_traj, cfg.n_steps + 1, 3)
    dev = np.abs(mat[:, 0] - r).max()
    for k in range(cfg.n_steps):
        r = bloch_step_array(r, (0.0, 0.0), 0.0, dt, dW[:, k])
        dev = max(dev, float(np.abs(mat[:, k + 1] - r).max()))
    err = qm.frobenius_norm(ens.mean - path.values)
    return {
        "sup_deviation": float(dev),
        "threshold": 5.0 * dt,
        "agrees": bool(dev <= 5.0 * dt),
        "mean_sup_error": float(err.max()),
        "mean_sup_stderr": float(ens.stderr.max()),
        "mean_within_3se": bool(err.max() <= 3.0 * ens.stderr.max()),
        "final_mean_x": float(qm.bloch_vector(ens.mean)[0, -1, 0]),
    }


def run_qubit_demo(cfg: DemoConfig = DemoConfig(), threads=1):
    """Two-block graphon, exchange interaction, ``L = sigma_z``, ``eta = 1``.

    Runs the matrix filter on a two-cell grid (class 0 is ``u < 1/2``) and
    the Bloch equations with the same per-class noise; both couple to the
    other class through the deterministic mean path.
    """
    model = demo_model(feedback=cfg.feedback, U=cfg.U, interaction=cfg.interaction)
    W = gr.discretize(gr.two_block(), 2)
    lcfg = lm.LimitSimConfig(n_u=2, dt=cfg.dt, T=cfg.T, M=cfg.n_traj, seed=cfg.seed)
    rho0 = qm.bloch_density(*cfg.initial)
    path = lm.solve_mean_ode(W, model, rho0, lcfg)
    ens = lm.simulate_limit_ensemble(W, model, path, lcfg, keep=1, threads=threads, check_states=True)
    tau = targets()
    mat_fid = np.stack([_fidelity(ens.final[j], tau[j]) for j in range(2)])
    mat_mean = qm.bloch_vector(ens.mean)
    mat_first = qm.bloch_vector(ens.kept[:, 0])
    b_mean, b_first, b_fid, b_norm = _bloch_ensemble(model, path, lcfg, cfg.initial, cfg.U)
    M = cfg.n_traj
    se = lambda a: float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0  # noqa: E731
    classes = []
    for j in range(2):
        classes.append({
            "class": j,
            "target": ["proj0", "proj1"][j],
            "matrix_fidelity_mean": float(mat_fid[j].mean()),
            "matrix_fidelity_stderr": se(mat_fid[j]),
            "bloch_fidelity_mean": float(b_fid[j].mean()),
            "bloch_fidelity_stderr": se(b_fid[j]),
            "mean_path_fidelity": float(_fidelity(path.values[j, -1], tau[j])),
            "sup_mean_gap": {c: float(np.abs(mat_mean[j, :, i] - b_mean[j, :, i]).max()) for i, c in enumerate("xyz")},
        })
    mat_norm = float(np.linalg.norm(qm.bloch_vector(ens.kept), axis=-1).max())
    summary = {
        "n_traj": M,
        "dt": cfg.dt,
        "T": cfg.T,
        "seed": cfg.seed,
        "feedback": cfg.feedback,
        "interaction": cfg.interaction,
        "U": cfg.U,
        "classes": classes,
        "max_bloch_norm": {"matrix_first_paths": mat_norm, "bloch": b_norm},
        "state_checks": {k: v for k, v in ens.meta.items() if k.startswith("max_")},
    }
    if cfg.check_traj > 0:
        summary["dephasing_reduction"] = dephasing_reduction(cfg.dt, cfg.check_T, cfg.check_traj, cfg.seed, cfg.initial)
    return DemoResult(lcfg.times, mat_mean, b_mean, mat_fid, b_fid, mat_first, b_first, summary)


def write_demo_csv(res: DemoResult, fh, every=10):
    """Columns ``t, class, source, mean_x, mean_y, mean_z, mean_fidelity, x, y, z`` (first trajectory)."""
    import csv

    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "class", "source", "mean_x", "mean_y", "mean_z", "mean_fidelity", "x", "y", "z"])
    sign = (1.0, -1.0)
    for k in range(0, len(res.times), every):
        for j in range(2):
            for src, mean, first in (("matrix", res.matrix_mean, res.matrix_first), ("bloch", res.bloch_mean, res.bloch_first)):
                fid = (1.0 + sign[j] * mean[j, k, 2]) / 2.0
                w.writerow([_f(res.times[k]), j, src] + [_f(v) for v in mean[j, k]] + [_f(fid)] + [_f(v) for v in first[j, k]])


def _f(x):
    return format(float(x), ".17g")
