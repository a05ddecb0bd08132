"""The graphon limit system on a uniform ``u``-grid.

Cell ``c`` of an ``n_u``-cell grid stands for positions ``u`` in
``(c/n_u, (c+1)/n_u]``. Mean states are cell constants and the
interaction integral is the cell average of the step kernel.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from . import graphon as gr
from . import qmatrix as qm
from .errors import DimensionMismatch, GridMismatch, NoConvergence, NonUnitaryL
from .model import COUNTING, HOMODYNE, ParticleModel, interaction_fields


@dataclass(frozen=True)
class LimitSimConfig:
    n_u: int = 2
    dt: float = 1e-3
    T: float = 1.0
    M: int = 100
    seed: int = 0
    detection: str = HOMODYNE
    picard_tol: float = 1e-8
    picard_max_iter: int = 50

    def __post_init__(self):
        if self.n_u < 1 or self.M < 1 or self.picard_max_iter < 1:
            raise ValueError("n_u, M and picard_max_iter must be positive")
        if not (self.dt > 0 and self.T > 0 and self.dt <= self.T):
            raise ValueError(f"need 0 < dt <= T, got dt={self.dt}, T={self.T}")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.detection not in (HOMODYNE, COUNTING):
            raise ValueError(f"unknown detection {self.detection!r}")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(eq=False)
class MeanFieldPath:
    """Mean states ``values[c, k] = m^{u_c}_{t_k}``, shape ``(n_u, n_t, d, d)``."""

    times: np.ndarray
    values: np.ndarray

    @property
    def n_u(self):
        return self.values.shape[0]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def final(self):
        return self.values[:, -1]

    def write_csv(self, fh):
        d = self.values.shape[-1]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "cell"] + [f"m{i}{j}_{p}" for i in range(d) for j in range(d) for p in ("re", "im")])
        for k, t in enumerate(self.times):
            for c in range(self.n_u):
                m = self.values[c, k]
                w.writerow([_fmt(t), c] + [_fmt(v) for i in range(d) for j in range(d) for v in (m[i, j].real, m[i, j].imag)])


@dataclass
class PicardReport:
    iterations: int
    distances: list
    converged: bool
    tol: float

    def to_json(self):
        return {"iterations": self.iterations, "distances": [float(x) for x in self.distances], "converged": self.converged, "tol": self.tol}


@dataclass
class StabilityResult:
    distance_sq: float
    mc_stderr: float
    cut_norm: float
    cut_method: str
    ratio: float
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "distance_sq": self.distance_sq,
            "mc_stderr": self.mc_stderr,
            "cut_norm": self.cut_norm,
            "cut_method": self.cut_method,
            "ratio": self.ratio if np.isfinite(self.ratio) else "inf",
            "meta": self.meta,
        }


def _fmt(x):
    return format(float(x), ".17g")


def grid_kernel(W, n_u):
    """Express ``W`` (step kernel or evaluable graphon) on the ``n_u``-cell grid."""
    if isinstance(W, gr.StepKernel):
        if W.n == n_u:
            return W
        if n_u % W.n:
            raise GridMismatch(f"a {W.n}-block kernel does not align with {n_u} cells")
        return gr.refine(W, n_u)
    return gr.discretize(W, n_u)


def _initial_means(m0, n_u, d):
    m0 = np.asarray(m0, dtype=complex)
    if m0.shape == (d, d):
        return np.broadcast_to(m0, (n_u, d, d)).copy()
    if m0.shape != (n_u, d, d):
        raise DimensionMismatch(f"initial means of shape {m0.shape} for {n_u} cells")
    return m0.copy()


def cell_positions(n_u):
    return (np.arange(n_u) + 0.5) / n_u


def _controls(model, states, t, u):
    if not model.control.active:
        return None
    return model.control(states, t, u)


def _field_hamiltonians(model, fields, u_vals=None):
    H = model.H_free + fields
    if u_vals is not None:
        H = H + u_vals[..., None, None] * model.H_ctrl
    return qm.hermitize(H)


def lindblad_rhs(W, model: ParticleModel, means, t=0.0):
    """Per-cell mean-field Lindblad derivative.

    ``-i[H~ + u(m) H^ + (1/n) sum_v w_uv A^{m_v}, m_u] + L m_u L^dag - {L L^dag, m_u}/2``
    """
    means = np.asarray(means)
    Wg = W if isinstance(W, gr.StepKernel) and W.n == means.shape[0] else grid_kernel(W, means.shape[0])
    fields = interaction_fields(model.A, Wg, means)
    u = _controls(model, means, t, cell_positions(Wg.n))
    H = _field_hamiltonians(model, fields, u)
    return dyn.lindblad_local(means, H, model.L)


def _repair(m):
    scale = np.maximum(np.abs(m).max(axis=(-2, -1)), 1e-300)
    herm = np.abs(m - qm.dagger(m)).max(axis=(-2, -1)) / scale
    mineig = np.linalg.eigvalsh(qm.hermitize(m)).min(axis=-1)
    tr = np.abs(qm.trace(m) - 1.0)
    bad = (herm > qm.TOL_HERM) | (mineig < -qm.TOL_PSD) | (tr > qm.TOL_TRACE)
    if np.any(bad):
        m = m.copy()
        m[bad] = qm.project_batch(m[bad])
        return m, int(bad.sum())
    return m, 0


def solve_mean_ode(W, model: ParticleModel, m0, cfg: LimitSimConfig):
    """RK4 for the coupled per-cell mean equations; returns a :class:`MeanFieldPath`.

    Controls are evaluated on the mean state of the cell. States are only
    projected if a density-matrix tolerance is breached.
    """
    Wg = grid_kernel(W, cfg.n_u)
    m = _initial_means(m0, cfg.n_u, model.d)
    n, h = cfg.n_steps, cfg.dt
    out = np.empty((cfg.n_u, n + 1, model.d, model.d), dtype=complex)
    out[:, 0] = m
    repairs = 0
    f = lambda t, x: lindblad_rhs(Wg, model, x, t)  # noqa: E731
    for k in range(n):
        t = k * h
        k1 = f(t, m)
        k2 = f(t + 0.5 * h, m + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, m + 0.5 * h * k2)
        k4 = f(t + h, m + h * k3)
        m = m + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        m, r = _repair(m)
        repairs += r
        out[:, k + 1] = m
    path = MeanFieldPath(cfg.times, out)
    path.repairs = repairs
    return path


def _check_grid(path: MeanFieldPath, cfg: LimitSimConfig):
    if path.n_u != cfg.n_u or len(path.times) != cfg.n_steps + 1 or (
        len(path.times) > 1 and abs(path.dt - cfg.dt) > 1e-12 * cfg.dt
    ):
        raise GridMismatch(
            f"path has {path.n_u} cells and {len(path.times)} times; config wants {cfg.n_u} and {cfg.n_steps + 1}"
        )


def frozen_fields(Wg, model, path: MeanFieldPath):
    """Interaction fields on the time grid, shape ``(n_t, n_u, d, d)``."""
    return interaction_fields(model.A, Wg, np.swapaxes(path.values, 0, 1))


def picard_map(W, model: ParticleModel, frozen: MeanFieldPath, cfg: LimitSimConfig, m0=None):
    """One application of the Picard map.

    Each cell solves the linear Lindblad equation driven by the interaction
    field of ``frozen`` (cubic interpolation at RK4 midpoints); controls act
    on the evolving mean. The mean of the frozen-field filter solves exactly
    this equation, so no sampling is needed.
    """
    _check_grid(frozen, cfg)
    Wg = grid_kernel(W, cfg.n_u)
    m = _initial_means(frozen.values[:, 0] if m0 is None else m0, cfg.n_u, model.d)
    F = frozen_fields(Wg, model, frozen)
    Fmid = dyn.midpoint_values(F)
    pos = cell_positions(cfg.n_u)
    h = cfg.dt

    def rhs(t, x, fld):
        return dyn.lindblad_local(x, _field_hamiltonians(model, fld, _controls(model, x, t, pos)), model.L)

    out = np.empty_like(frozen.values)
    out[:, 0] = m
    for k in range(cfg.n_steps):
        t = k * h
        k1 = rhs(t, m, F[k])
        k2 = rhs(t + 0.5 * h, m + 0.5 * h * k1, Fmid[k])
        k3 = rhs(t + 0.5 * h, m + 0.5 * h * k2, Fmid[k])
        k4 = rhs(t + h, m + h * k3, F[k + 1])
        m = m + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        m, _ = _repair(m)
        out[:, k + 1] = m
    return MeanFieldPath(frozen.times.copy(), out)


def path_distance(a: MeanFieldPath, b: MeanFieldPath):
    """``sup_{t, u}`` Frobenius distance."""
    return float(qm.frobenius_norm(a.values - b.values).max())


def picard_solve(W, model: ParticleModel, m0, cfg: LimitSimConfig, raise_on_failure=True):
    """Iterate the Picard map from the constant path ``m0``.

    ``distances[k]`` is ``sup |Xi(xi_k) - xi_k|``; the iteration stops at the
    first ``k`` with ``distances[k] <= tol`` and reports ``iterations = k``.
    Raises :class:`NoConvergence` (carrying the report and last iterate)
    after ``picard_max_iter`` applications unless ``raise_on_failure`` is off.
    """
    m0 = _initial_means(m0, cfg.n_u, model.d)
    xi = MeanFieldPath(cfg.times, np.repeat(m0[:, None], cfg.n_steps + 1, axis=1))
    distances = []
    for k in range(cfg.picard_max_iter + 1):
        nxt = picard_map(W, model, xi, cfg, m0)
        distances.append(path_distance(nxt, xi))
        xi = nxt
        if distances[-1] <= cfg.picard_tol:
            return xi, PicardReport(k, distances, True, cfg.picard_tol)
    report = PicardReport(cfg.picard_max_iter, distances, False, cfg.picard_tol)
    if raise_on_failure:
        raise NoConvergence(f"Picard iteration did not reach {cfg.picard_tol} in {cfg.picard_max_iter} steps", report, xi)
    return xi, report


# ---------------------------------------------------------------- trajectories


def cell_noise(seed, trajs, cells, n_steps, dt):
    """Brownian increments of member ``b`` from stream ``(seed, trajs[b], cells[b])``; shape ``(B, n_steps)``."""
    out = np.empty((len(trajs), n_steps))
    sd = np.sqrt(dt)
    for b, (tr, c) in enumerate(zip(trajs, cells)):
        out[b] = dyn.stream(seed, tr, c).normal(0.0, sd, size=n_steps)
    return out


@dataclass
class LimitEnsemble:
    """Per-cell ensemble statistics of limit trajectories on the time grid.

    ``mean`` has shape ``(n_u, n_t, d, d)``; ``stderr`` is the Frobenius
    norm of the entrywise standard error, shape ``(n_u, n_t)``.
    ``final`` holds every trajectory's final state, ``(n_u, M, d, d)``;
    ``kept`` the first few full paths per cell when requested.
    """

    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    final: np.ndarray
    kept: np.ndarray | None = None
    jump_counts: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def mean_path(self):
        return MeanFieldPath(self.times, self.mean)


class _Stats:
    def __init__(self, n_groups, n_t, d):
        self.s1 = np.zeros((n_groups, n_t, d, d), dtype=complex)
        self.s2 = np.zeros((n_groups, n_t, d, d))

    def add(self, k, groups, states, n_groups):
        for g in range(n_groups):
            sel = states[groups == g]
            self.s1[g, k] += sel.sum(axis=0)
            self.s2[g, k] += (np.abs(sel) ** 2).sum(axis=0)

    def merge(self, other):
        self.s1 += other.s1
        self.s2 += other.s2

    def finish(self, M):
        mean = self.s1 / M
        var = np.maximum(self.s2 / M - np.abs(mean) ** 2, 0.0) * (M / max(M - 1, 1))
        stderr = np.sqrt(var.sum(axis=(-2, -1)) / M)
        return mean, stderr


def _homodyne_members(model, Hgrid, groups, cells, trajs, m_init, cfg, pos, observe):
    """Euler-Maruyama for a batch of single-site filters.

    ``Hgrid[k, g]`` is the control-free Hamiltonian of group ``g`` at grid
    time ``k``; member ``b`` belongs to group ``groups[b]``, uses the noise of
    ``(trajs[b], cells[b])`` and sits at position ``pos[cells[b]]``.
    ``observe(k, states)`` sees every post-projection state.
    """
    B = len(trajs)
    d = model.d
    dW = cell_noise(cfg.seed, trajs, cells, cfg.n_steps, cfg.dt)
    rho = np.array(m_init, dtype=complex)
    u_pos = pos[cells]
    max_drift = 0.0
    observe(0, rho)
    for k in range(cfg.n_steps):
        t = k * cfg.dt
        H = Hgrid[k][groups]
        u = _controls(model, rho, t, u_pos)
        if u is not None:
            H = H + u[:, None, None] * model.H_ctrl
        raw, _, drift = dyn.homodyne_increment(rho, H, model.L, model.eta, cfg.dt, dW[:, k, None], d, 1)
        max_drift = max(max_drift, float(drift.max()))
        rho = qm.project_batch(raw)
        observe(k + 1, rho)
    return rho, max_drift


def _jump_members(model, Fgrid, groups, cells, trajs, m_init, cfg, pos, observe):
    """Unitary flow between exact rate-1 events for a batch of single-site filters.

    ``Fgrid[k, g]`` is the interaction field of group ``g`` on the grid; off
    the grid it is interpolated by cubic Lagrange polynomials.
    """
    if not model.meas.is_unitary:
        raise NonUnitaryL("counting dynamics requires a unitary L")
    u_pos = pos[cells]
    events = []
    for tr, c in zip(trajs, cells):
        ts = dyn.poisson_times(cfg.seed, tr, c, cfg.T)
        events.append((ts, np.zeros(len(ts), dtype=int)))
    base = model.H_free

    def H_at(times, idx, r):
        u = _controls(model, r, times[0], u_pos[idx])
        out = []
        for t in times:
            k = t / cfg.dt
            if abs(k - round(k)) < 1e-9:
                Fg = Fgrid[int(round(k))]
            else:
                Fg = dyn.cubic_at(Fgrid, cfg.dt, t)
            H = base + Fg[groups[idx]]
            if u is not None:
                H = H + u[:, None, None] * model.H_ctrl
            out.append(qm.hermitize(H))
        return out

    observe(0, np.array(m_init, dtype=complex))
    final = dyn.run_jump(m_init, H_at, model.L, model.d, 1, cfg.dt, cfg.n_steps, events, observe)
    return final, np.array([len(e[0]) for e in events])


def _ensemble_plan(cells, M):
    cells_b = np.repeat(np.asarray(cells), M)
    trajs_b = np.tile(np.arange(M), len(cells))
    return cells_b, trajs_b


def simulate_limit_ensemble(W, model: ParticleModel, mean: MeanFieldPath, cfg: LimitSimConfig, m0=None, keep=0, chunk=500, threads=1, check_states=False):
    """``cfg.M`` limit trajectories per cell, driven by the frozen field of ``mean``.

    Detection follows ``cfg.detection``. Member ``(cell c, trajectory j)``
    uses noise stream ``(seed, j, c)``.
    """
    _check_grid(mean, cfg)
    Wg = grid_kernel(W, cfg.n_u)
    d, n_u, M = model.d, cfg.n_u, cfg.M
    F = frozen_fields(Wg, model, mean)
    m_start = _initial_means(mean.values[:, 0] if m0 is None else m0, n_u, d)
    pos = cell_positions(n_u)
    cells_all, trajs_all = _ensemble_plan(range(n_u), M)
    n_t = cfg.n_steps + 1
    counting = cfg.detection == COUNTING
    Hgrid = None if counting else _field_hamiltonians(model, F)

    def work(a, b):
        cells, trajs = cells_all[a:b], trajs_all[a:b]
        stats = _Stats(n_u, n_t, d)
        kept = {}
        viol = np.zeros(3)
        keep_mask = trajs < keep

        def observe(k, states):
            stats.add(k, cells, states, n_u)
            if keep_mask.any():
                kept[k] = states[keep_mask].copy()
            if check_states:
                h, e, t = qm.density_violations(states)
                viol[:] = np.maximum(viol, [h, -e, t])

        init = m_start[cells]
        if counting:
            final, counts = _jump_members(model, F, cells, cells, trajs, init, cfg, pos, observe)
            drift = 0.0
        else:
            final, drift = _homodyne_members(model, Hgrid, cells, cells, trajs, init, cfg, pos, observe)
            counts = None
        kp = np.stack([kept[k] for k in range(n_t)], axis=1) if kept else None
        return stats, final, counts, drift, viol, kp, (cells[keep_mask], trajs[keep_mask])

    parts = dyn.run_chunks(work, len(cells_all), chunk, threads)
    stats = parts[0][0]
    for p in parts[1:]:
        stats.merge(p[0])
    mean_hat, stderr = stats.finish(M)
    final = np.concatenate([p[1] for p in parts]).reshape(n_u, M, d, d)
    counts = np.concatenate([p[2] for p in parts]).reshape(n_u, M) if counting else None
    kept = None
    if keep:
        kp = [(p[5], p[6]) for p in parts if p[5] is not None]
        paths = np.concatenate([x for x, _ in kp])
        cc = np.concatenate([c for _, (c, _t) in kp])
        tt = np.concatenate([t for _, (_c, t) in kp])
        kept = np.empty((n_u, min(keep, M), n_t, d, d), dtype=complex)
        kept[cc, tt] = paths
    viol = np.max([p[4] for p in parts], axis=0)
    meta = {
        "max_trace_drift": max(p[3] for p in parts),
        "detection": cfg.detection,
        "coupling": "frozen mean field",
    }
    if check_states:
        meta.update(max_herm_rel=float(viol[0]), max_neg_eig=float(viol[1]), max_trace_err=float(viol[2]))
    return LimitEnsemble(cfg.times, mean_hat, stderr, final, kept, counts, meta)


def simulate_homodyne_limit(W, model, mean: MeanFieldPath, cell, cfg: LimitSimConfig, seed=None, trajectory=0, m0=None):
    """One homodyne trajectory of cell ``cell``; returns ``(times, states, dY)``."""
    return _single(W, model, mean, cell, cfg, seed, trajectory, m0, HOMODYNE)


def simulate_jump_limit(W, model, mean: MeanFieldPath, cell, cfg: LimitSimConfig, seed=None, trajectory=0, m0=None):
    """One counting trajectory of cell ``cell``; returns ``(times, states, jump_times)``."""
    return _single(W, model, mean, cell, cfg, seed, trajectory, m0, COUNTING)


def _single(W, model, mean, cell, cfg, seed, trajectory, m0, detection):
    _check_grid(mean, cfg)
    if not 0 <= cell < cfg.n_u:
        raise DimensionMismatch(f"cell {cell} outside 0..{cfg.n_u - 1}")
    if seed is not None:
        cfg = LimitSimConfig(**{**cfg.__dict__, "seed": seed})
    Wg = grid_kernel(W, cfg.n_u)
    F = frozen_fields(Wg, model, mean)
    start = _initial_means(mean.values[:, 0] if m0 is None else m0, cfg.n_u, model.d)[[cell]]
    states = np.empty((cfg.n_steps + 1, model.d, model.d), dtype=complex)

    def observe(k, s):
        states[k] = s[0]

    cells = np.array([cell])
    trajs = np.array([trajectory])
    pos = cell_positions(cfg.n_u)
    if detection == COUNTING:
        _jump_members(model, F, cells, cells, trajs, start, cfg, pos, observe)
        return cfg.times, states, dyn.poisson_times(cfg.seed, trajectory, cell, cfg.T)
    _homodyne_members(model, _field_hamiltonians(model, F), cells, cells, trajs, start, cfg, pos, observe)
    dW = cell_noise(cfg.seed, trajs, cells, cfg.n_steps, cfg.dt)[0]
    Lp = model.L + qm.dagger(model.L)
    c = np.einsum("ab,kba->k", Lp, states[:-1]).real
    return cfg.times, states, dW + np.sqrt(model.eta) * c * cfg.dt


# ---------------------------------------------------------------- experiments


def stability_experiment(W_a, W_b, model: ParticleModel, m0, cfg: LimitSimConfig, chunk=500, threads=1, cut_restarts=32):
    """Coupled-noise estimate of ``E[ int_I sup_t |g_a - g_b|^2 du ]``.

    Both mean fields are solved from the same ``m0``; trajectory ``j`` of
    cell ``c`` in either system uses the same Brownian path (homodyne) or
    the same event times (counting).
    """
    Wa = grid_kernel(W_a, cfg.n_u)
    Wb = grid_kernel(W_b, cfg.n_u)
    d, n_u, M = model.d, cfg.n_u, cfg.M
    ma = solve_mean_ode(Wa, model, m0, cfg)
    mb = solve_mean_ode(Wb, model, m0, cfg)
    F = np.concatenate([frozen_fields(Wa, model, ma), frozen_fields(Wb, model, mb)], axis=1)
    start = _initial_means(m0, n_u, d)
    pos = cell_positions(n_u)
    cells_all, trajs_all = _ensemble_plan(range(n_u), M)
    counting = cfg.detection == COUNTING
    Hgrid = None if counting else _field_hamiltonians(model, F)

    def work(a, b):
        cells, trajs = cells_all[a:b], trajs_all[a:b]
        nb = len(cells)
        cells2 = np.concatenate([cells, cells])
        trajs2 = np.concatenate([trajs, trajs])
        groups = np.concatenate([cells, cells + n_u])
        sup = np.zeros(nb)

        def observe(k, s):
            np.maximum(sup, qm.frobenius_norm(s[:nb] - s[nb:]) ** 2, out=sup)

        init = start[cells2]
        if counting:
            _jump_members(model, F, groups, cells2, trajs2, init, cfg, pos, observe)
        else:
            _homodyne_members(model, Hgrid, groups, cells2, trajs2, init, cfg, pos, observe)
        return sup

    sup = np.concatenate(dyn.run_chunks(work, len(cells_all), chunk, threads)).reshape(n_u, M)
    per_traj = sup.mean(axis=0)
    dist = float(per_traj.mean())
    se = float(per_traj.std(ddof=1) / np.sqrt(M)) if M > 1 else float("nan")
    diff = gr.kernel_sub(Wa, Wb)
    cn, method = gr.cut_norm(diff, restarts=cut_restarts, seed=cfg.seed)
    if cn > 0:
        ratio = dist / cn
    else:
        ratio = 0.0 if dist == 0 else float("inf")
    meta = {
        "coupling": "pathwise: shared noise per (cell, trajectory)",
        "detection": cfg.detection,
        "n_u": n_u,
        "M": M,
        "dt": cfg.dt,
        "T": cfg.T,
        "sup_over": "time grid",
    }
    return StabilityResult(dist, se, float(cn), method, float(ratio), meta)


def stability_sweep(W_a, W_b, model, m0, cfg, eps_list=(0.1, 0.2, 0.3, 0.4, 0.5), **kw):
    """Compare ``W_a`` with ``(1 - eps) W_a + eps W_b`` for each ``eps``."""
    Wa = grid_kernel(W_a, cfg.n_u)
    Wb = grid_kernel(W_b, cfg.n_u)
    rows = []
    for eps in eps_list:
        res = stability_experiment(Wa, gr.kernel_mix(Wa, Wb, eps), model, m0, cfg, **kw)
        rows.append((float(eps), res))
    ratios = np.array([r.ratio for _, r in rows if r.cut_norm > 0])
    spread = float(ratios.max() / ratios.min()) if len(ratios) and ratios.min() > 0 else float("inf")
    return rows, spread


@dataclass
class ChaosRow:
    N: int
    variant: str
    distance: float
    stderr: float
    site_distances: list
    site_stderr: list

    @property
    def within_3se(self):
        return all(dq <= 3.0 * sq for dq, sq in zip(self.site_distances, self.site_stderr))

    def to_json(self):
        return {
            "N": self.N,
            "variant": self.variant,
            "distance": self.distance,
            "stderr": self.stderr,
            "within_3se": self.within_3se,
            "site_distances": self.site_distances,
            "site_stderr": self.site_stderr,
        }


def _chaos_row(model, W, N, n_traj, sim_cfg, rho0, variant, scale, graph, n_u, threads, chunk):
    from . import nbody as nbm

    Wg = grid_kernel(W, n_u)
    g = gr.weighted_graph(Wg, N) if graph == "weighted" else gr.sample_bernoulli(Wg, N, sim_cfg.seed)
    rep = "vector" if model.eta == 1.0 and _is_pure(rho0) else "density"
    ens = nbm.homodyne_ensemble(
        model, g, sim_cfg, n_traj, rho0=rho0, interaction_scale=scale, representation=rep, chunk=chunk, threads=threads
    )
    fin = ens.marginals[:, -1]
    mean = fin.mean(axis=0)
    var = (np.abs(fin - mean) ** 2).sum(axis=0) / max(n_traj - 1, 1)
    se = np.sqrt(var.sum(axis=(-2, -1)) / n_traj)
    lcfg = LimitSimConfig(n_u=n_u, dt=sim_cfg.dt, T=sim_cfg.T)
    path = solve_mean_ode(Wg, model, rho0, lcfg)
    sites = Wg.cell((np.arange(N) + 0.5) / N)
    dq = qm.frobenius_norm(mean - path.final()[sites])
    worst = int(np.argmax(dq))
    return ChaosRow(N, variant, float(dq[worst]), float(se[worst]), dq.tolist(), se.tolist())


def _is_pure(rho0):
    return rho0 is not None and abs(np.trace(rho0 @ rho0).real - 1.0) < 1e-10


def chaos_experiment(model, W, N_list, sim_cfg, n_traj=2000, rho0=None, graph="weighted", n_u=None,
                     variants=(("as_printed", 1.0), ("doubled", 2.0)), zero_control_N=4, threads=1, chunk=250):
    """Site marginals of ``N``-body ensembles against the limit mean field at ``T``.

    For each ``N`` and interaction convention the distance is the largest
    site-wise Frobenius distance, reported with that site's standard error.
    Two controls are appended, both against the non-interacting mean:
    ``N = 1`` and ``N = zero_control_N`` on an empty graph.
    """
    if rho0 is None:
        rho0 = qm.NAMED_STATES["plus"]
    if n_u is None:
        n_u = W.n if isinstance(W, gr.StepKernel) else 16
    rows = []
    for N in N_list:
        for name, scale in variants:
            rows.append(_chaos_row(model, W, N, n_traj, sim_cfg, rho0, name, scale, graph, n_u, threads, chunk))
    # a lone site has no partners: the step kernel of its graph is zero, and so is the reference
    zero = gr.constant_kernel(0.0, 1)
    controls = [_chaos_row(model, zero, 1, n_traj, sim_cfg, rho0, "control_N1", 1.0, graph, 1, threads, chunk)]
    controls.append(_chaos_row(model, zero, zero_control_N, n_traj, sim_cfg, rho0, "control_W0", 1.0, graph, 1, threads, chunk))
    return rows, controls


def report_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True)
