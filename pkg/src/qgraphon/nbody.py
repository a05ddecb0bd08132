"""Finite-N filters on the full ``d**N`` register.

Two detection schemes are simulated: homodyne (Euler-Maruyama with
projection back onto density matrices) and photon counting with unitary
``L`` (unitary flow between exactly sampled rate-1 Poisson events).
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dynamics as dyn
from . import qmatrix as qm
from .errors import DimensionMismatch, NonUnitaryL, TooLarge
from .graphon import SampledGraph
from .model import COUNTING, HOMODYNE, ParticleModel, assemble_N_hamiltonian

MAX_REGISTER = 4096


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    T: float = 1.0
    seed: int = 0
    store_marginals: tuple = ()
    renorm_every: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0 and self.dt <= self.T):
            raise ValueError(f"need 0 < dt <= T, got dt={self.dt}, T={self.T}")
        if self.renorm_every < 1:
            raise ValueError("renorm_every must be >= 1")
        object.__setattr__(self, "store_marginals", tuple(int(q) for q in self.store_marginals))

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt


@dataclass
class NBodyState:
    t: float
    rho: np.ndarray
    N: int
    d: int


@dataclass
class TrajectoryRecord:
    """One trajectory: observation record plus optional per-site marginals.

    ``observations`` is an ``(N, steps)`` array of ``dY`` increments for
    homodyne detection, or a list of per-site jump-time arrays for
    counting. ``states`` maps 1-based site labels to ``(len(times), d, d)``
    marginal paths.
    """

    times: np.ndarray
    detection: str
    observations: object
    seed: int
    trajectory: int = 0
    states: dict = field(default_factory=dict)
    final_state: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_sites(self):
        return len(self.observations)

    def write_csv(self, fh):
        """Columns: ``t, site``, marginal entries ``m{ij}_re/_im``, then ``dY`` or ``jumps``.

        ``jumps`` counts the site's events in ``(t_{k-1}, t_k]``. Marginal
        columns are blank for sites that were not stored.
        """
        d = next(iter(self.states.values())).shape[-1] if self.states else 0
        entry_cols = [f"m{i}{j}_{part}" for i in range(d) for j in range(d) for part in ("re", "im")]
        last = "dY" if self.detection == HOMODYNE else "jumps"
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "site"] + entry_cols + [last])
        if self.detection == COUNTING:
            counts = [np.histogram(ts, bins=self.times)[0] if len(self.times) > 1 else [] for ts in self.observations]
        for k, t in enumerate(self.times):
            for q in range(1, self.n_sites + 1):
                row = [_fmt(t), q]
                if q in self.states:
                    m = self.states[q][k]
                    row += [_fmt(v) for i in range(d) for j in range(d) for v in (m[i, j].real, m[i, j].imag)]
                else:
                    row += [""] * len(entry_cols)
                if k == 0:
                    row.append(_fmt(0.0) if self.detection == HOMODYNE else 0)
                elif self.detection == HOMODYNE:
                    row.append(_fmt(self.observations[q - 1][k - 1]))
                else:
                    row.append(int(counts[q - 1][k - 1]))
                w.writerow(row)

    def sidecar(self, cfg, model):
        return {
            "config": _jsonable(asdict(cfg)) if hasattr(cfg, "__dataclass_fields__") else cfg,
            "model_hash": model.digest(),
            "seed": self.seed,
            "trajectory": self.trajectory,
            "detection": self.detection,
            "meta": _jsonable(self.meta),
        }


def _fmt(x):
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _register_guard(d, N, limit=MAX_REGISTER):
    if d**N > limit:
        raise TooLarge(f"register dimension d^N = {d}^{N} exceeds {limit}")


def marginal(obj, q, d=None, N=None):
    """Single-site reduced state of site ``q`` (1-based).

    ``obj`` is an :class:`NBodyState`, a :class:`TrajectoryRecord` (uses its
    final register state) or a register matrix with explicit ``d`` and ``N``.
    """
    if isinstance(obj, NBodyState):
        rho, d, N = obj.rho, obj.d, obj.N
    elif isinstance(obj, TrajectoryRecord):
        if q in obj.states:
            return obj.states[q][-1]
        rho = obj.final_state
        N = obj.n_sites
        d = int(round(rho.shape[-1] ** (1.0 / N)))
    else:
        rho = np.asarray(obj)
        if d is None or N is None:
            raise DimensionMismatch("d and N are required for a bare matrix")
    return qm.partial_trace(rho, [q], d, N)


def all_marginals(rho, d, N):
    """Marginals of every site, shape ``(..., N, d, d)``."""
    return np.stack([qm.partial_trace(rho, [q], d, N) for q in range(1, N + 1)], axis=-3)


def vector_marginals(psi, d, N):
    out = []
    for q in range(N):
        T = psi.reshape(psi.shape[:-1] + (d**q, d, d ** (N - q - 1)))
        out.append(np.einsum("...iaj,...ibj->...ab", T, T.conj()))
    return np.stack(out, axis=-3)


def homodyne_nbody_step(state: NBodyState, H, L, eta, dt, dW, project=True):
    """One Euler-Maruyama step; returns ``(new_state, dY)``.

    ``dW`` holds one N(0, dt) increment per site. The raw update's trace
    change is stored on the returned state as ``trace_drift``.
    """
    dW = np.asarray(dW, dtype=float).reshape(1, state.N)
    raw, dY, drift = dyn.homodyne_increment(state.rho[None], H, L, eta, dt, dW, state.d, state.N)
    rho = qm.project_batch(raw)[0] if project else raw[0]
    new = NBodyState(state.t + dt, rho, state.N, state.d)
    new.trace_drift = float(drift[0])
    return new, dY[0]


class _Register:
    """Hamiltonian pieces of one model on one graph."""

    def __init__(self, model: ParticleModel, g: SampledGraph, interaction_scale=1.0):
        self.model = model
        self.N = g.N
        self.d = model.d
        _register_guard(self.d, self.N)
        self.H_base = assemble_N_hamiltonian(model, g, None, interaction_scale)
        self.positions = (np.arange(self.N) + 0.5) / self.N
        if model.control.active:
            self.Hc = np.stack([qm.embed_single(model.H_ctrl, q, self.N) for q in range(1, self.N + 1)])

    def controls(self, marg, t):
        """Per-site controls from marginals of shape ``(B, N, d, d)``."""
        return self.model.control(marg, t, self.positions[None, :])

    def hamiltonian(self, rho, t):
        if not self.model.control.active:
            return self.H_base
        u = self.controls(all_marginals(rho, self.d, self.N), t)
        return self.H_base + np.einsum("bq,qij->bij", u, self.Hc)

    def apply_H(self, psi, t):
        Hpsi = psi @ self.H_base.T
        if self.model.control.active:
            u = self.controls(vector_marginals(psi, self.d, self.N), t)
            for q in range(self.N):
                Hpsi = Hpsi + u[:, q, None] * dyn.site_vec(self.model.H_ctrl, psi, q, self.d, self.N)
        return Hpsi


def _initial(rho0, d, N, B):
    rho0 = qm.NAMED_STATES["proj0"] if rho0 is None and d == 2 else rho0
    if rho0 is None:
        rho0 = np.zeros((d, d), dtype=complex)
        rho0[0, 0] = 1.0
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape == (d, d):
        rho0 = qm.product_state([rho0] * N)
    if rho0.shape != (d**N, d**N):
        raise DimensionMismatch(f"initial state has shape {rho0.shape}")
    return np.broadcast_to(rho0, (B,) + rho0.shape).copy()


def _pure_vector(rho0):
    w, V = np.linalg.eigh(rho0)
    if abs(w[-1] - 1.0) > 1e-10:
        raise ValueError("the vector representation needs a pure initial state")
    return V[:, -1]


def _pure_register(rho0, d, N):
    rho0 = _initial(rho0, d, 1, 1)[0] if rho0 is None else np.asarray(rho0, dtype=complex)
    if rho0.shape == (d, d):
        v = _pure_vector(rho0)
        out = np.ones(1, dtype=complex)
        for _ in range(N):
            out = np.kron(out, v)
        return out
    return _pure_vector(_initial(rho0, d, N, 1)[0])


def _homodyne_batch(reg, rho0, cfg, trajs, representation, sample_steps, store_sites, diagnostics):
    d, N = reg.d, reg.N
    L, eta = reg.model.L, reg.model.eta
    n = cfg.n_steps
    B = len(trajs)
    dW = dyn.wiener_increments(cfg.seed, trajs, N, n, cfg.dt)
    samples = {}
    stored = {q: np.empty((B, n + 1, d, d), dtype=complex) for q in store_sites}
    dYs = np.empty((B, N, n))
    max_drift = 0.0
    n_proj = 0
    if representation == "vector":
        psi = np.broadcast_to(_pure_register(rho0, d, N), (B, d**N)).copy()
        marg = lambda: vector_marginals(psi, d, N)  # noqa: E731
    else:
        rho = _initial(rho0, d, N, B)
        marg = lambda: all_marginals(rho, d, N)  # noqa: E731
    if 0 in sample_steps or store_sites:
        m = marg()
        if 0 in sample_steps:
            samples[0] = m
        for q in store_sites:
            stored[q][:, 0] = m[:, q - 1]
    for k in range(n):
        t = k * cfg.dt
        if representation == "vector":
            psi, dY = dyn.sse_increment(psi, reg.apply_H(psi, t), L, cfg.dt, dW[:, k], d, N)
        else:
            H = reg.hamiltonian(rho, t)
            raw, dY, drift = dyn.homodyne_increment(rho, H, L, eta, cfg.dt, dW[:, k], d, N)
            max_drift = max(max_drift, float(drift.max()))
            if (k + 1) % cfg.renorm_every == 0:
                rho = qm.project_batch(raw)
                n_proj += 1
            else:
                rho = raw
        dYs[:, :, k] = dY
        if (k + 1) in sample_steps or store_sites:
            m = marg()
            if (k + 1) in sample_steps:
                samples[k + 1] = m
            for q in store_sites:
                stored[q][:, k + 1] = m[:, q - 1]
    diagnostics["max_trace_drift"] = max(diagnostics.get("max_trace_drift", 0.0), max_drift)
    diagnostics["projections"] = n_proj
    final = rho if representation != "vector" else np.einsum("bi,bj->bij", psi, psi.conj())
    return samples, stored, dYs, final


def simulate_homodyne_nbody(
    model: ParticleModel,
    g: SampledGraph,
    cfg: SimConfig,
    rho0=None,
    trajectory=0,
    interaction_scale=1.0,
    representation="density",
):
    """Simulate one homodyne trajectory of the ``N``-site register.

    ``representation="vector"`` integrates the equivalent pure-state
    equation; it needs ``eta = 1`` and a pure initial state.
    """
    _check_representation(model, representation)
    reg = _Register(model, g, interaction_scale)
    diag = {}
    _, stored, dYs, final = _homodyne_batch(
        reg, rho0, cfg, [trajectory], representation, set(), cfg.store_marginals, diag
    )
    return TrajectoryRecord(
        times=cfg.times,
        detection=HOMODYNE,
        observations=dYs[0],
        seed=cfg.seed,
        trajectory=trajectory,
        states={q: v[0] for q, v in stored.items()},
        final_state=final[0],
        meta={"dt": cfg.dt, "renorm_every": cfg.renorm_every, "representation": representation, **diag},
    )


def _check_representation(model, representation):
    if representation not in ("density", "vector"):
        raise ValueError(f"unknown representation {representation!r}")
    if representation == "vector" and model.eta != 1.0:
        raise ValueError("the vector representation needs eta = 1")


@dataclass
class NBodyEnsemble:
    """Per-trajectory site marginals at the sampled steps.

    ``marginals`` has shape ``(n_traj, len(steps), N, d, d)``.
    """

    times: np.ndarray
    steps: np.ndarray
    marginals: np.ndarray
    jump_counts: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def homodyne_ensemble(
    model,
    g,
    cfg,
    n_traj,
    rho0=None,
    sample_steps=None,
    interaction_scale=1.0,
    representation="density",
    chunk=250,
    threads=1,
):
    """Run ``n_traj`` homodyne trajectories (indices ``0..n_traj-1``)."""
    _check_representation(model, representation)
    reg = _Register(model, g, interaction_scale)
    steps = np.array(sorted(set(sample_steps if sample_steps is not None else [cfg.n_steps])))
    diag = {}

    def work(a, b):
        local = {}
        samples, _, _, _ = _homodyne_batch(reg, rho0, cfg, list(range(a, b)), representation, set(steps.tolist()), (), local)
        return np.stack([samples[int(s)] for s in steps], axis=1), local

    parts = dyn.run_chunks(work, n_traj, chunk, threads)
    for _, local in parts:
        diag["max_trace_drift"] = max(diag.get("max_trace_drift", 0.0), local.get("max_trace_drift", 0.0))
    return NBodyEnsemble(
        times=steps * cfg.dt,
        steps=steps,
        marginals=np.concatenate([p for p, _ in parts]),
        meta={"representation": representation, "interaction_scale": interaction_scale, **diag},
    )


def _jump_batch(reg, rho0, cfg, trajs, store_sites):
    d, N = reg.d, reg.N
    model = reg.model
    if model.meas.detection != COUNTING and not model.meas.is_unitary:
        raise NonUnitaryL("counting dynamics requires a unitary L")
    if not model.meas.is_unitary:
        raise NonUnitaryL("counting dynamics requires a unitary L")
    B = len(trajs)
    rho = _initial(rho0, d, N, B)
    events, per_site = [], []
    for tr in trajs:
        times, sites, ps = dyn.merged_events(cfg.seed, tr, N, cfg.T)
        events.append((times, sites))
        per_site.append(ps)

    def H_at(ts, idx, r):
        H = reg.hamiltonian(r, ts[0])
        return H, H, H

    stored = {q: np.empty((B, cfg.n_steps + 1, d, d), dtype=complex) for q in store_sites}
    if store_sites:
        m = all_marginals(rho, d, N)
        for q in store_sites:
            stored[q][:, 0] = m[:, q - 1]

    def on_step(k, r):
        if store_sites:
            m = all_marginals(r, d, N)
            for q in store_sites:
                stored[q][:, k] = m[:, q - 1]

    final = dyn.run_jump(rho, H_at, model.L, d, N, cfg.dt, cfg.n_steps, events, on_step)
    return final, stored, per_site


def simulate_jump_nbody(model: ParticleModel, g: SampledGraph, cfg: SimConfig, rho0=None, trajectory=0, interaction_scale=1.0):
    """Simulate one photon-counting trajectory (unitary ``L``, rate-1 jumps per site)."""
    if not model.meas.is_unitary:
        raise NonUnitaryL("counting dynamics requires a unitary L")
    reg = _Register(model, g, interaction_scale)
    final, stored, per_site = _jump_batch(reg, rho0, cfg, [trajectory], cfg.store_marginals)
    return TrajectoryRecord(
        times=cfg.times,
        detection=COUNTING,
        observations=per_site[0],
        seed=cfg.seed,
        trajectory=trajectory,
        states={q: v[0] for q, v in stored.items()},
        final_state=final[0],
        meta={"dt": cfg.dt, "integrator": "rk4+exact-events"},
    )


def jump_ensemble(model, g, cfg, n_traj, rho0=None, interaction_scale=1.0, chunk=250, threads=1):
    """Final marginals and per-site jump counts of ``n_traj`` counting trajectories."""
    if not model.meas.is_unitary:
        raise NonUnitaryL("counting dynamics requires a unitary L")
    reg = _Register(model, g, interaction_scale)

    def work(a, b):
        final, _, per_site = _jump_batch(reg, rho0, cfg, list(range(a, b)), ())
        counts = np.array([[len(ts) for ts in ps] for ps in per_site])
        return all_marginals(final, reg.d, reg.N), counts

    parts = dyn.run_chunks(work, n_traj, chunk, threads)
    return NBodyEnsemble(
        times=np.array([cfg.T]),
        steps=np.array([cfg.n_steps]),
        marginals=np.concatenate([m for m, _ in parts])[:, None],
        jump_counts=np.concatenate([c for _, c in parts]),
        meta={"interaction_scale": interaction_scale},
    )


def record_digest(record: TrajectoryRecord):
    h = hashlib.sha256()
    h.update(np.asarray(record.times).tobytes())
    if record.detection == HOMODYNE:
        h.update(np.asarray(record.observations).tobytes())
    else:
        for ts in record.observations:
            h.update(np.asarray(ts).tobytes())
    for q in sorted(record.states):
        h.update(record.states[q].tobytes())
    if record.final_state is not None:
        h.update(record.final_state.tobytes())
    return h.hexdigest()


def sidecar_json(record, cfg, model):
    return json.dumps(record.sidecar(cfg, model), indent=2, sort_keys=True)
