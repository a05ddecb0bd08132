"""Shared stochastic integrators for registers of ``N`` sites of dimension ``d``.

States are stacked along a leading batch axis. Single-particle dynamics is
the ``N = 1`` case, so the finite-N and limit simulators share every
floating-point operation when ``N = 1``.

Noise streams are keyed by ``(seed, trajectory, site)`` so a trajectory's
noise never depends on how trajectories are batched or scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import qmatrix as qm
from .errors import NonFiniteNoise


def stream(seed, trajectory, site):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trajectory), int(site)]))


def wiener_increments(seed, trajectories, n_sites, n_steps, dt):
    """Brownian increments, shape ``(len(trajectories), n_steps, n_sites)``."""
    out = np.empty((len(trajectories), n_steps, n_sites))
    sd = np.sqrt(dt)
    for i, tr in enumerate(trajectories):
        for q in range(n_sites):
            out[i, :, q] = stream(seed, tr, q).normal(0.0, sd, size=n_steps)
    return out


def poisson_times(seed, trajectory, site, T, rate=1.0):
    """Event times of a rate-``rate`` Poisson process on ``[0, T]``."""
    rng = stream(seed, trajectory, site)
    times = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t > T:
            break
        times.append(t)
    return np.array(times)


def merged_events(seed, trajectory, n_sites, T):
    """All jump events of one trajectory as time-sorted ``(times, sites)``."""
    per_site = [poisson_times(seed, trajectory, q, T) for q in range(n_sites)]
    times = np.concatenate(per_site) if per_site else np.empty(0)
    sites = np.concatenate([np.full(len(p), q) for q, p in enumerate(per_site)]) if per_site else np.empty(0, int)
    order = np.argsort(times, kind="stable")
    return times[order], sites[order].astype(int), per_site


def site_mul(op, M, q, d, N, side):
    """``op_q @ M`` (``side="left"``) or ``M @ op_q`` (``"right"``); ``q`` is 0-based."""
    if N == 1:
        return op @ M if side == "left" else M @ op
    return qm.apply_local(op, M, q + 1, d, N, side=side)


def site_vec(op, psi, q, d, N):
    if N == 1:
        return psi @ op.T
    return qm.apply_local(op, psi, q + 1, d, N, side="vector")


def homodyne_increment(rho, H, L, eta, dt, dW, d, N):
    """One Euler-Maruyama step of the diffusive filter on a register.

    ``dW`` has shape ``(B, N)``. Returns the raw (unprojected) update, the
    observation increments ``dY`` of shape ``(B, N)`` and the trace of the
    increment per batch member.
    """
    if not np.all(np.isfinite(dW)):
        raise NonFiniteNoise("Wiener increments must be finite")
    Ld = qm.dagger(L)
    K = L @ Ld
    se = np.sqrt(eta)
    drift = -1j * (H @ rho - rho @ H)
    incr = np.zeros_like(rho)
    dY = np.empty(dW.shape)
    for q in range(N):
        Lr = site_mul(L, rho, q, d, N, "left")
        rLd = site_mul(Ld, rho, q, d, N, "right")
        LrLd = site_mul(Ld, Lr, q, d, N, "right")
        Kr = site_mul(K, rho, q, d, N, "left")
        rK = site_mul(K, rho, q, d, N, "right")
        drift += LrLd - 0.5 * (Kr + rK)
        # tr((L_q + L_q^dag) rho) = tr(L_q rho) + tr(rho L_q^dag)
        c = (qm.trace(Lr) + qm.trace(rLd)).real
        incr += se * (rLd + Lr - c[:, None, None] * rho) * dW[:, q, None, None]
        dY[:, q] = dW[:, q] + se * c * dt
    incr += drift * dt
    return rho + incr, dY, np.abs(qm.trace(incr))


def sse_increment(psi, Hpsi, L, dt, dW, d, N):
    """Euler-Maruyama step of the unit-efficiency diffusive filter on pure states.

    ``Hpsi`` is the Hamiltonian already applied to ``psi``. For ``eta = 1``
    and ``rho = psi psi^dag`` this is the same equation as
    :func:`homodyne_increment`. Returns the normalized state and ``dY``.
    """
    if not np.all(np.isfinite(dW)):
        raise NonFiniteNoise("Wiener increments must be finite")
    K = qm.dagger(L) @ L
    drift = -1j * Hpsi
    noise = np.zeros_like(psi)
    dY = np.empty(dW.shape)
    for q in range(N):
        Lpsi = site_vec(L, psi, q, d, N)
        Kpsi = site_vec(K, psi, q, d, N)
        # <psi|(L + L^dag)|psi> = 2 Re <psi|L|psi>
        c = 2.0 * np.einsum("bi,bi->b", psi.conj(), Lpsi).real
        cc = c[:, None]
        drift += -0.5 * Kpsi + 0.5 * cc * Lpsi - 0.125 * cc**2 * psi
        noise += (Lpsi - 0.5 * cc * psi) * dW[:, q, None]
        dY[:, q] = dW[:, q] + c * dt
    out = psi + drift * dt + noise
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out, dY


def unitary_rhs(rho, H):
    return -1j * (H @ rho - rho @ H)


def rk4_unitary(rho, H0, Hm, H1, h):
    """Classical RK4 for ``d rho/dt = -i[H(t), rho]`` with ``H`` at start, midpoint, end."""
    k1 = unitary_rhs(rho, H0)
    k2 = unitary_rhs(rho + 0.5 * h * k1, Hm)
    k3 = unitary_rhs(rho + 0.5 * h * k2, Hm)
    k4 = unitary_rhs(rho + h * k3, H1)
    return rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def apply_jump(rho, L, q, d, N):
    """``rho <- L_q rho L_q^dag``."""
    return site_mul(qm.dagger(L), site_mul(L, rho, q, d, N, "left"), q, d, N, "right")


def lindblad_local(m, H, L):
    """``-i[H, m] + L m L^dag - {L L^dag, m}/2`` for stacks of single-site states."""
    Ld = qm.dagger(L)
    K = L @ Ld
    return -1j * (H @ m - m @ H) + L @ m @ Ld - 0.5 * (K @ m + m @ K)


def midpoint_values(values):
    """Cubic-Lagrange estimates at the midpoints of a uniform grid (axis 0).

    Interior midpoints use the symmetric 4-point stencil, the first and last
    use one-sided cubics; grids shorter than 4 points fall back to linear.
    """
    values = np.asarray(values)
    n = values.shape[0]
    if n < 4:
        return 0.5 * (values[:-1] + values[1:])
    mid = np.empty((n - 1,) + values.shape[1:], dtype=values.dtype)
    mid[1:-1] = (-values[:-3] + 9.0 * values[1:-2] + 9.0 * values[2:-1] - values[3:]) / 16.0
    mid[0] = (5.0 * values[0] + 15.0 * values[1] - 5.0 * values[2] + values[3]) / 16.0
    mid[-1] = (values[-4] - 5.0 * values[-3] + 15.0 * values[-2] + 5.0 * values[-1]) / 16.0
    return mid


def cubic_at(values, dt, t):
    """Cubic-Lagrange interpolation of grid samples ``values[k] = f(k dt)`` at time ``t``."""
    values = np.asarray(values)
    n = values.shape[0]
    x = t / dt
    if n < 4:
        k = int(np.clip(np.floor(x), 0, n - 2))
        a = x - k
        return (1 - a) * values[k] + a * values[k + 1]
    k0 = int(np.clip(np.floor(x) - 1, 0, n - 4))
    nodes = np.arange(k0, k0 + 4, dtype=float)
    out = 0.0
    for i in range(4):
        wgt = 1.0
        for j in range(4):
            if j != i:
                wgt *= (x - nodes[j]) / (nodes[i] - nodes[j])
        out = out + wgt * values[k0 + i]
    return out


def run_chunks(fn, n_items, chunk, threads=1):
    """Apply ``fn(start, stop)`` to fixed-size index chunks; results in index order.

    Chunk boundaries do not depend on ``threads``, so batched floating-point
    work is identical for any worker count.
    """
    bounds = [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]
    if threads <= 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


def run_jump(rho, H_at, L, d, N, dt, n_steps, events, on_step=None):
    """Piecewise-deterministic integration of the linear counting filter.

    Between events the state follows ``d rho/dt = -i[H(t), rho]`` (RK4 on
    the grid, split exactly at event times); at an event on site ``q``,
    ``rho <- L_q rho L_q^dag``.

    Parameters
    ----------
    rho : ndarray, shape (B, D, D)
        Initial states; updated copy is returned.
    H_at : callable
        ``H_at(times, idx, rho_start)`` returns one Hamiltonian (stack or
        single matrix) per entry of ``times`` for batch members ``idx``;
        state-dependent parts use ``rho_start`` (held over the sub-step).
    events : list of (times, sites)
        Time-sorted events per batch member (sites 0-based).
    on_step : callable, optional
        ``on_step(k, rho)`` after the state reaches grid point ``k``.
    """
    rho = np.array(rho, dtype=complex)
    B = rho.shape[0]
    ptr = np.zeros(B, dtype=int)
    next_t = np.array([ev[0][0] if len(ev[0]) else np.inf for ev in events])
    all_idx = np.arange(B)
    for k in range(n_steps):
        t0 = k * dt
        t1 = (k + 1) * dt
        jumping = next_t <= t1
        if not jumping.any():
            H0, Hm, H1 = H_at((t0, t0 + 0.5 * dt, t1), all_idx, rho)
            rho = rk4_unitary(rho, H0, Hm, H1, dt)
        else:
            idx = np.nonzero(~jumping)[0]
            if idx.size:
                H0, Hm, H1 = H_at((t0, t0 + 0.5 * dt, t1), idx, rho[idx])
                rho[idx] = rk4_unitary(rho[idx], H0, Hm, H1, dt)
            for b in np.nonzero(jumping)[0]:
                times, sites = events[b]
                r = rho[b : b + 1]
                t = t0
                while ptr[b] < len(times) and times[ptr[b]] <= t1:
                    tau = times[ptr[b]]
                    r = _rk4_segment(r, H_at, b, t, tau)
                    r = apply_jump(r, L, int(sites[ptr[b]]), d, N)
                    t = tau
                    ptr[b] += 1
                r = _rk4_segment(r, H_at, b, t, t1)
                rho[b] = r[0]
                next_t[b] = times[ptr[b]] if ptr[b] < len(times) else np.inf
        rho = qm.hermitize(rho)
        if on_step is not None:
            on_step(k + 1, rho)
    return rho


def _rk4_segment(r, H_at, b, ta, tb):
    h = tb - ta
    if h <= 0.0:
        return r
    H0, Hm, H1 = H_at((ta, ta + 0.5 * h, tb), np.array([b]), r)
    return rk4_unitary(r, H0, Hm, H1, h)
