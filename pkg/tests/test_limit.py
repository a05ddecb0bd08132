import io

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from qgraphon import graphon as gr
from qgraphon import limit as lm
from qgraphon import model as md
from qgraphon import qmatrix as qm
from qgraphon.errors import GridMismatch, NoConvergence

PLUS = qm.NAMED_STATES["plus"]
HALF = qm.IDENTITY2 / 2
TILTED = qm.bloch_density(2**-0.5, 0.0, 2**-0.5)


def plain():
    return md.demo_model(feedback=False)


def counting():
    return plain().replace(meas=md.MeasurementConfig(qm.SIGMA_Z, 1.0, md.COUNTING))


def ivp_reference(W, model, m0, T, n_u):
    """Mean equations integrated by an adaptive solver at tight tolerance."""
    shape = (n_u, model.d, model.d)
    m0 = np.broadcast_to(m0, shape)

    def f(t, y):
        m = y.view(complex).reshape(shape)
        return lm.lindblad_rhs(W, model, m, t).reshape(-1).view(float)

    sol = solve_ivp(f, (0, T), m0.astype(complex).reshape(-1).view(float), rtol=1e-12, atol=1e-13, method="DOP853")
    return sol.y[:, -1].view(complex).reshape(shape)


def test_lindblad_rhs_examples():
    m = plain()
    W0 = gr.constant_kernel(0.0, 1)
    # maximally mixed is stationary
    np.testing.assert_allclose(lm.lindblad_rhs(W0, m, HALF[None]), 0, atol=1e-15)
    # plus: -i[sigma_z, .] rotates the coherence, sigma_z dephasing damps it at rate 2
    out = lm.lindblad_rhs(W0, m, PLUS[None])[0]
    np.testing.assert_allclose(out, [[0, -1 - 1j], [-1 + 1j, 0]], atol=1e-15)


@pytest.mark.parametrize("W", [gr.two_block(), gr.constant(0.7), gr.CATALOG["min"]()])
def test_lindblad_rhs_is_traceless_and_hermitian(W):
    rng = np.random.default_rng(0)
    means = np.stack([qm.bloch_density(*v) for v in rng.uniform(-0.5, 0.5, (4, 3))])
    out = lm.lindblad_rhs(W, md.demo_model(), means)
    np.testing.assert_allclose(qm.trace(out), 0, atol=1e-14)
    np.testing.assert_allclose(out, qm.dagger(out), atol=1e-14)


def test_dephasing_closed_form():
    m = plain().replace(H_free=np.zeros((2, 2)))
    cfg = lm.LimitSimConfig(n_u=1, dt=1e-2, T=1.0)
    path = lm.solve_mean_ode(gr.constant_kernel(0.0, 1), m, PLUS, cfg)
    np.testing.assert_allclose(path.values[0, :, 0, 1].real, 0.5 * np.exp(-2 * cfg.times), atol=1e-9)
    np.testing.assert_allclose(path.values[0, :, 0, 0].real, 0.5, atol=1e-14)


def test_rotating_dephasing_closed_form():
    cfg = lm.LimitSimConfig(n_u=1, dt=1e-3, T=1.0)
    path = lm.solve_mean_ode(gr.constant_kernel(0.0, 1), plain(), PLUS, cfg)
    exact = 0.5 * np.exp((-2 - 2j) * cfg.times)
    np.testing.assert_allclose(path.values[0, :, 0, 1], exact, atol=1e-12)


def test_decoupled_cell_evolves_alone():
    # cell 1 starts maximally mixed and stays there; its field on cell 0 vanishes
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-3, T=1.0)
    path = lm.solve_mean_ode(gr.two_block(), plain(), np.stack([PLUS, HALF]), cfg)
    np.testing.assert_allclose(path.values[1], np.broadcast_to(HALF, path.values[1].shape), atol=1e-14)
    np.testing.assert_allclose(path.values[0, :, 0, 1], 0.5 * np.exp((-2 - 2j) * cfg.times), atol=1e-12)


@pytest.mark.parametrize("feedback", [False, True])
def test_mean_ode_matches_adaptive_reference(feedback):
    model = md.demo_model(feedback=feedback)
    W = gr.CATALOG["min"]()
    cfg = lm.LimitSimConfig(n_u=4, dt=1e-3, T=1.0)
    path = lm.solve_mean_ode(W, model, TILTED, cfg)
    ref = ivp_reference(lm.grid_kernel(W, 4), model, TILTED, 1.0, 4)
    assert np.abs(path.final() - ref).max() < 1e-9


def test_mean_ode_is_fourth_order():
    model = plain()
    W = gr.two_block()
    ref = ivp_reference(lm.grid_kernel(W, 2), model, TILTED, 1.0, 2)
    errs = [np.abs(lm.solve_mean_ode(W, model, TILTED, lm.LimitSimConfig(dt=dt)).final() - ref).max() for dt in (0.04, 0.02)]
    assert np.log2(errs[0] / errs[1]) > 3.7


def test_mean_path_stays_a_state():
    path = lm.solve_mean_ode(gr.two_block(), md.demo_model(), PLUS, lm.LimitSimConfig(n_u=2, dt=1e-3, T=2.0))
    h, e, t = qm.density_violations(path.values)
    assert h <= 1e-12 and e >= -1e-12 and t <= 1e-12


def test_grid_kernel():
    assert lm.grid_kernel(gr.two_block(), 4).weights.tolist() == gr.discretize(gr.two_block(), 4).weights.tolist()
    K = gr.StepKernel([[0, 1], [1, 0]])
    assert lm.grid_kernel(K, 2) is K
    assert lm.grid_kernel(K, 4).n == 4
    with pytest.raises(GridMismatch):
        lm.grid_kernel(K, 3)


def test_mean_path_csv():
    path = lm.solve_mean_ode(gr.two_block(), plain(), PLUS, lm.LimitSimConfig(dt=0.5, T=1.0))
    fh = io.StringIO()
    path.write_csv(fh)
    lines = fh.getvalue().splitlines()
    assert lines[0] == "t,cell,m00_re,m00_im,m01_re,m01_im,m10_re,m10_im,m11_re,m11_im"
    assert len(lines) == 1 + 3 * 2
    assert lines[1].startswith("0,0,0.5,0,0.5,0")


def test_picard_without_interaction_converges_in_one_step():
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-3, T=1.0)
    _, report = lm.picard_solve(gr.constant(0.0), md.demo_model(), PLUS, cfg)
    assert report.iterations == 1 and report.converged
    assert report.distances[1] == 0.0


def test_picard_fixed_point_is_the_mean_ode():
    model = md.demo_model()
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-3, T=1.0)
    fixed, report = lm.picard_solve(gr.two_block(), model, PLUS, cfg)
    assert report.converged and report.distances[-1] <= cfg.picard_tol
    assert all(a > b for a, b in zip(report.distances, report.distances[1:]))
    assert lm.path_distance(fixed, lm.solve_mean_ode(gr.two_block(), model, PLUS, cfg)) < 1e-7


def test_picard_map_fixes_the_mean_ode_path():
    model = plain()
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-3, T=1.0)
    path = lm.solve_mean_ode(gr.two_block(), model, TILTED, cfg)
    assert lm.path_distance(lm.picard_map(gr.two_block(), model, path, cfg), path) < 1e-9


def test_picard_failure_carries_report():
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-2, T=1.0, picard_max_iter=1, picard_tol=1e-14)
    with pytest.raises(NoConvergence) as info:
        lm.picard_solve(gr.two_block(), plain(), PLUS, cfg)
    assert not info.value.report.converged and len(info.value.report.distances) == 2
    _, rep = lm.picard_solve(gr.two_block(), plain(), PLUS, cfg, raise_on_failure=False)
    assert rep.iterations == 1


def test_picard_grid_check():
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-2, T=1.0)
    path = lm.solve_mean_ode(gr.two_block(), plain(), PLUS, cfg)
    with pytest.raises(GridMismatch):
        lm.picard_map(gr.two_block(), plain(), path, lm.LimitSimConfig(n_u=4, dt=1e-2, T=1.0))


def test_cell_noise_streams():
    a = lm.cell_noise(3, [0, 1, 0], [0, 0, 1], 100, 1e-2)
    b = lm.cell_noise(3, [1], [0], 100, 1e-2)
    assert np.array_equal(a[1], b[0])
    assert not np.array_equal(a[0], a[2])


def test_ensemble_mean_tracks_mean_ode_without_feedback():
    model = plain()
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-3, T=0.5, M=400, seed=1)
    path = lm.solve_mean_ode(gr.two_block(), model, TILTED, cfg)
    ens = lm.simulate_limit_ensemble(gr.two_block(), model, path, cfg, check_states=True)
    err = qm.frobenius_norm(ens.mean[:, -1] - path.final())
    assert np.all(err <= 3 * ens.stderr[:, -1] + 2e-3)
    assert ens.meta["max_neg_eig"] <= 1e-10 and ens.meta["max_trace_err"] <= 1e-10


def test_ensemble_is_independent_of_chunking():
    model = md.demo_model()
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-2, T=0.3, M=10, seed=2)
    path = lm.solve_mean_ode(gr.two_block(), model, PLUS, cfg)
    a = lm.simulate_limit_ensemble(gr.two_block(), model, path, cfg, keep=2, chunk=3)
    b = lm.simulate_limit_ensemble(gr.two_block(), model, path, cfg, keep=2, chunk=20)
    np.testing.assert_allclose(a.final, b.final, atol=1e-14)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-14)
    _, states, _ = lm.simulate_homodyne_limit(gr.two_block(), model, path, 1, cfg, trajectory=1)
    np.testing.assert_allclose(a.kept[1, 1], states, atol=1e-14)


def test_jump_limit_keeps_purity_and_counts():
    model = counting()
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-2, T=2.0, M=200, seed=0, detection=md.COUNTING)
    path = lm.solve_mean_ode(gr.two_block(), model, TILTED, cfg)
    ens = lm.simulate_limit_ensemble(gr.two_block(), model, path, cfg)
    purity = np.einsum("cmab,cmba->cm", ens.final, ens.final).real
    assert np.abs(purity - 1).max() < 1e-8
    assert abs(ens.jump_counts.mean() - 2.0) < 3 * np.sqrt(2.0 / ens.jump_counts.size)
    _, states, jumps = lm.simulate_jump_limit(gr.two_block(), model, path, 0, cfg, trajectory=5)
    assert np.all(np.diff(jumps) > 0)
    np.testing.assert_allclose(states[-1], ens.final[0, 5], atol=1e-12)


def test_stability_identical_kernels_give_zero():
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-2, T=0.5, M=20, seed=0)
    res = lm.stability_experiment(gr.two_block(), gr.two_block(), md.demo_model(), PLUS, cfg)
    assert res.distance_sq == 0.0 and res.cut_norm == 0.0 and res.ratio == 0.0


@pytest.mark.parametrize("model", [md.demo_model(), counting()], ids=["homodyne", "counting"])
def test_stability_is_symmetric(model):
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-2, T=0.5, M=20, seed=0, detection=model.meas.detection)
    # with equal cells the two kernels give the same field, so start the cells apart
    m0 = np.stack([PLUS, TILTED])
    a = lm.stability_experiment(gr.two_block(), gr.constant(0.5), model, m0, cfg)
    b = lm.stability_experiment(gr.constant(0.5), gr.two_block(), model, m0, cfg)
    assert a.distance_sq == pytest.approx(b.distance_sq, rel=1e-12)
    assert a.cut_norm == b.cut_norm == 0.125 and a.cut_method == "exact"
    assert a.distance_sq > 0


def test_stability_grows_with_kernel_distance():
    cfg = lm.LimitSimConfig(n_u=2, dt=1e-2, T=1.0, M=50, seed=0)
    rows, spread = lm.stability_sweep(gr.two_block(), gr.constant(0.5), md.demo_model(), PLUS, cfg, (0.2, 0.6))
    assert rows[0][1].distance_sq < rows[1][1].distance_sq
    assert rows[0][1].cut_norm == pytest.approx(0.025) and rows[1][1].cut_norm == pytest.approx(0.075)
    assert spread >= 1.0
