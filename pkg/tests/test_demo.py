import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qgraphon import demo
from qgraphon import qmatrix as qm


def test_north_pole_is_fixed():
    s = demo.bloch_step(demo.BlochState(0.0, 0.0, 1.0), (0.0, 0.0), 0.0, 1e-3, 0.0)
    assert s == demo.BlochState(0.0, 0.0, 1.0)
    drift, noise = demo.bloch_drift_noise([0.0, 0.0, 1.0], (0.0, 0.0), 0.0)
    assert not drift.any() and not noise.any()


@pytest.mark.parametrize("x", [0.3, -0.8, 1.0])
def test_equator_decay(x):
    dt = 1e-3
    s = demo.bloch_step(demo.BlochState(x, 0.0, 0.0), (0.0, 0.0), 0.0, dt, 0.0)
    # dx = -x dt; the printed dy carries +x dt
    assert s.x == pytest.approx(x - x * dt, abs=1e-15)
    assert s.y == pytest.approx(x * dt, abs=1e-15)
    assert s.z == 0.0


def test_zero_step_is_identity():
    st0 = demo.BlochState(0.1, -0.2, 0.3)
    assert demo.bloch_step(st0, (0.4, 0.5), 3.0, 0.0, 0.0) == st0


def test_printed_coefficients():
    r = np.array([0.2, -0.3, 0.4])
    drift, noise = demo.bloch_drift_noise(r, (0.5, -0.1), 2.0)
    x, y, z, mx, my, u = 0.2, -0.3, 0.4, 0.5, -0.1, 2.0
    np.testing.assert_allclose(drift, [-y - x + z * my, x - y + u * z - z * mx, -u * x + y * mx + x * my])
    np.testing.assert_allclose(noise, [-x * z, y * z, 1 - z * z])


def test_ball_projection():
    s = demo.bloch_step(demo.BlochState(0.0, 0.0, 1.0), (0.0, 0.0), 0.0, 1e-3, 0.0)
    out = demo.bloch_step_array(np.array([[0.0, 0.0, 0.99]]), (0.0, 0.0), 0.0, 1e-3, np.array([5.0]))
    assert np.linalg.norm(out) == pytest.approx(1.0)
    assert s.z == 1.0
    with pytest.raises(ValueError):
        demo.BlochState(1.0, 1.0, 0.0)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-10, 10), st.floats(-0.5, 0.5))
def test_step_stays_in_ball(x, y, z, u, dW):
    r = np.array([x, y, z])
    if r @ r > 1:
        r = r / np.linalg.norm(r)
    out = demo.bloch_step_array(r, (0.3, -0.2), u, 1e-2, dW)
    assert np.linalg.norm(out) <= 1 + demo.BALL_TOL


def test_dephasing_reduction_reports_mean_and_deviation():
    rep = demo.dephasing_reduction(dt=1e-3, T=0.5, n_traj=50, seed=0, initial=(1.0, 0.0, 0.0))
    assert rep["threshold"] == 5e-3
    assert rep["mean_within_3se"]
    assert rep["final_mean_x"] < 1.0
    assert np.isfinite(rep["sup_deviation"])


def test_demo_csv_is_reproducible():
    cfg = demo.DemoConfig(n_traj=4, dt=1e-2, T=0.2, seed=3, check_T=0.1, check_traj=2)
    texts = []
    for _ in range(2):
        fh = io.StringIO()
        demo.write_demo_csv(demo.run_qubit_demo(cfg), fh, every=5)
        texts.append(fh.getvalue())
    assert texts[0] == texts[1]
    lines = texts[0].splitlines()
    assert lines[0] == "t,class,source,mean_x,mean_y,mean_z,mean_fidelity,x,y,z"
    assert len(lines) == 1 + 5 * 4


def test_demo_summary_shape():
    res = demo.run_qubit_demo(demo.DemoConfig(n_traj=5, dt=1e-2, T=0.5, seed=0, check_traj=0))
    s = res.summary
    assert [c["target"] for c in s["classes"]] == ["proj0", "proj1"]
    assert "dephasing_reduction" not in s
    assert s["state_checks"]["max_neg_eig"] <= 1e-10
    assert s["max_bloch_norm"]["bloch"] <= 1 + demo.BALL_TOL
    assert res.matrix_fidelity.shape == (2, 5)
    np.testing.assert_allclose(res.matrix_mean[:, 0], [qm.bloch_vector(qm.NAMED_STATES["plus"])] * 2)
