import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from adaptive_dc.controllers import ControllerGains, DroopGains, KnownRGains, reference_c1_gains
from adaptive_dc.graph import CommGraph
from adaptive_dc.plant import PlantParams, reference_plant_params
from adaptive_dc.scenario import Scenario, Segment
from adaptive_dc.simkernel import (
    DelayBuffer,
    GainConditionWarning,
    IntegratorConfig,
    NoiseConfig,
    SimulationAborted,
    StepSizeWarning,
    available_backends,
    build_model,
    default_initial_state,
    delay_steps,
    delayed_view,
    integrate,
    kernel_rhs,
)

needs_cython = pytest.mark.skipif("cython" not in available_backends(),
                                  reason="compiled kernel not built")


def _x0(n=3, seed=3):
    rng = np.random.default_rng(seed)
    x = default_initial_state(n, 200.0)
    x[:n] = rng.uniform(4, 8, n)
    x[n] = 199.0
    x[n + 1:2 * n + 1] = rng.uniform(4, 8, n)
    x[2 * n + 1:3 * n + 1] = rng.normal(0, 0.2, n)
    x[3 * n + 1:4 * n + 1] = rng.uniform(0.5, 1.5, n)
    x[4 * n + 1:] = rng.uniform(3e-4, 1e-3, n)
    return x


def _run(backend, graph, noise=None, controller=None, steps=1500, h=1e-7, re=7, x0=None):
    p = reference_plant_params()
    sc = Scenario((Segment(steps * h / 2, 2.98), Segment(steps * h / 2, 1.7)))
    return integrate(p, controller or reference_c1_gains(), graph, sc,
                     IntegratorConfig(step_s=h, record_every=re),
                     x0=_x0() if x0 is None else x0, noise=noise, backend=backend)


@needs_cython
@pytest.mark.parametrize("graph", [CommGraph.path(3), CommGraph.path(3).with_delay(2e-6, 3e-6),
                                   CommGraph.complete(3, delay_s=np.array([[0, 1e-6, 5e-7],
                                                                           [1e-6, 0, 0],
                                                                           [5e-7, 0, 0]]))])
@pytest.mark.parametrize("ctrl", ["c1", "c2", "c3"])
def test_backends_agree_bit_for_bit(graph, ctrl):
    p = reference_plant_params()
    controller = {"c1": reference_c1_gains(), "c2": DroopGains(np.full(3, 0.5), 200.0),
                  "c3": KnownRGains(0.9 * p.R_tau, np.ones(3), np.ones(3), 200.0)}[ctrl]
    noise = NoiseConfig(0.01, 0.05, seed=5)
    a = _run("python", graph, noise, controller)
    b = _run("cython", graph, noise, controller)
    np.testing.assert_array_equal(a.state_matrix(), b.state_matrix())
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_array_equal(a.segment, b.segment)


@needs_cython
def test_rhs_backends_agree(gains, path3):
    p = reference_plant_params()
    x = _x0()
    a = kernel_rhs(p, gains, path3, x, backend="python")
    b = kernel_rhs(p, gains, path3, x, backend="cython")
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_runs_are_deterministic(path3):
    noise = NoiseConfig(0.02, 0.1, seed=11)
    a = _run(None, path3.with_delay(1e-6), noise)
    b = _run(None, path3.with_delay(1e-6), noise)
    np.testing.assert_array_equal(a.state_matrix(), b.state_matrix())
    c = _run(None, path3.with_delay(1e-6), NoiseConfig(0.02, 0.1, seed=12))
    assert not np.array_equal(a.state_matrix(), c.state_matrix())


def test_delay_shorter_than_step_is_one_step(path3):
    assert delay_steps(0.0, 1e-7) == 0
    assert delay_steps(5e-8, 1e-7) == 1
    assert delay_steps(2e-3, 1e-6) == 2000
    assert delay_steps(3e-7, 1e-7) == 3


def test_delay_buffer_constant_and_ramp():
    buf = DelayBuffer(2, 4, initial_row=[1.0, 2.0, 3.0, 4.0, 5.0])
    for d in range(4):
        np.testing.assert_array_equal(buf.read(0, d, slice(None)), [1, 2, 3, 4, 5])
    for k in range(10):
        buf.push(k, np.full(5, float(k)))
        for d in range(4):
            expect = float(k - d) if k - d >= 0 else 1.0
            if k - d < 0:
                continue
            assert buf.read(k, d, 0) == expect
    with pytest.raises(ValueError):
        buf.read(9, 4, 0)


def test_delayed_view_mixes_live_and_buffered():
    n = 3
    g = CommGraph.path(3, delay_s=np.array([[0, 2e-7, 0], [2e-7, 0, 0], [0, 0, 0]]))
    g = CommGraph(g.adjacency, g.delay_s, broadcast_delay_s=1e-7)
    x_old = _x0(seed=1)
    x_new = _x0(seed=2)
    buf = DelayBuffer.for_graph(g, 1e-7, x_old)
    assert buf.depth == 3
    views = delayed_view(buf, g, 5, 1e-7, live_x=x_new)
    nb0, V0 = views[0]
    assert nb0.ids == (1,)
    assert nb0.I_tau[0] == x_old[1]
    assert nb0.theta[0] == x_old[2 * n + 1 + 1]
    nb1, _ = views[1]
    assert nb1.I_tau.tolist() == [x_old[0], x_new[2]]
    assert V0 == x_old[n]


def _oracle_run(p, g, graph, x0, h, nsteps, I_ell, noise_rows):
    """Delayed RK4 with frozen neighbour data, written against the plain equations."""
    n = p.n_s
    A = graph.adjacency.astype(float)
    D = np.array([[delay_steps(graph.delay_s[i, j], h) for j in range(n)] for i in range(n)])
    dv = delay_steps(graph.broadcast_delay_s, h)
    hist = {}

    def measured(x, nz):
        return np.concatenate([x[:n] + nz[:n], x[2 * n + 1:3 * n + 1], [x[n] + nz[n]]])

    init = measured(x0, np.zeros(n + 1))

    def past(k):
        return hist.get(k, init)

    def rhs(x, Ifro, thfro, Vfro, nz):
        I, V = x[:n], x[n]
        phi, th, rh, et = (x[(1 + m) * n + 1:(2 + m) * n + 1] for m in range(4))
        Im = I + nz[:n]
        Vm = V + nz[n] if dv == 0 else Vfro
        THJ = np.where(D == 0, th[None, :], thfro)
        IJ = np.where(D == 0, Im[None, :], Ifro)
        sth = np.sum(A * (th[:, None] - THJ), axis=1)
        sI = np.sum(A * (g.W[:, None] * Im[:, None] - g.W[None, :] * IJ), axis=1)
        F = (-(Vm - g.V_dc_star) - g.W * sth) / g.T_phi
        z = Im - phi
        u = -g.K_z * z + rh * Im + g.V_dc_star + F * et - g.W * sth
        dI = (-V - p.R_tau * I + u) / p.L_tau
        dV = (I.sum() - I_ell - p.Y * V) / p.C_dc
        return np.concatenate([dI, [dV], F, sI / g.T_theta, -Im * z / g.T_rhat, -F * z / g.T_eta])

    x = x0.copy()
    for k in range(nsteps):
        nz = noise_rows[k]
        hist[k] = measured(x, nz)
        Ifro = np.array([[past(k - D[i, j])[j] for j in range(n)] for i in range(n)])
        thfro = np.array([[past(k - D[i, j])[n + j] for j in range(n)] for i in range(n)])
        Vfro = past(k - dv)[2 * n]
        k1 = rhs(x, Ifro, thfro, Vfro, nz)
        k2 = rhs(x + h / 2 * k1, Ifro, thfro, Vfro, nz)
        k3 = rhs(x + h / 2 * k2, Ifro, thfro, Vfro, nz)
        k4 = rhs(x + h * k3, Ifro, thfro, Vfro, nz)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


@pytest.mark.parametrize("noisy", [False, True])
def test_kernel_matches_independent_delayed_rk4(noisy):
    p = reference_plant_params()
    g = reference_c1_gains()
    delays = np.array([[0, 3e-7, 0], [3e-7, 0, 1e-7], [0, 1e-7, 0]])
    graph = CommGraph(CommGraph.path(3).adjacency, delays, broadcast_delay_s=2e-7)
    h, nsteps = 1e-7, 400
    x0 = _x0()
    noise = NoiseConfig(0.01, 0.05, seed=9) if noisy else None
    sc = Scenario((Segment(nsteps * h, 2.98),))
    traj = integrate(p, g, graph, sc, IntegratorConfig(step_s=h, record_every=nsteps), x0=x0,
                     noise=noise)
    if noisy:
        rows = np.random.default_rng(9).standard_normal((nsteps, 4)) * np.r_[np.full(3, 0.01), 0.05]
    else:
        rows = np.zeros((nsteps, 4))
    ref = _oracle_run(p, g, graph, x0, h, nsteps, sc.load_amps()[0], rows)
    got = traj.state_matrix()[-1]
    assert traj.t[-1] == pytest.approx(nsteps * h)
    np.testing.assert_allclose(got, ref, rtol=1e-11, atol=1e-11)


def test_zero_delay_run_matches_undelayed_rk4(path3):
    p = reference_plant_params()
    g = reference_c1_gains()
    h, nsteps = 1e-7, 300
    x0 = _x0()
    traj = integrate(p, g, path3, Scenario((Segment(nsteps * h, 2.98),)),
                     IntegratorConfig(step_s=h, record_every=nsteps), x0=x0)
    x = x0.copy()
    I_ell = 2.98 * 6.7

    def f(v):
        return kernel_rhs(p, g, path3, v, I_ell=I_ell)[0]

    for _ in range(nsteps):
        k1 = f(x)
        k2 = f(x + h / 2 * k1)
        k3 = f(x + h / 2 * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    np.testing.assert_allclose(traj.state_matrix()[-1], x, rtol=1e-12, atol=1e-12)


def test_single_line_droop_matches_matrix_exponential():
    L, R, C, Y, k, Vs, I_ell = 1e-3, 0.5, 1e-3, 0.01, 0.7, 200.0, 13.4
    p = PlantParams([L], [R], C, I_ell, Y)
    A = np.array([[-(R + k) / L, -1 / L], [1 / C, -Y / C]])
    b = np.array([Vs / L, -I_ell / C])
    M = np.zeros((3, 3))
    M[:2, :2], M[:2, 2] = A, b
    x0 = default_initial_state(1, Vs)
    x0[0] = 3.0
    T = 0.02
    with pytest.warns(StepSizeWarning):
        traj = integrate(p, DroopGains(np.array([k]), Vs), CommGraph(np.zeros((1, 1))),
                         Scenario((Segment(T, 2.0),)),
                         IntegratorConfig(step_s=1e-6, record_every=1000), x0=x0)
    for t, row in zip(traj.t, traj.state_matrix()):
        ref = expm(M * t) @ np.r_[x0[:2], 1.0]
        np.testing.assert_allclose(row[:2], ref[:2], rtol=1e-9, atol=1e-9)


def _order_error(method, h, ref_h):
    p = reference_plant_params()
    g = reference_c1_gains()
    sc = Scenario((Segment(1e-3, 2.98),))
    x0 = _x0()

    def end(step):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StepSizeWarning)
            tr = integrate(p, g, CommGraph.path(3), sc,
                           IntegratorConfig(method=method, step_s=step,
                                                    record_every=int(round(1e-3 / step))), x0=x0)
        return tr.state_matrix()[-1]

    ref = end(ref_h)
    scale = np.abs(ref) + 1.0
    e1 = np.max(np.abs(end(h) - ref) / scale)
    e2 = np.max(np.abs(end(h / 2) - ref) / scale)
    return np.log2(e1 / e2)


def test_rk4_converges_at_fourth_order():
    assert abs(_order_error("rk4", 1e-6, 1e-6 / 16) - 4.0) < 0.3


def test_euler_converges_at_first_order():
    assert abs(_order_error("euler", 5e-8, 5e-8 / 64) - 1.0) < 0.3


def test_large_step_aborts_with_partial_trajectory(path3):
    p = reference_plant_params()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(SimulationAborted) as exc:
            integrate(p, reference_c1_gains(), path3, Scenario((Segment(0.5, 2.98),)),
                      IntegratorConfig(step_s=1e-4, record_every=1), x0=_x0())
    assert exc.value.step > 0
    assert exc.value.partial is not None and len(exc.value.partial) >= 1
    assert np.all(np.isfinite(exc.value.partial.state_matrix()[0]))


def test_warnings_for_step_and_gain(path3):
    p = reference_plant_params()
    sc = Scenario((Segment(1e-5, 2.98),))
    with pytest.warns(StepSizeWarning):
        integrate(p, reference_c1_gains(), path3, sc, IntegratorConfig(step_s=1e-6, record_every=1))
    bad = ControllerGains(1e-4, 1, 10, 1e6, 2, np.ones(3), 200)
    with pytest.warns(GainConditionWarning):
        integrate(p, bad, path3, sc, IntegratorConfig(step_s=1e-7, record_every=1))


def test_recording_grid_and_segments(path3):
    p = reference_plant_params()
    sc = Scenario((Segment(1e-4, 2.98), Segment(2e-4, 1.7)))
    tr = integrate(p, reference_c1_gains(), path3, sc, IntegratorConfig(step_s=1e-7, record_every=100))
    np.testing.assert_allclose(tr.t, np.arange(31) * 1e-5, rtol=0, atol=1e-15)
    assert tr.segment[0] == 0 and tr.segment[9] == 0
    assert tr.segment[10] == 1 and tr.segment[-1] == 1
    assert tr.segment_end_index(0) == 9
    assert tr.meta["steps"] == 3000
    np.testing.assert_array_equal(tr.state_matrix()[0], default_initial_state(3, 200.0))


def test_t_end_trims_the_run(path3):
    p = reference_plant_params()
    sc = Scenario((Segment(1e-4, 2.98), Segment(2e-4, 1.7)))
    tr = integrate(p, reference_c1_gains(), path3, sc,
                   IntegratorConfig(step_s=1e-7, record_every=100, t_end=1.5e-4))
    assert tr.meta["steps"] == 1500
    assert tr.t[-1] == pytest.approx(1.5e-4)


def test_model_rejects_mismatched_sizes():
    p = reference_plant_params()
    with pytest.raises(ValueError):
        build_model(p, reference_c1_gains(), CommGraph.path(4))
    with pytest.raises(ValueError):
        IntegratorConfig(method="midpoint")
    with pytest.raises(ValueError):
        IntegratorConfig(step_s=-1)
    with pytest.raises(ValueError):
        integrate(p, reference_c1_gains(), CommGraph.path(3), Scenario((Segment(1e-5, 1.0),)),
                  x0=np.zeros(5))


@pytest.mark.parametrize("how", ["env", "missing"])
def test_fallback_backend_selected_at_import(how):
    import os
    import subprocess
    import sys

    code = ("import sys\n"
            + ("sys.modules['adaptive_dc.simkernel._ckernel'] = None\n" if how == "missing" else "")
            + "import adaptive_dc.simkernel as k\n"
            "print(k.BACKEND, k.available_backends())\n")
    env = dict(os.environ, ADAPTIVE_DC_PURE_PYTHON="1" if how == "env" else "0")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "python ['python']"
