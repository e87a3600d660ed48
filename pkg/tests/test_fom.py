import numpy as np
import pytest

import oracles
from hemorom import windkessel as wk
from hemorom.config import Config
from hemorom.errors import BundleError
from hemorom.fom import (
    BoundaryData,
    ChannelFlowSolver,
    FluidParams,
    FomState,
    SnapshotDatabase,
    TimeGrid,
    run_fom,
)
from hemorom.mesh import StructuredMesh
from hemorom.windkessel import CASE1_PARAMS


def _solver(nx=8, ny=4, nu=0.004, u0=0.05, length=0.3, radius=0.02):
    mesh = StructuredMesh(nx, ny, length, radius)
    return ChannelFlowSolver(mesh, FluidParams(nu), [CASE1_PARAMS], u0, lin_tol=1e-13)


def _state(solver, u, p, g_u=0.0, p_out=0.0):
    return FomState(u, p, (wk.WindkesselState(),), 0.0, BoundaryData(g_u, (p_out,)))


def test_momentum_predict_zero_data():
    s = _solver()
    n = s.mesh.n_cells
    st = _state(s, np.zeros((n, 2)), np.full(n, 2.0), p_out=2.0)
    u = s.momentum_predict(st, 1e-3, BoundaryData(0.0, (2.0,)))
    assert np.max(np.abs(u)) < 1e-14


def test_momentum_predict_inviscid_without_flux(rng):
    s = _solver()
    m = s.mesh
    dt = 1e-2
    u_old = np.tile([1.0, 0.0], (m.n_cells, 1))
    p = rng.normal(size=m.n_cells)
    st = _state(s, u_old, p, g_u=1.0, p_out=0.3)
    zero = (np.zeros(m.n_faces), np.zeros(m.n_bfaces))
    u = s.momentum_predict(st, dt, BoundaryData(1.0, (0.3,)), flux=zero, nu=0.0)
    expected = u_old - dt * s.pressure_gradient(p, (0.3,))
    assert np.allclose(u, expected, rtol=0, atol=1e-12)


def test_momentum_predict_matches_dense_oracle(rng):
    s = _solver(nu=0.01)
    m = s.mesh
    grid = oracles.Grid(8, 4, 0.3, 0.02)
    dt, g_old, g_new = 1e-3, 0.02, 0.03
    u_old = 0.01 * rng.normal(size=(m.n_cells, 2))
    p = 0.01 * rng.normal(size=m.n_cells)
    st = _state(s, u_old, p, g_u=g_old, p_out=0.1)
    u = s.momentum_predict(st, dt, BoundaryData(g_new, (0.1,)))

    old_bc, new_bc = oracles.velocity_bc(g_old), oracles.velocity_bc(g_new)

    def op(v):
        conv = oracles.convection(grid, u_old, v, old_bc, new_bc)
        return v / dt + conv - 0.01 * oracles.laplacian(grid, v, new_bc)

    n2 = 2 * m.n_cells
    base = op(np.zeros((m.n_cells, 2))).ravel()
    A = np.empty((n2, n2))
    for k in range(n2):
        e = np.zeros(n2)
        e[k] = 1.0
        A[:, k] = op(e.reshape(-1, 2)).ravel() - base
    rhs = (u_old / dt - oracles.gradient(grid, p, oracles.pressure_bc([0.1]))).ravel() - base
    ref = np.linalg.solve(A, rhs).reshape(-1, 2)
    assert np.max(np.abs(u - ref)) <= 1e-9 * np.max(np.abs(ref))


def test_pressure_correct_random_field_is_divergence_free(rng):
    s = _solver()
    m = s.mesh
    u_star = rng.normal(size=(m.n_cells, 2))
    bc = BoundaryData(0.7, (0.2,))
    p, u = s.pressure_correct(u_star, 1e-3, bc)
    assert np.max(np.abs(s.divergence(u, bc.g_u))) <= 1e-8
    assert np.all(np.isfinite(p))


def test_pressure_correct_keeps_uniform_consistent_flow():
    s = _solver()
    n = s.mesh.n_cells
    u_star = np.tile([1.0, 0.0], (n, 1))
    p, u = s.pressure_correct(u_star, 1e-3, BoundaryData(1.0, (0.0,)))
    assert np.allclose(u, u_star, atol=1e-9)
    assert np.max(np.abs(p)) < 1e-9


def test_pressure_correct_idempotent(rng):
    s = _solver()
    bc = BoundaryData(0.4, (0.0,))
    _, u1 = s.pressure_correct(rng.normal(size=(s.mesh.n_cells, 2)), 1e-3, bc)
    p2, u2 = s.pressure_correct(u1, 1e-3, bc)
    assert np.allclose(u2, u1, rtol=0, atol=1e-8 * np.max(np.abs(u1)))
    assert np.max(np.abs(p2)) < 1e-8 * max(1.0, np.max(np.abs(u1)))


def test_zero_inlet_stays_zero():
    s = _solver(u0=0.0)
    st = s.initial_state()
    for _ in range(10):
        st = s.step(st, 1e-3)
    assert not np.any(st.u) and not np.any(st.p)


def test_mass_balance_each_step():
    s = _solver()
    st = s.initial_state()
    for _ in range(30):
        st = s.step(st, 1e-3)
        q_in = s.inlet_flow(st.bc.g_u)
        q_out = s.outlet_flow(st.u).sum()
        assert abs(q_in + q_out) <= 1e-8 * (abs(q_in) + 1e-12)


def test_time_refinement_reduces_change():
    def final(dt):
        cfg = Config({"mesh.nx": 8, "mesh.ny": 4, "time.T": 0.1, "time.dt": dt, "time.stride": 1})
        return run_fom(cfg).u[-1]

    # asymptotic range; coarser steps are pre-asymptotic on this short window
    u = [final(dt) for dt in (1e-3, 5e-4, 2.5e-4, 1.25e-4)]
    changes = [np.max(np.abs(b - a)) for a, b in zip(u[:-1], u[1:])]
    assert changes[0] > changes[1] > changes[2]
    assert 1.5 < changes[1] / changes[2] < 2.5


def test_symmetric_tiny_mesh_steps():
    cfg = Config({"mesh.nx": 6, "mesh.ny": 2, "time.T": 0.05, "time.dt": 1e-2, "time.stride": 1})
    db = run_fom(cfg)
    # y-velocity vanishes by symmetry up to the Krylov tolerance
    assert np.max(np.abs(db.u[..., 1])) < 1e-7 * np.max(np.abs(db.u[..., 0]))


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0.3)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0.1, stride=0)
    with pytest.raises(ValueError):
        FluidParams(0.0)


def test_stride_equal_to_steps_stores_final_time_only():
    cfg = Config({"mesh.nx": 6, "mesh.ny": 2, "time.T": 0.05, "time.dt": 1e-2, "time.stride": 5})
    db = run_fom(cfg)
    assert db.times.tolist() == [pytest.approx(0.05)]


def test_run_fom_deterministic_and_round_trip(tmp_path, small_db):
    from conftest import SMALL_FOM

    a, b = tmp_path / "a", tmp_path / "b"
    run_fom(Config(SMALL_FOM), out_dir=a)
    run_fom(Config(SMALL_FOM), out_dir=b)
    for f in sorted(a.iterdir()):
        if f.name == "timings.txt":
            continue
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name
    db = SnapshotDatabase.load(a)
    assert np.array_equal(db.u, small_db.u) and np.array_equal(db.p, small_db.p)
    assert np.array_equal(db.g_p, small_db.g_p) and np.array_equal(db.times, small_db.times)
    assert db.initial["t"] == 0.0


def test_load_missing_database(tmp_path):
    with pytest.raises(BundleError):
        SnapshotDatabase.load(tmp_path / "nope")


def test_case1_snapshot_times(case1_db):
    assert len(case1_db.times) == 50
    assert np.all(np.diff(case1_db.times) > 0)
    assert case1_db.times[0] == pytest.approx(0.02) and case1_db.times[-1] == pytest.approx(1.0)


def test_case1_outlet_trace_matches_exact_windkessel(case1_db):
    area = case1_db.mesh.inlet_area
    ref = wk.exact_case1_pressure(case1_db.times, wk.CASE1_U0, CASE1_PARAMS, area)
    err = np.max(np.abs(case1_db.g_p[:, 0] - ref))
    assert err <= 0.05 * np.max(np.abs(ref))


@pytest.mark.xfail(strict=True, reason="the printed closed form is not a solution of the "
                   "Windkessel model it accompanies")
def test_case1_outlet_trace_matches_published_formula(case1_db):
    area = case1_db.mesh.inlet_area
    ref = wk.analytic_case1_pressure(case1_db.times, wk.CASE1_U0, wk.CASE1_RADIUS, CASE1_PARAMS, area=area)
    err = np.max(np.abs(case1_db.g_p[:, 0] - ref))
    assert err <= 0.05 * np.max(np.abs(ref))
