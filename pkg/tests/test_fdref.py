import math

import numpy as np
import pytest

from qpme.analytic import BarenblattSpec, barenblatt, free_boundary_radius
from qpme.fdref import (
    EmptySupportError,
    FdGrid,
    StabilityError,
    advance_to,
    barenblatt_validation,
    darcy_front_speed,
    darcy_velocity_probe,
    dump_snapshot_csv,
    fd_step,
    free_boundary,
    stable_dt,
    waiting_snapshot_times,
    waiting_time_experiment,
)


def test_zero_field_is_a_fixed_point():
    grid = FdGrid.from_ic(np.zeros(51), d=1, a=1.0, dt=1e-4)
    fd_step(grid)
    assert np.all(grid.field == 0.0)
    assert grid.time == pytest.approx(1e-4)


def test_single_spike_spreads_by_hand_arithmetic():
    # one interior node at v: the update adds (dt/2h^2) v^2 to neighbors
    # and subtracts 2 (dt/2h^2) v^2 at the spike
    n, v = 21, 0.5
    ic = np.zeros(n)
    ic[10] = v
    h = 2.0 / (n - 1)
    dt = 0.5 * h**2 / (4 * v)
    grid = FdGrid.from_ic(ic, d=1, a=1.0, dt=dt)
    fd_step(grid)
    k = 0.5 * dt / h**2
    assert grid.field[10] == pytest.approx(v - 2 * k * v**2, rel=1e-14)
    assert grid.field[9] == pytest.approx(k * v**2, rel=1e-14)
    assert grid.field[11] == pytest.approx(k * v**2, rel=1e-14)
    assert np.all(grid.field[:9] == 0.0)


def test_step_refuses_unstable_dt_with_suggestion():
    ic = np.zeros(51)
    ic[25] = 1.0
    h = 2.0 / 50
    grid = FdGrid.from_ic(ic, d=1, a=1.0, dt=10 * h**2)
    with pytest.raises(StabilityError) as exc:
        fd_step(grid)
    assert exc.value.suggested <= h**2 / 4.0
    grid.dt = exc.value.suggested
    fd_step(grid)  # the suggested dt is accepted


def test_stable_dt_formula():
    ic = np.zeros((31, 31))
    ic[15, 15] = 2.0
    grid = FdGrid.from_ic(ic, d=2, a=1.0, dt=1.0)
    h = 2.0 / 30
    assert stable_dt(grid, safety=1.0) == pytest.approx(
        h**2 / (4 * 2 * 2.0 + 1e-12))


def test_mass_conservation_away_from_walls():
    spec = BarenblattSpec(d=1, time_shift=1.0)
    a, n = 4.0, 401
    ax = np.linspace(-a, a, n)
    ic = barenblatt(spec, 0.0, ax[None, :])
    grid = FdGrid.from_ic(ic, d=1, a=a, dt=1.0)
    grid.dt = stable_dt(grid)
    m0 = grid.mass()
    advance_to(grid, 0.3)
    assert grid.mass() == pytest.approx(m0, abs=1e-10)


def test_nonnegativity_preserved_under_fuzzed_initial_data():
    rng = np.random.default_rng(0)
    for _ in range(5):
        ic = rng.random(81)
        grid = FdGrid.from_ic(ic, d=1, a=1.0, dt=1.0)
        grid.dt = stable_dt(grid)
        for _ in range(50):
            fd_step(grid)
        assert np.all(grid.field >= 0.0)


def test_walls_pinned_in_two_dimensions():
    rng = np.random.default_rng(1)
    grid = FdGrid.from_ic(rng.random((41, 41)), d=2, a=1.0, dt=1.0)
    grid.dt = stable_dt(grid)
    for _ in range(10):
        fd_step(grid)
    assert np.all(grid.field[0, :] == 0.0) and np.all(grid.field[-1, :] == 0.0)
    assert np.all(grid.field[:, 0] == 0.0) and np.all(grid.field[:, -1] == 0.0)


def test_advance_to_lands_exactly():
    grid = FdGrid.from_ic(np.zeros(11), d=1, a=1.0, dt=0.03)
    advance_to(grid, 0.1)
    assert grid.time == pytest.approx(0.1, abs=1e-12)
    assert grid.dt == 0.03  # the configured step is restored


def test_free_boundary_and_empty_support():
    ic = np.zeros(41)
    nodes = np.linspace(-1, 1, 41)
    ic[np.abs(nodes) <= 0.5] = 1.0
    grid = FdGrid.from_ic(ic, d=1, a=1.0, dt=1e-4)
    fb = free_boundary(grid)
    assert fb.radius == pytest.approx(0.5)
    grid.field[:] = 0.0
    with pytest.raises(EmptySupportError):
        free_boundary(grid)
    with pytest.raises(EmptySupportError):
        darcy_velocity_probe(grid)
    with pytest.raises(EmptySupportError):
        darcy_front_speed(grid)


def test_darcy_probe_on_linear_pressure_ramp():
    # u = sqrt(2 s (R - x)) gives p = u^2/2 = s (R - x), so the backward
    # difference of p at the edge recovers the slope s
    nodes = np.linspace(-1, 1, 201)
    s, R = 0.7, 0.6
    ic = np.sqrt(2 * s * np.clip(R - nodes, 0.0, None))
    ic[nodes < 0] = ic[np.abs(nodes).argmin()]
    grid = FdGrid.from_ic(ic, d=1, a=1.0, dt=1e-5)
    probe = darcy_velocity_probe(grid)
    assert probe == pytest.approx(s, rel=0.05)


def test_darcy_front_speed_matches_barenblatt():
    spec = BarenblattSpec(d=1, time_shift=1.0)
    _, grid = barenblatt_validation(h=0.005, t_end=0.5, a=4.0, d=1)
    speed = darcy_front_speed(grid)
    r = free_boundary_radius(spec, 0.5)
    exact = r / (3.0 * 1.5)  # dr/dt = r / ((d+2) s)
    assert speed == pytest.approx(exact, rel=0.1)


def test_barenblatt_error_halves_with_the_mesh():
    # end time chosen so the exact front x = 2.8 sits on a node for all
    # meshes, removing the node-alignment phase from the front error
    t_end = (2.8 / math.sqrt(6.0)) ** 3 - 1.0
    errs = [barenblatt_validation(h=h, t_end=t_end)[0]
            for h in (0.04, 0.02, 0.01)]
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert 1.6 < r1 < 2.4
    assert 1.6 < r2 < 2.4
    assert errs[-1] < 5e-3


def test_waiting_time_front_stays_then_moves():
    res = waiting_time_experiment(t_end=1.0)
    t = res.times
    r = res.radii
    assert res.initial_radius == pytest.approx(math.pi / 2, abs=0.03)
    early = r[t <= 0.1 + 1e-9] - res.initial_radius
    assert np.max(early) <= 3 * 0.04 + 1e-12
    assert r[-1] - res.initial_radius > 0.3
    assert set(res.snapshots) == set(waiting_snapshot_times())


def test_waiting_time_darcy_probe_small_at_start():
    res = waiting_time_experiment(t_end=0.02)
    x, u = res.snapshots[0.0]
    n = x.shape[0]
    grid = FdGrid.from_ic(np.tile(u, (n, 1)).T, d=2, a=4.0, dt=1e-4)
    probe = darcy_velocity_probe(grid, epsilon=1e-3)
    assert abs(probe) < 0.05


def test_snapshot_times_cover_both_phases():
    ts = waiting_snapshot_times()
    assert ts[0] == 0.0 and ts[-1] == 1.0
    assert 0.1 in ts and 0.2 in ts
    assert all(b > a for a, b in zip(ts, ts[1:]))


def test_snapshot_csv_format(tmp_path):
    x = np.linspace(-1, 1, 5)
    u = x**2
    path = tmp_path / "snap.csv"
    dump_snapshot_csv(path, x, u)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,u"
    assert len(lines) == 6
    xs, us = lines[3].split(",")
    assert float(xs) == x[2] and float(us) == u[2]
