import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gogsim import cloth as clothsim
from gogsim.cloth import ClothError, ClothSpec, SimulationDiverged


def total(c):
    return clothsim.kinetic_energy(c) + clothsim.elastic_energy(c) + clothsim.potential_energy(c)


def test_build_is_at_rest_and_centred():
    spec = ClothSpec()
    c = clothsim.build_cloth(spec, origin=(0.1, -0.2), yaw=0.3)
    assert c.n == spec.nx * spec.ny
    assert clothsim.elastic_energy(c) == pytest.approx(0.0, abs=1e-20)
    assert c.total_mass == pytest.approx(spec.width_m * spec.height_m * spec.mass_per_area)
    assert c.positions[:, :2].mean(axis=0) == pytest.approx([0.1, -0.2])
    assert c.patch_half == pytest.approx(0.5 * spec.width_m / (spec.nx - 1))


@pytest.mark.parametrize("field,value", [("nx", 1), ("width_m", 0.0), ("mass_per_area", -1.0),
                                         ("air_drag", -0.1), ("damping", float("nan"))])
def test_spec_validation(field, value):
    spec = ClothSpec(**{field: value})
    with pytest.raises(ClothError):
        clothsim.build_cloth(spec)


def test_state_shape_checks():
    c = clothsim.build_cloth(ClothSpec(nx=3, ny=3))
    with pytest.raises(ClothError):
        c.with_positions(np.zeros((8, 3)))
    with pytest.raises(ClothError):
        clothsim.step(c, dt=0.0)
    with pytest.raises(ClothError):
        clothsim.step(c, dt=0.1)


@pytest.mark.parametrize("height,t_end", [(1.0, 0.4), (2.0, 0.5)])
def test_free_fall_matches_closed_form(height, t_end):
    p = clothsim.single_particle(0.1, (0.0, 0.0, height))
    dt = 1e-3
    for _ in range(int(round(t_end / dt))):
        p = clothsim.step(p, dt)
    drop = height - p.positions[0, 2]
    assert drop == pytest.approx(0.5 * clothsim.GRAVITY * t_end**2, rel=0.02)
    assert p.velocities[0, 2] == pytest.approx(-clothsim.GRAVITY * t_end, rel=0.02)


@given(st.floats(0.0, 0.5), st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
@settings(max_examples=30)
def test_particle_never_sinks_into_table(z0, vx, vz):
    p = clothsim.single_particle(0.05, (0.0, 0.0, z0)).with_positions([[0.0, 0.0, z0]], [[vx, 0.0, vz]])
    for _ in range(300):
        p = clothsim.step(p, 1e-3)
        assert p.positions[0, 2] >= 0.0


def test_sliding_particle_stops_at_coulomb_distance():
    mu, v0 = 0.4, 0.5
    p = clothsim.single_particle(0.05, (0, 0, 0), table_mu=mu).with_positions([[0, 0, 0]], [[v0, 0, 0]])
    for _ in range(400):
        p = clothsim.step(p, 1e-3)
    assert p.velocities[0, 0] == 0.0
    assert p.positions[0, 0] == pytest.approx(v0 * v0 / (2 * mu * clothsim.GRAVITY), rel=0.05)


def test_settled_cloth_energy_never_increases(settled_cloth):
    c = settled_cloth
    e = [total(c)]
    for _ in range(500):
        c = clothsim.step(c)
        e.append(total(c))
    assert np.max(np.diff(e)) <= 1e-6


def test_falling_cloth_energy_is_dissipated():
    c = clothsim.build_cloth(ClothSpec(nx=8, ny=8, width_m=0.2, height_m=0.2))
    c = c.with_positions(c.positions + [0, 0, 0.05])
    e0 = total(c)
    for _ in range(600):
        c = clothsim.step(c)
    assert total(c) < e0
    assert c.positions[:, 2].min() >= 0.0


def test_stepping_is_bitwise_deterministic():
    def run():
        c = clothsim.add_ridge(clothsim.build_cloth(ClothSpec(nx=10, ny=10)), 0.02, 0.06)
        for _ in range(200):
            c = clothsim.step(c)
        return c.positions.tobytes()

    assert run() == run()


def test_divergence_is_reported():
    spec = ClothSpec(nx=4, ny=4, stiffness_structural=1e12, stiffness_shear=1e12, stiffness_bend=1e12)
    c = clothsim.build_cloth(spec)
    c = c.with_positions(c.positions + np.random.default_rng(0).normal(0, 0.01, c.positions.shape))
    with pytest.raises(SimulationDiverged) as err, np.errstate(all="ignore"):
        for _ in range(2000):
            c = clothsim.step(c, 5e-3)
    assert err.value.time > 0


def test_settle_reports_convergence(small_cloth):
    c, done = clothsim.settle(small_cloth, 0.5, 1e-7)
    assert done
    assert clothsim.kinetic_energy(c) < 1e-7
    with pytest.raises(ClothError):
        clothsim.settle(small_cloth, 0.1, 0.0)


def _axis_gaps(c, axis):
    g = c.positions.reshape(c.ny, c.nx, 3)
    if axis == 1:
        g = g.transpose(1, 0, 2)
    return np.linalg.norm(np.diff(g, axis=1), axis=2)


@pytest.mark.parametrize("axis", [0, 1])
@pytest.mark.parametrize("center", [0.5, 0.3, [0.25, 0.5, 0.75]])
def test_ridge_keeps_grid_spacing(axis, center):
    c = clothsim.build_cloth(ClothSpec(), yaw=0.4)
    r = clothsim.add_ridge(c, 0.02, 0.06, axis, center)
    spacing = 0.3 / 15
    assert np.allclose(_axis_gaps(r, axis), spacing, atol=1e-9)
    # lines across the ridge axis stay straight and level
    assert np.allclose(_axis_gaps(r, 1 - axis), spacing, atol=1e-12)
    n_peaks = len(np.atleast_1d(center))
    z = r.positions[:, 2] - c.positions[:, 2]
    # the peak may fall between grid lines: at least 3/4 of the amplitude is sampled
    assert 0.015 - 1e-12 <= z.max() <= 0.02 + 1e-12
    assert (z > 0.01).sum() >= n_peaks * c.nx


def test_ridge_rejects_bad_arguments():
    c = clothsim.build_cloth(ClothSpec(nx=4, ny=4))
    for kwargs in ({"amplitude": -1, "width": 0.1}, {"amplitude": 0.01, "width": 0.0},
                   {"amplitude": 0.01, "width": 0.1, "axis": 2}, {"amplitude": 0.01, "width": 0.1, "center": 1.5}):
        with pytest.raises(ClothError):
            clothsim.add_ridge(c, **kwargs)


def test_ridge_stays_up_under_static_friction():
    c = clothsim.add_ridge(clothsim.build_cloth(ClothSpec()), 0.02, 0.06)
    c, _ = clothsim.settle(c, 1.5, 1e-7)
    peak = c.positions[:, 2].max()
    assert peak > 0.01
    for _ in range(500):
        c = clothsim.step(c)
    assert c.positions[:, 2].max() == pytest.approx(peak, abs=1e-4)


def test_dump_positions_csv(tmp_path):
    c = clothsim.build_cloth(ClothSpec(nx=2, ny=2))
    path = tmp_path / "dump.csv"
    clothsim.dump_positions_csv([(0.0, c), (0.001, clothsim.step(c))], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,particle,x,y,z"
    assert len(lines) == 1 + 2 * 4
    assert math.isclose(float(lines[1].split(",")[2]), c.positions[0, 0])


def test_settled_cloth_stays_put_for_a_second(settled_cloth):
    c = settled_cloth
    for _ in range(1000):
        c = clothsim.step(c)
    assert np.abs(c.positions - settled_cloth.positions).max() < 1e-3
