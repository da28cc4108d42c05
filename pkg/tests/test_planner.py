import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gogsim.geometry import Line2D, Pose
from gogsim.gripper import GripperParams
from gogsim.planner import (
    PlanConfig,
    PlanningError,
    Trajectory,
    Waypoint,
    execute,
    facing_edge,
    plan_drag,
    plan_flatten,
    plan_fold,
    plan_lift,
    stage_order_ok,
)

P = GripperParams()
SQUARE = np.array([[-0.15, -0.15], [0.15, -0.15], [0.15, 0.15], [-0.15, 0.15]])


def fold_plan(**kw):
    return plan_fold((SQUARE[3], SQUARE[2]), Line2D((0.0, 0.0), (0.0, 1.0)), **kw)


def test_fold_plan_shape():
    traj = fold_plan()
    assert stage_order_ok(traj)
    tags = [w.tag for w in traj.waypoints]
    assert tags[0] == "init" and tags[-1] == "release" and "fold_arc" in tags
    arc = [w for w in traj.waypoints if w.tag == "fold_arc"]
    # lands on the mirror of the grasp centre, face down
    assert arc[-1].pose.z == 0.0
    assert arc[-1].pose.y == pytest.approx(-(0.15 - PlanConfig().grasp_inset))
    assert arc[-1].pose.roll == pytest.approx(math.pi)
    assert max(w.pose.z for w in arc) == pytest.approx(traj.meta["apex"], rel=0.02)
    assert traj.max_speed() <= P.linear_speed + 1e-9
    assert traj.warnings == []


def test_fold_plan_clamps_wide_grasps_with_a_warning():
    traj = plan_fold(((-0.35, 0.2), (0.35, 0.2)), Line2D((0.0, 0.0), (0.0, 1.0)))
    assert max(w.width for w in traj.waypoints) == P.width_max
    assert traj.warnings and "clamped" in traj.warnings[0]


@pytest.mark.parametrize("corners,line", [
    (((0.0, 0.1), (0.0, 0.1)), Line2D((0, 0), (0, 1))),
    (((-0.1, 0.1), (0.1, -0.1)), Line2D((0, 0), (0, 1))),
    (((-0.1, 0.0), (0.1, 0.0)), Line2D((0, 0), (0, 1))),
    (((-0.1, 0.9), (0.1, 0.9)), Line2D((0, 0), (0, 1))),
])
def test_fold_plan_rejects_bad_geometry(corners, line):
    with pytest.raises(PlanningError):
        plan_fold(corners, line)


def test_fold_line_normal_is_oriented_towards_the_corners():
    a = fold_plan()
    b = plan_fold((SQUARE[3], SQUARE[2]), Line2D((0.0, 0.0), (0.0, -1.0)))
    assert a.to_text() == b.to_text()


def test_other_plans_are_staged_and_bounded():
    for traj in (plan_drag((0.15, 0.0), (1.0, 0.0), 0.3), plan_lift((SQUARE[3], SQUARE[2]), 0.3, 1.0),
                 plan_flatten((0.15, 0.0), (1.0, 0.0), 0.1)):
        assert stage_order_ok(traj)
        assert traj.max_speed() <= P.linear_speed + 1e-9
        assert all(w.width <= P.width_max for w in traj.waypoints)
    lift = plan_lift((SQUARE[3], SQUARE[2]), 0.3, 1.0)
    assert lift.meta["hold_end"] - lift.meta["hold_start"] == pytest.approx(1.0)
    assert max(w.pose.z for w in lift.waypoints if w.tag != "release") == pytest.approx(0.3)
    wide = plan_lift(((-0.35, 0.0), (0.35, 0.0)), 0.3, 0.0)
    assert max(w.width for w in wide.waypoints) == 0.5
    with pytest.raises(PlanningError):
        plan_drag((0.0, 0.0), (1.0, 0.0), -1.0)
    with pytest.raises(PlanningError):
        plan_drag((0.0, 0.0), (1.0, 0.0), 2.0)
    with pytest.raises(PlanningError):
        plan_lift((SQUARE[3], SQUARE[2]), 0.0, 1.0)


def test_flatten_drops_to_low_friction_before_sliding():
    traj = plan_flatten((0.15, 0.0), (1.0, 0.0), 0.1)
    slide = [w for w in traj.waypoints if w.tag == "slide"]
    grasp = [w for w in traj.waypoints if w.tag == "grasp"]
    assert P.k_transmission * grasp[-1].torque_left >= P.f_switch
    assert 0 < P.k_transmission * slide[0].torque_left < P.f_switch


def test_trajectory_text_roundtrip_is_exact():
    traj = fold_plan()
    again = Trajectory.from_text(traj.to_text())
    assert again.waypoints == traj.waypoints
    with pytest.raises(PlanningError):
        Trajectory.from_text("# nothing\n")
    with pytest.raises(PlanningError):
        Trajectory.from_text("0 0 0 0 0 0 0 0 0 0\n")
    with pytest.raises(PlanningError):
        Trajectory.from_text("0 0 0 0 0 0 0 x 0 0 init\n")


def _wp(t, tag="init", width=None, tl=0.0):
    return Waypoint(t, Pose(), P.width_min if width is None else width, tl, 0.0, tag)


@pytest.mark.parametrize("wps", [
    [],
    [_wp(0.0, width=0.1)],
    [_wp(0.0), _wp(0.0)],
    [_wp(0.0), _wp(1.0, tag="dance")],
    [_wp(0.0), _wp(1.0, tl=-1.0)],
])
def test_trajectory_validation(wps):
    with pytest.raises(PlanningError):
        Trajectory(wps).validate()


def test_stage_order_detects_regression():
    assert not stage_order_ok(Trajectory([_wp(0.0), _wp(1.0, "release"), _wp(2.0, "grasp")]))


@given(st.floats(0.0, 3.0))
@settings(max_examples=40)
def test_sample_interpolates_within_bounds(t):
    traj = fold_plan()
    pose, width, k = traj.sample(t)
    assert P.width_min <= width <= P.width_max
    assert 0 <= k < len(traj)
    assert pose.z >= -1e-12


@given(st.floats(-math.pi, math.pi))
def test_facing_edge_normal_is_outward_and_closest(theta):
    wanted = (math.cos(theta), math.sin(theta))
    normal, a, b = facing_edge(SQUARE, wanted)
    normals = np.array([[0, -1], [1, 0], [0, 1], [-1, 0]], float)
    assert float(normal @ wanted) == pytest.approx(max(normals @ wanted))
    mid = 0.5 * (a + b)
    assert float(mid @ normal) == pytest.approx(0.15)


def test_drag_execution_logs_grasp_and_release(small_cloth):
    traj = plan_drag((0.1, 0.0), (1.0, 0.0), 0.05)
    rep = execute(traj, small_cloth, task="drag", keep_snapshots=False)
    assert not rep.failed
    assert rep.events_of("grasp_ok")
    assert {e.finger for e in rep.events_of("release")} == {"left", "right"}
    assert rep.trajectory is traj
    assert rep.frames[-1].t == pytest.approx(traj.waypoints[-1].t)
    shift = rep.final_cloth.positions[:, 0].mean() - small_cloth.positions[:, 0].mean()
    assert 0.03 < shift < 0.06


def test_grasp_miss_is_reported(small_cloth):
    traj = plan_drag((0.4, 0.0), (1.0, 0.0), 0.0)
    rep = execute(traj, small_cloth, task="drag", keep_snapshots=False)
    assert rep.grasp_failed and not rep.events_of("grasp_ok")
    assert np.allclose(rep.final_cloth.positions, small_cloth.positions, atol=1e-6)


def test_single_fold_roughly_halves_the_silhouette(settled_cloth):
    from gogsim.planner import FoldSpec, auto_fold

    (rep,) = auto_fold(settled_cloth, FoldSpec(n_folds=1))
    ratio = rep.masks["post"].count / rep.masks["pre"].count
    assert 0.48 <= ratio <= 0.60
