"""Staged trajectories for fold, drag, lift and flatten, and their execution.

A trajectory is a list of timed waypoints. Tool pose and opening width are
linearly interpolated between waypoints; finger torques are held from the
waypoint where they are set until the next one. ``execute`` drives the
gripper along the plan at the physics time step and logs an EpisodeReport.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import cloth as clothsim
from .cloth import ClothState, SimulationDiverged
from .episode import EpisodeReport, Event, FingerFrame, Frame
from .geometry import Line2D, Pose, unit2
from .gripper import (
    FINGERS,
    PIN_GROUP,
    GraspConstraintSet,
    GripperParams,
    GripperState,
    attempt_sliding_grasp,
    clamp_width,
    command_torque,
    drop_grasp,
    emit_constraints,
    new_gripper,
    release,
    sync_sliding_offsets,
    torque_for_force,
)

log = logging.getLogger(__name__)

TAGS = ("init", "pre_grasp", "grasp", "move", "fold_arc", "hold", "release", "slide")
_TAG_RANK = {"init": 0, "pre_grasp": 1, "grasp": 2, "move": 3, "fold_arc": 3, "hold": 3, "slide": 3, "release": 4}


class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class PlanConfig:
    hover_height: float = 0.03
    descend_speed: float = 0.05
    grasp_dwell: float = 0.2
    arc_apex_factor: float = 0.6
    arc_segments: int = 24
    fold_speed: float = 0.2
    fold_flip: bool = True
    move_speed: float = 0.1
    lift_speed: float = 0.2
    retract_height: float = 0.05
    grasp_inset: float = 0.01
    drag_lift: float = 0.02
    workspace_center: tuple[float, float] = (0.0, 0.0)
    workspace_radius: float = 0.8
    # grip forces as multiples of the friction switch force
    slide_grip_ratio: float = 0.5
    firm_grip_ratio: float = 2.0
    flatten_grip_ratio: float = 0.2
    settle_time: float = 0.0


@dataclass(frozen=True)
class Waypoint:
    t: float
    pose: Pose
    width: float
    torque_left: float
    torque_right: float
    tag: str

    def torque(self, finger: str) -> float:
        return self.torque_left if finger == "left" else self.torque_right


@dataclass
class Trajectory:
    waypoints: list[Waypoint]
    warnings: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def duration(self) -> float:
        return self.waypoints[-1].t - self.waypoints[0].t

    def validate(self, params: GripperParams | None = None) -> None:
        params = params or GripperParams()
        wps = self.waypoints
        if not wps:
            raise PlanningError("empty trajectory")
        if wps[0].width != params.width_min:
            raise PlanningError("trajectory must start at minimum width")
        for a, b in zip(wps, wps[1:]):
            if not b.t > a.t:
                raise PlanningError(f"waypoint times must increase strictly ({a.t} -> {b.t})")
        for w in wps:
            if w.tag not in TAGS:
                raise PlanningError(f"unknown waypoint tag {w.tag!r}")
            if w.torque_left < 0 or w.torque_right < 0:
                raise PlanningError("negative torque command")

    def max_speed(self) -> float:
        best = 0.0
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            d = float(np.linalg.norm(b.pose.position - a.pose.position))
            best = max(best, d / (b.t - a.t))
        return best

    def sample(self, t: float) -> tuple[Pose, float, int]:
        """Interpolated pose and width at ``t``; also the index of the active waypoint."""
        wps = self.waypoints
        if t <= wps[0].t:
            return wps[0].pose, wps[0].width, 0
        if t >= wps[-1].t:
            return wps[-1].pose, wps[-1].width, len(wps) - 1
        times = [w.t for w in wps]
        k = int(np.searchsorted(times, t, side="right")) - 1
        a, b = wps[k], wps[k + 1]
        s = (t - a.t) / (b.t - a.t)
        return a.pose.lerp(b.pose, s), a.width + (b.width - a.width) * s, k

    def to_text(self) -> str:
        lines = ["# gogsim trajectory v1", "# t x y z roll pitch yaw width torque_left torque_right tag"]
        for w in self.waypoints:
            nums = (w.t, *w.pose.as_tuple(), w.width, w.torque_left, w.torque_right)
            lines.append(" ".join(repr(float(v)) for v in nums) + " " + w.tag)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Trajectory":
        wps = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 11:
                raise PlanningError(f"line {lineno}: expected 11 fields, got {len(parts)}")
            try:
                nums = [float(v) for v in parts[:10]]
            except ValueError as exc:
                raise PlanningError(f"line {lineno}: {exc}") from None
            wps.append(Waypoint(nums[0], Pose.from_seq(nums[1:7]), nums[7], nums[8], nums[9], parts[10]))
        traj = cls(wps)
        if not wps:
            raise PlanningError("trajectory file has no waypoints")
        return traj


class _Builder:
    """Accumulates waypoints, timing each leg from distance and a speed."""

    def __init__(self, params: GripperParams, cfg: PlanConfig):
        self.params = params
        self.cfg = cfg
        self.wps: list[Waypoint] = []

    @property
    def last(self) -> Waypoint:
        return self.wps[-1]

    def start(self, pose: Pose, tag: str = "init"):
        self.wps.append(Waypoint(0.0, pose, self.params.width_min, 0.0, 0.0, tag))

    def go(self, tag, pose=None, width=None, torque=None, speed=None, duration=None, min_duration=0.05):
        last = self.last
        pose = pose or last.pose
        width = last.width if width is None else width
        tl, tr = (last.torque_left, last.torque_right) if torque is None else torque
        dt = min_duration
        dist = float(np.linalg.norm(pose.position - last.pose.position))
        speed = speed or self.params.linear_speed
        dt = max(dt, dist / min(speed, self.params.linear_speed))
        dt = max(dt, abs(width - last.width) / self.params.width_speed)
        if duration is not None:
            dt = max(dt, duration)
        self.wps.append(Waypoint(last.t + dt, pose, width, tl, tr, tag))

    def build(self, warnings=()) -> Trajectory:
        traj = Trajectory(self.wps, list(warnings))
        traj.validate(self.params)
        return traj


def _torques(params: GripperParams, ratio: float, fingers=FINGERS) -> tuple[float, float]:
    t = torque_for_force(ratio * params.f_switch, params)
    return (t if "left" in fingers else 0.0, t if "right" in fingers else 0.0)


def _check_workspace(points, cfg: PlanConfig) -> None:
    c = np.asarray(cfg.workspace_center)
    for p in points:
        r = float(np.hypot(p[0] - c[0], p[1] - c[1]))
        if r > cfg.workspace_radius:
            raise PlanningError(f"target ({p[0]:.3f}, {p[1]:.3f}) outside workspace radius {cfg.workspace_radius} m")


def _grasp_sequence(b: _Builder, center: np.ndarray, yaw: float, width: float, fingers=FINGERS) -> None:
    """init -> width -> pre-grasp hover -> descend with a sliding grasp -> firm."""
    cfg, params = b.cfg, b.params
    hover = Pose(center[0], center[1], cfg.hover_height, 0.0, 0.0, yaw)
    b.start(hover)
    b.go("init", width=width)
    b.go("pre_grasp", duration=0.05)
    down = replace(hover, z=0.0)
    b.go("grasp", pose=down, torque=_torques(params, cfg.slide_grip_ratio, fingers), speed=cfg.descend_speed)
    b.go("grasp", torque=_torques(params, cfg.firm_grip_ratio, fingers), duration=cfg.grasp_dwell)
    b.go("grasp", duration=cfg.grasp_dwell)


def _release_sequence(b: _Builder) -> None:
    cfg = b.cfg
    b.go("release", torque=(0.0, 0.0), duration=cfg.grasp_dwell)
    up = replace(b.last.pose, z=b.last.pose.z + cfg.retract_height)
    b.go("release", pose=up, speed=cfg.descend_speed * 2)


def plan_fold(corners, fold_line: Line2D, params: GripperParams | None = None, cfg: PlanConfig | None = None) -> Trajectory:
    """Grasp two corners and carry them over ``fold_line`` onto their mirror images.

    The tool follows a half-ellipse in the vertical plane whose apex height is
    ``arc_apex_factor`` times the corner-to-target distance. With
    ``fold_flip`` the jaws also roll half a turn so the carried flap lands
    face down.
    """
    params = params or GripperParams()
    cfg = cfg or PlanConfig()
    p1, p2 = (np.asarray(c, dtype=float)[:2] for c in corners)
    if np.allclose(p1, p2):
        raise PlanningError("grasp corners coincide")
    s1, s2 = float(fold_line.signed_distance(p1)), float(fold_line.signed_distance(p2))
    tol = 1e-6
    if abs(s1) < tol and abs(s2) < tol:
        raise PlanningError("fold line passes through both grasp corners (zero-length fold)")
    if s1 * s2 < 0 or min(abs(s1), abs(s2)) < tol:
        raise PlanningError("fold line must leave both grasp corners strictly on one side")
    if s1 < 0:
        fold_line = Line2D(fold_line.point, (-fold_line.normal[0], -fold_line.normal[1]))
    d = np.asarray(fold_line.normal)

    x_axis = unit2(p2 - p1)
    if (-x_axis[1] * d[0] + x_axis[0] * d[1]) < 0:
        p1, p2 = p2, p1
        x_axis = -x_axis
    yaw = math.atan2(x_axis[1], x_axis[0])
    raw_width = float(np.hypot(*(p2 - p1)))
    width = clamp_width(raw_width, params)
    warnings = []
    if width != raw_width:
        msg = f"grasp width {raw_width:.3f} m clamped to {width:.3f} m"
        warnings.append(msg)
        log.warning(msg)

    center = 0.5 * (p1 + p2) - cfg.grasp_inset * d
    target = fold_line.reflect(center)
    _check_workspace([p1, p2, center, target, fold_line.reflect(p1), fold_line.reflect(p2)], cfg)
    reach = 0.5 * (abs(s1) + abs(s2)) * 2.0
    apex = cfg.arc_apex_factor * reach

    b = _Builder(params, cfg)
    _grasp_sequence(b, center, yaw, width)
    n = max(int(cfg.arc_segments), 2)
    for k in range(1, n + 1):
        th = math.pi * k / n
        s = 0.5 * (1.0 - math.cos(th))
        xy = center + s * (target - center)
        roll = th if cfg.fold_flip else 0.0
        if k == n:
            xy = target
        b.go("fold_arc", pose=Pose(xy[0], xy[1], apex * math.sin(th) if k < n else 0.0, roll, 0.0, yaw),
             speed=cfg.fold_speed, min_duration=0.01)
    _release_sequence(b)
    traj = b.build(warnings)
    traj.meta = {"apex": apex, "arc_start": center.tolist(), "arc_end": target.tolist(), "yaw": yaw}
    return traj


def plan_drag(edge_midpoint, direction, distance: float, params: GripperParams | None = None,
              cfg: PlanConfig | None = None) -> Trajectory:
    """Sliding grasp at minimum width on a leading edge, lift, translate, release."""
    params = params or GripperParams()
    cfg = cfg or PlanConfig()
    if not distance >= 0:
        raise PlanningError("drag distance must be non-negative")
    d = unit2(direction)
    yaw = math.atan2(-d[0], d[1])  # tool y along the drag direction
    center = np.asarray(edge_midpoint, dtype=float)[:2] - cfg.grasp_inset * d
    end = center + distance * d
    _check_workspace([center, end], cfg)
    b = _Builder(params, cfg)
    _grasp_sequence(b, center, yaw, params.width_min)
    if distance > 0:
        lifted = replace(b.last.pose, z=cfg.drag_lift)
        b.go("move", pose=lifted, speed=cfg.descend_speed)
        b.go("move", pose=replace(lifted, x=float(end[0]), y=float(end[1])), speed=cfg.move_speed)
        b.go("move", pose=replace(b.last.pose, z=0.0), speed=cfg.descend_speed)
    _release_sequence(b)
    traj = b.build()
    traj.meta = {"start": center.tolist(), "end": end.tolist(), "yaw": yaw}
    return traj


def plan_lift(corners, height: float, hold: float, params: GripperParams | None = None,
              cfg: PlanConfig | None = None, inward=None) -> Trajectory:
    """Dual sliding grasp at two corners, lift vertically, hold, release.

    ``inward`` points from the grasped edge into the cloth; the jaws are set
    in from the corners along it.
    """
    params = params or GripperParams()
    cfg = cfg or PlanConfig()
    if not height > 0 or not hold >= 0:
        raise PlanningError("lift needs height > 0 and hold >= 0")
    p1, p2 = (np.asarray(c, dtype=float)[:2] for c in corners)
    x_axis = unit2(p2 - p1)
    inward = unit2(inward) if inward is not None else np.array([x_axis[1], -x_axis[0]])
    # tool y points out of the cloth so the slide axis matches the other tasks
    if (-x_axis[1] * -inward[0] + x_axis[0] * -inward[1]) < 0:
        p1, p2 = p2, p1
        x_axis = -x_axis
    yaw = math.atan2(x_axis[1], x_axis[0])
    width = clamp_width(float(np.hypot(*(p2 - p1))), params)
    center = 0.5 * (p1 + p2) + cfg.grasp_inset * inward
    _check_workspace([p1, p2, center], cfg)
    b = _Builder(params, cfg)
    _grasp_sequence(b, center, yaw, width)
    b.go("move", pose=replace(b.last.pose, z=height), speed=cfg.lift_speed)
    if hold > 0:
        b.go("hold", duration=0.0, min_duration=1e-3)
        b.go("hold", duration=hold, min_duration=hold)
    _release_sequence(b)
    traj = b.build()
    lift_end = [w.t for w in traj.waypoints if w.tag == "move"][-1]
    traj.meta = {"hold_start": lift_end, "hold_end": lift_end + (hold if hold > 0 else 0.0), "height": height}
    return traj


def plan_flatten(grasp_point, slide_direction, slide_length: float, params: GripperParams | None = None,
                 cfg: PlanConfig | None = None) -> Trajectory:
    """Firm grasp, then drop to low friction and pull the cloth through the rollers."""
    params = params or GripperParams()
    cfg = cfg or PlanConfig()
    if not slide_length >= 0:
        raise PlanningError("slide length must be non-negative")
    d = unit2(slide_direction)
    yaw = math.atan2(-d[0], d[1])
    center = np.asarray(grasp_point, dtype=float)[:2] - cfg.grasp_inset * d
    end = center + slide_length * d
    _check_workspace([center, end], cfg)
    b = _Builder(params, cfg)
    _grasp_sequence(b, center, yaw, params.width_min)
    if slide_length > 0:
        b.go("slide", torque=_torques(params, cfg.flatten_grip_ratio), duration=cfg.grasp_dwell)
        b.go("slide", pose=replace(b.last.pose, x=float(end[0]), y=float(end[1])), speed=cfg.move_speed)
    _release_sequence(b)
    traj = b.build()
    traj.meta = {"start": center.tolist(), "end": end.tolist(), "yaw": yaw}
    return traj


def stage_order_ok(traj: Trajectory) -> bool:
    ranks = [_TAG_RANK[w.tag] for w in traj.waypoints]
    return all(a <= b for a, b in zip(ranks, ranks[1:]))


def execute(
    traj: Trajectory,
    cloth: ClothState,
    gripper: GripperState | None = None,
    *,
    task: str = "custom",
    dt: float = 1e-3,
    report_rate: float = 50.0,
    pins: GraspConstraintSet | None = None,
    keep_snapshots: bool = True,
) -> EpisodeReport:
    """Run a trajectory through the physics and log what happened."""
    gripper = gripper or new_gripper()
    params = gripper.params
    traj.validate(params)
    wps = traj.waypoints
    report = EpisodeReport(task=task, meta=dict(getattr(traj, "meta", {}) or {}))
    report.trajectory = traj
    report.meta["warnings"] = list(traj.warnings)
    for w in traj.warnings:
        report.events.append(Event(wps[0].t, "clamp_warning", "", (("message", w),)))

    t0 = wps[0].t
    n_steps = int(round((wps[-1].t - t0) / dt))
    frame_every = max(int(round(1.0 / (report_rate * dt))), 1)
    pose, width, _ = traj.sample(t0)
    g = replace(gripper, tool_pose=pose, width=clamp_width(width, params))
    next_wp = 1
    # time each finger last exceeded its low-friction cap; a new slip event is
    # logged only after a quiet period of one report frame
    last_slip = {f: -math.inf for f in FINGERS}
    quiet = frame_every * dt
    forces = {f: 0.0 for f in FINGERS}
    attempted: set[str] = set()  # fingers that already tried during the current grasp stage

    def record(t: float):
        snap = -1
        if keep_snapshots:
            report.snapshots.append(cloth.positions.copy())
            snap = len(report.snapshots) - 1
        fr = {}
        for f in FINGERS:
            fs = g.finger(f)
            fr[f] = FingerFrame(fs.torque_cmd, fs.grip_force, fs.mode.value, len(fs.grasped), forces[f])
        report.frames.append(Frame(t, g.tool_pose.as_tuple(), g.width, fr["left"], fr["right"], snap))

    def apply_waypoint(w: Waypoint, t: float):
        nonlocal g
        engaged = {f: g.finger(f).holding or g.finger(f).grip_force > 0 for f in FINGERS}
        for f in FINGERS:
            fs = g.finger(f)
            torque = w.torque(f)
            if torque != fs.torque_cmd:
                before = fs.mode
                g = command_torque(g, f, torque)
                after = g.finger(f).mode
                if after is not before:
                    report.events.append(Event(t, "mode", f, (("from", before.value), ("to", after.value),
                                                              ("grip_force", g.finger(f).grip_force))))
        if w.tag != "grasp":
            attempted.clear()
        else:
            for f in FINGERS:
                fs = g.finger(f)
                if fs.grip_force > 0 and not fs.holding and f not in attempted:
                    attempted.add(f)
                    g, ok = attempt_sliding_grasp(g, f, cloth)
                    report.events.append(Event(t, "grasp_ok" if ok else "grasp_fail", f,
                                               (("particles", len(g.finger(f).grasped)),)))
        if w.tag == "release":
            for f in FINGERS:
                fs = g.finger(f)
                if w.torque(f) == 0.0 and engaged[f]:
                    g = release(g, f)
                    report.events.append(Event(t, "release", f))

    record(t0)
    apply_waypoint(wps[0], t0)
    try:
        for k in range(1, n_steps + 1):
            t = t0 + k * dt
            pose, width_cmd, _ = traj.sample(t)
            max_dw = params.width_speed * dt
            width = g.width + min(max(width_cmd - g.width, -max_dw), max_dw)
            g = replace(g, tool_pose=pose, width=clamp_width(width, params))
            while next_wp < len(wps) and wps[next_wp].t <= t + 0.5 * dt:
                apply_waypoint(wps[next_wp], t)
                next_wp += 1
            cs = emit_constraints(g, cloth)
            if pins is not None:
                cs = cs + pins
            cloth, info = clothsim.step_detailed(cloth, dt, cs)
            for gid, f in enumerate(FINGERS):
                gf = info.groups.get(gid)
                forces[f] = gf.magnitude if gf is not None else 0.0
                if gf is None:
                    continue
                if gf.broke:
                    report.events.append(Event(t, "slip", f, (("force", gf.magnitude), ("mode", "HighFriction"))))
                    g = drop_grasp(g, f)
                elif gf.slipped:
                    if t - last_slip[f] > quiet + 0.5 * dt:
                        report.events.append(Event(t, "slip", f, (("force", abs(gf.needed_axial)),
                                                                  ("mode", "LowFriction"))))
                    last_slip[f] = t
            if pins is not None and PIN_GROUP in info.groups:
                report.meta["pin_force"] = info.groups[PIN_GROUP].magnitude
            g, dropped = sync_sliding_offsets(g, cloth)
            for f, nd in dropped.items():
                if nd:
                    report.events.append(Event(t, "slide_out", f, (("particles", nd),)))
            if k % frame_every == 0 or k == n_steps:
                record(t)
    except SimulationDiverged as exc:
        report.failed = True
        report.failure = str(exc)
        report.events.append(Event(exc.time, "diverged", "", (("particle", exc.particle),)))
    report.final_cloth = cloth
    report.final_gripper = g
    return report


@dataclass(frozen=True)
class FoldSpec:
    direction: tuple[float, float] = (0.0, 1.0)
    n_folds: int = 1


def facing_edge(corners: np.ndarray, wanted) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Edge of the CCW corner polygon whose outward normal best matches ``wanted``.

    Returns ``(normal, start, end)``. Ties keep the first edge in ring order.
    """
    wanted = unit2(wanted)
    corners = np.asarray(corners, dtype=float)
    best, best_dot = (wanted, corners[0], corners[0]), -np.inf
    n = len(corners)
    for k in range(n):
        a, b = corners[k], corners[(k + 1) % n]
        e = b - a
        length = float(np.hypot(*e))
        if length == 0:
            continue
        normal = np.array([e[1], -e[0]]) / length  # outward for a CCW ring
        dot = float(normal @ wanted)
        if dot > best_dot + 1e-12:
            best, best_dot = (normal, a.copy(), b.copy()), dot
    return best


def _edge_normal_direction(corners: np.ndarray, wanted: np.ndarray) -> np.ndarray:
    """Outward normal of the corner polygon edge best aligned with ``wanted``."""
    return facing_edge(corners, wanted)[0]


def mask_centroid(mask) -> np.ndarray:
    x, y = mask.pixel_centers()
    b = mask.bits
    return np.array([x[b].mean(), y[b].mean()])


def auto_fold(
    cloth: ClothState,
    fold_spec: FoldSpec = FoldSpec(),
    params: GripperParams | None = None,
    cfg: PlanConfig | None = None,
    *,
    scale: float = 0.002,
    dt: float = 1e-3,
    corner_epsilon: float = 0.008,
    settle_time: float = 1.0,
    wr_scale: float | None = None,
    keep_snapshots: bool = False,
    align_to_edges: bool = True,
) -> list[EpisodeReport]:
    """Perceive, plan and execute up to two successive half folds.

    The first fold direction snaps to the outward normal of the detected
    cloth edge closest to ``fold_spec.direction``; the second is the first
    rotated by 90 degrees. Each fold line passes through the mask centroid.
    Metrics (IoU against the halved pre-fold mask and the wrinkle penalty)
    are attached to every report.
    """
    from . import metrics, percept

    params = params or GripperParams()
    cfg = cfg or PlanConfig()
    if fold_spec.n_folds not in (1, 2):
        raise PlanningError("n_folds must be 1 or 2")
    reports = []
    wanted = unit2(fold_spec.direction)
    direction = None
    for k in range(fold_spec.n_folds):
        pre = cloth
        pre_mask = percept.rasterize_mask(pre, scale)
        try:
            contour = percept.extract_contour(pre_mask)
            corners = percept.detect_corners(contour, corner_epsilon)
            if len(corners) < 2:
                raise percept.PerceptionError(f"only {len(corners)} corners detected")
            if direction is None:
                direction = _edge_normal_direction(corners.corners, wanted) if align_to_edges else wanted
            else:
                direction = np.array([-direction[1], direction[0]])
            p1, p2, _ = percept.select_grasp_corners(corners, direction, params.width_min, params.width_max)
            centroid = mask_centroid(pre_mask)
            fold_line = Line2D(tuple(centroid), tuple(direction))
            traj = plan_fold((p1, p2), fold_line, params, cfg)
        except (percept.PerceptionError, PlanningError) as exc:
            rep = EpisodeReport(task="fold", failed=True, failure=f"fold {k + 1}: {exc}")
            rep.masks["pre"] = pre_mask
            rep.meta["fold_index"] = k + 1
            rep.final_cloth = cloth
            reports.append(rep)
            break
        rep = execute(traj, cloth, new_gripper(params), task="fold", dt=dt, keep_snapshots=keep_snapshots)
        rep.meta.update(
            fold_index=k + 1,
            fold_line={"point": list(fold_line.point), "normal": list(fold_line.normal)},
            corners=[p1.tolist(), p2.tolist()],
            detected_corners=corners.corners.tolist(),
        )
        if rep.failed:
            rep.masks["pre"] = pre_mask
            reports.append(rep)
            break
        cloth, _ = clothsim.settle(rep.final_cloth, settle_time, 1e-7, dt)
        rep.final_cloth = cloth
        frame = percept.frame_for_points(np.vstack([pre.positions, cloth.positions]), scale)
        pre_mask = percept.rasterize_mask(pre, scale, frame)
        post_mask = percept.rasterize_mask(cloth, scale, frame)
        truth = metrics.generate_fold_ground_truth(pre_mask, fold_line)
        rep.masks.update(pre=pre_mask, post=post_mask, truth=truth)
        rep.metrics["iou"] = metrics.iou(post_mask, truth)
        rep.metrics["wr"] = metrics.cloth_wrinkle_penalty(cloth, wr_scale or metrics.WR_SCALE)
        rep.metrics["area_ratio"] = post_mask.count / max(pre_mask.count, 1)
        reports.append(rep)
    return reports
