"""Width-controlled gripper carrying two variable-friction finger grippers.

Each finger has a low-friction (roller) and a high-friction (silicone) mode.
The mode is a pure function of grip force: high friction iff the grip force
reaches ``f_switch``. Finger jaws sit at +/- width/2 along the tool x axis;
the tool y axis is the roller's rolling direction (the slide axis).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .cloth import MODE_HIGH, MODE_LOW, MODE_PIN, ClothState
from .geometry import Pose

FINGERS = ("left", "right")
PIN_GROUP = 2


class FrictionMode(enum.Enum):
    LOW = "LowFriction"
    HIGH = "HighFriction"


@dataclass(frozen=True)
class GripperParams:
    width_min: float = 0.0
    width_max: float = 0.5
    finger_travel: float = 0.3
    f_switch: float = 5.0
    k_transmission: float = 50.0
    mu_lf: float = 0.1
    f_hold_max: float = 40.0
    # jaw capture box: across the fingers, along the slide axis, vertical reach
    capture_box: tuple[float, float, float] = (0.02, 0.02, 0.01)
    width_speed: float = 0.2
    linear_speed: float = 0.5
    min_grasp_particles: int = 2
    layer_epsilon: float = 0.001
    layer_cell: float = 0.01
    # extra band below f_switch that keeps an engaged finger in high friction
    hysteresis: float = 0.0

    def validate(self) -> None:
        if not 0.0 <= self.width_min <= self.width_max:
            raise ValueError("need 0 <= width_min <= width_max")
        if self.width_max / 2.0 > self.finger_travel + 1e-12:
            raise ValueError("width_max exceeds twice the finger travel")
        for name in ("f_switch", "k_transmission", "mu_lf", "f_hold_max", "width_speed", "linear_speed",
                     "layer_cell"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if len(self.capture_box) != 3 or min(self.capture_box) <= 0:
            raise ValueError("capture_box needs three positive extents")
        if self.min_grasp_particles < 1:
            raise ValueError("min_grasp_particles must be >= 1")
        if self.layer_epsilon < 0 or self.hysteresis < 0:
            raise ValueError("layer_epsilon and hysteresis must be non-negative")


@dataclass(frozen=True)
class FingerState:
    torque_cmd: float = 0.0
    grip_force: float = 0.0
    mode: FrictionMode = FrictionMode.LOW
    grasped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    offsets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def holding(self) -> bool:
        return len(self.grasped) > 0

    def same_as(self, other: "FingerState") -> bool:
        return (
            self.torque_cmd == other.torque_cmd
            and self.grip_force == other.grip_force
            and self.mode == other.mode
            and np.array_equal(self.grasped, other.grasped)
            and np.array_equal(self.offsets, other.offsets)
        )


@dataclass(frozen=True)
class GripperState:
    tool_pose: Pose = Pose()
    width: float = 0.0
    left: FingerState = FingerState()
    right: FingerState = FingerState()
    params: GripperParams = GripperParams()

    def finger(self, name: str) -> FingerState:
        if name not in FINGERS:
            raise ValueError(f"unknown finger {name!r}")
        return getattr(self, name)

    def with_finger(self, name: str, fs: FingerState) -> "GripperState":
        self.finger(name)
        return replace(self, **{name: fs})

    def jaw_frame(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """World position and rotation of a finger jaw."""
        sign = -1.0 if name == "left" else 1.0
        if name not in FINGERS:
            raise ValueError(f"unknown finger {name!r}")
        rot = self.tool_pose.rotation
        pos = self.tool_pose.position + rot @ np.array([sign * 0.5 * self.width, 0.0, 0.0])
        return pos, rot

    @property
    def slide_axis(self) -> np.ndarray:
        return self.tool_pose.rotation[:, 1].copy()


@dataclass
class GraspConstraintSet:
    """Flat arrays, one row per constrained particle.

    ``groups`` is 0/1 for the left/right finger and 2 for fixed pins. The
    friction cap is a per-group quantity repeated on each of its rows.
    """

    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    modes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    slide_axes: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    caps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    groups: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return len(self.indices)

    def __add__(self, other: "GraspConstraintSet") -> "GraspConstraintSet":
        return GraspConstraintSet(
            *(np.concatenate([getattr(self, f), getattr(other, f)]) for f in
              ("indices", "targets", "modes", "slide_axes", "caps", "groups"))
        )


def new_gripper(params: GripperParams | None = None, pose: Pose | None = None) -> GripperState:
    params = params or GripperParams()
    params.validate()
    return GripperState(tool_pose=pose or Pose(), width=params.width_min, params=params)


def clamp_width(w: float, params: GripperParams) -> float:
    return float(min(max(w, params.width_min), params.width_max))


def set_width(g: GripperState, w: float) -> GripperState:
    """Clamp to the span limits; jaws sit symmetrically about the tool axis."""
    return replace(g, width=clamp_width(float(w), g.params))


def mode_for_force(force: float, params: GripperParams, previous: FrictionMode = FrictionMode.LOW) -> FrictionMode:
    threshold = params.f_switch
    if previous is FrictionMode.HIGH and params.hysteresis > 0:
        threshold = params.f_switch - params.hysteresis
    return FrictionMode.HIGH if force >= threshold else FrictionMode.LOW


def command_torque(g: GripperState, finger: str, torque: float) -> GripperState:
    if not torque >= 0:
        raise ValueError(f"torque must be non-negative, got {torque!r}")
    fs = g.finger(finger)
    force = g.params.k_transmission * float(torque)
    mode = mode_for_force(force, g.params, fs.mode)
    fs = replace(fs, torque_cmd=float(torque), grip_force=force, mode=mode)
    if force == 0.0:
        fs = replace(fs, grasped=np.zeros(0, dtype=int), offsets=np.zeros((0, 3)))
    return g.with_finger(finger, fs)


def torque_for_force(force: float, params: GripperParams) -> float:
    return force / params.k_transmission


def release(g: GripperState, finger: str) -> GripperState:
    return g.with_finger(finger, FingerState())


def release_all(g: GripperState) -> GripperState:
    return release(release(g, "left"), "right")


def _other(finger: str) -> str:
    return "right" if finger == "left" else "left"


def capture_candidates(g: GripperState, finger: str, cloth: ClothState) -> tuple[np.ndarray, np.ndarray]:
    """Particles inside the jaw capture box, with their jaw-frame coordinates.

    A particle stands for a patch of cloth half a grid spacing wide around
    it; it is a candidate when that patch overlaps the box footprint and the
    particle itself lies within the box height.
    """
    pos, rot = g.jaw_frame(finger)
    grow = cloth.patch_half
    hx = 0.5 * g.params.capture_box[0] + grow
    hy = 0.5 * g.params.capture_box[1] + grow
    hz = g.params.capture_box[2]
    local = (cloth.positions - pos) @ rot
    if grow > 0:
        inside = (np.abs(local[:, 0]) < hx) & (np.abs(local[:, 1]) < hy)
    else:
        inside = (np.abs(local[:, 0]) <= hx) & (np.abs(local[:, 1]) <= hy)
    inside &= np.abs(local[:, 2]) <= hz + 1e-9
    idx = np.nonzero(inside)[0]
    return idx, local[idx]


def bottom_layer(idx: np.ndarray, local: np.ndarray, world_z: np.ndarray, params: GripperParams) -> np.ndarray:
    """Mask over ``idx`` keeping, per x-y cell, only particles near the lowest z."""
    if len(idx) == 0:
        return np.zeros(0, dtype=bool)
    cells = np.round(local[:, :2] / params.layer_cell).astype(np.int64)
    keep = np.zeros(len(idx), dtype=bool)
    _, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    zmin = np.full(inverse.max() + 1, np.inf)
    np.minimum.at(zmin, inverse, world_z)
    keep = world_z <= zmin[inverse] + params.layer_epsilon
    return keep


def attempt_sliding_grasp(g: GripperState, finger: str, cloth: ClothState) -> tuple[GripperState, bool]:
    """Slide the jaw under the fabric and capture the lowest layer in its box.

    Particles already held by the other finger are left to it but still count
    toward this finger's success (at minimum width the two jaws act as one).
    """
    fs = g.finger(finger)
    pos, _ = g.jaw_frame(finger)
    params = g.params
    if fs.grip_force <= 0.0 or pos[2] > params.capture_box[2]:
        return g.with_finger(finger, replace(fs, grasped=np.zeros(0, dtype=int), offsets=np.zeros((0, 3)))), False
    idx, local = capture_candidates(g, finger, cloth)
    keep = bottom_layer(idx, local, cloth.positions[idx, 2], params)
    idx, local = idx[keep], local[keep]
    shared = np.isin(idx, g.finger(_other(finger)).grasped)
    own_idx, own_local = idx[~shared], local[~shared]
    ok = len(idx) >= params.min_grasp_particles
    if not ok:
        own_idx, own_local = np.zeros(0, dtype=int), np.zeros((0, 3))
    return g.with_finger(finger, replace(fs, grasped=own_idx, offsets=own_local)), bool(ok)


def emit_constraints(g: GripperState, cloth: ClothState | None = None) -> GraspConstraintSet:
    parts = []
    axis = g.slide_axis
    for gid, name in enumerate(FINGERS):
        fs = g.finger(name)
        if fs.grip_force <= 0.0 or not fs.holding:
            continue
        pos, rot = g.jaw_frame(name)
        k = len(fs.grasped)
        high = fs.mode is FrictionMode.HIGH
        cap = g.params.f_hold_max if high else g.params.mu_lf * fs.grip_force
        parts.append(
            GraspConstraintSet(
                indices=fs.grasped.copy(),
                targets=pos + fs.offsets @ rot.T,
                modes=np.full(k, MODE_HIGH if high else MODE_LOW),
                slide_axes=np.tile(axis, (k, 1)),
                caps=np.full(k, cap),
                groups=np.full(k, gid),
            )
        )
    out = GraspConstraintSet()
    for p in parts:
        out = out + p
    return out


def pin_constraints(indices, positions) -> GraspConstraintSet:
    """Fixed world anchors (e.g. the clamp of a payload test rig)."""
    indices = np.asarray(indices, dtype=int)
    k = len(indices)
    return GraspConstraintSet(
        indices=indices,
        targets=np.asarray(positions, dtype=float).reshape(k, 3),
        modes=np.full(k, MODE_PIN),
        slide_axes=np.zeros((k, 3)),
        caps=np.full(k, np.inf),
        groups=np.full(k, PIN_GROUP),
    )


def sync_sliding_offsets(g: GripperState, cloth: ClothState) -> tuple[GripperState, dict[str, int]]:
    """Refresh low-friction offsets after slip; drop particles that left the jaw."""
    dropped = {}
    hy = 0.5 * g.params.capture_box[1] + cloth.patch_half
    for name in FINGERS:
        fs = g.finger(name)
        if fs.mode is not FrictionMode.LOW or not fs.holding:
            continue
        pos, rot = g.jaw_frame(name)
        local = (cloth.positions[fs.grasped] - pos) @ rot
        offsets = fs.offsets.copy()
        offsets[:, 1] = local[:, 1]
        inside = np.abs(offsets[:, 1]) <= hy
        dropped[name] = int((~inside).sum())
        g = g.with_finger(name, replace(fs, grasped=fs.grasped[inside], offsets=offsets[inside]))
    return g, dropped


def drop_grasp(g: GripperState, finger: str) -> GripperState:
    """Lose the held particles but keep the commanded torque (a slipped grasp)."""
    fs = g.finger(finger)
    return g.with_finger(finger, replace(fs, grasped=np.zeros(0, dtype=int), offsets=np.zeros((0, 3))))
