"""Episode logs: sampled frames, discrete events, masks and attached metrics."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

EVENT_KINDS = (
    "grasp_ok",
    "grasp_fail",
    "mode",
    "slip",
    "slide_out",
    "release",
    "clamp_warning",
    "diverged",
)


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    finger: str = ""
    detail: tuple = ()

    def to_dict(self) -> dict:
        return {"t": round(self.t, 9), "kind": self.kind, "finger": self.finger, "detail": dict(self.detail)}


@dataclass(frozen=True)
class FingerFrame:
    torque: float
    grip_force: float
    mode: str
    grasped: int
    force: float


@dataclass(frozen=True)
class Frame:
    t: float
    tool_pose: tuple
    width: float
    left: FingerFrame
    right: FingerFrame
    snapshot: int

    def finger(self, name: str) -> FingerFrame:
        return self.left if name == "left" else self.right

    def to_dict(self) -> dict:
        def ff(f: FingerFrame) -> dict:
            return {
                "torque": f.torque,
                "grip_force": f.grip_force,
                "mode": f.mode,
                "grasped": f.grasped,
                "force": f.force,
            }

        return {
            "t": round(self.t, 9),
            "tool_pose": list(self.tool_pose),
            "width": self.width,
            "left": ff(self.left),
            "right": ff(self.right),
            "snapshot": self.snapshot,
        }


@dataclass
class EpisodeReport:
    task: str
    frames: list[Frame] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    masks: dict[str, Any] = field(default_factory=dict)
    metrics: dict[str, Any] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)
    failed: bool = False
    failure: str = ""
    final_cloth: Any = None
    final_gripper: Any = None
    trajectory: Any = None

    def events_of(self, kind: str, finger: str | None = None) -> list[Event]:
        return [e for e in self.events if e.kind == kind and (finger is None or e.finger == finger)]

    @property
    def grasp_failed(self) -> bool:
        return bool(self.events_of("grasp_fail"))

    def snapshot_digest(self) -> str:
        h = hashlib.sha256()
        for s in self.snapshots:
            h.update(np.ascontiguousarray(s, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        masks = {}
        for name, m in sorted(self.masks.items()):
            masks[name] = {
                "width_px": m.width_px,
                "height_px": m.height_px,
                "scale": m.scale,
                "origin": list(m.origin),
                "count": m.count,
                "sha256": hashlib.sha256(np.packbits(m.bits).tobytes()).hexdigest(),
            }
        return {
            "task": self.task,
            "failed": self.failed,
            "failure": self.failure,
            "meta": _plain(self.meta),
            "metrics": _plain(self.metrics),
            "events": [e.to_dict() for e in self.events],
            "frames": [f.to_dict() for f in self.frames],
            "masks": masks,
            "snapshots_sha256": self.snapshot_digest(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj
