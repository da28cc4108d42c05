"""Scenario files, the bundled benchmark catalog, suite orchestration and reports.

A suite file is YAML holding either one scenario mapping or
``{seed: N, scenarios: [...]}``. Every key is checked: unknown or duplicated
keys and missing task parameters are reported with their line number. Run
``gogsim config --defaults`` for the full schema with default values.

A suite run writes, under the output directory::

    rows.csv                 one row per (scenario, trial), canonical order
    summary.json             per-scenario and per-task aggregates plus run metadata
    summary.png              per-trial headline metrics
    <scenario>/trial_NNN/    episode JSON, trajectories, P5 masks, frames/

Everything written is a function of the scenarios and the seed only.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import re
import traceback
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from PIL import Image, ImageDraw

from . import __version__
from . import cloth as clothsim
from . import maskio, metrics, percept
from .cloth import ClothSpec
from .episode import EpisodeReport
from .geometry import Line2D, Pose
from .gripper import FINGERS, GripperParams, new_gripper
from .planner import (
    FoldSpec,
    PlanConfig,
    auto_fold,
    execute,
    facing_edge,
    plan_drag,
    plan_flatten,
    plan_lift,
)

log = logging.getLogger(__name__)

MASK_SCALE = 0.002
CORNER_EPSILON = 0.008
KINETIC_TOL = 1e-7

# required keys, then optional keys with defaults, per task
TASKS: dict[str, tuple[tuple[str, ...], dict[str, Any]]] = {
    "fold": (("n_folds",), {"direction": (0.0, 1.0)}),
    "drag": (("distance",), {"direction": (1.0, 0.0)}),
    "lift": (("height", "hold"), {"direction": (0.0, 1.0)}),
    "flatten": (("slide_length",), {"direction": (1.0, 0.0)}),
    "payload": (("grip_force",), {"max_force": 30.0, "speed": 0.2, "finger": "right"}),
}
# example values used by ``config --defaults`` for the required keys
_REQUIRED_EXAMPLES = {"n_folds": 1, "distance": 0.5, "height": 0.5, "hold": 5.0, "slide_length": 0.1,
                      "grip_force": 10.0}

# Placeholder garment sizes for the item classes of the catalog; the grid
# spacing stays near 2 cm so every item runs at a similar cost per area.
CATALOG: dict[str, dict[str, Any]] = {
    "small_towel": {"width_m": 0.3, "height_m": 0.3, "nx": 16, "ny": 16, "mass_per_area": 0.2},
    "medium_towel": {"width_m": 0.4, "height_m": 0.4, "nx": 21, "ny": 21, "mass_per_area": 0.3},
    # springs scale with areal mass: at the default stiffness a cloth this
    # light holds its crease up as a loop instead of lying flat
    "napkin": {"width_m": 0.25, "height_m": 0.25, "nx": 13, "ny": 13, "mass_per_area": 0.1,
               "stiffness_structural": 10.0, "stiffness_shear": 2.0, "stiffness_bend": 0.1},
    "pillowcase": {"width_m": 0.45, "height_m": 0.3, "nx": 23, "ny": 16, "mass_per_area": 0.25},
    "rag": {"width_m": 0.2, "height_m": 0.2, "nx": 11, "ny": 11, "mass_per_area": 0.25},
}

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")
LEAD_COLUMNS = ("scenario", "trial", "task", "status", "error", "x", "y", "yaw_deg")


class ScenarioError(ValueError):
    pass


# --------------------------------------------------------------------------
# strict YAML loading


class _Map(dict):
    """Mapping that remembers the line of itself and of each key."""

    line = 0

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.lines: dict[str, int] = {}

    def at(self, key=None) -> str:
        return f"line {self.lines.get(key, self.line) if key is not None else self.line}"


class _StrictLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    loader.flatten_mapping(node)
    out = _Map()
    out.line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        line = key_node.start_mark.line + 1
        if not isinstance(key, str):
            raise ScenarioError(f"line {line}: keys must be strings, got {key!r}")
        if key in out:
            raise ScenarioError(f"line {line}: duplicate key {key!r} (first at line {out.lines[key]})")
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = line
    return out


_StrictLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _parse_yaml(text: str, source: str = "<string>"):
    try:
        return yaml.load(text, Loader=_StrictLoader)
    except ScenarioError as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "?"
        raise ScenarioError(f"{source}: {where}: {getattr(exc, 'problem', None) or exc}") from None


# --------------------------------------------------------------------------
# scenario model


@dataclass(frozen=True)
class WrinkleSpec:
    """One raised-cosine ridge pressed into the cloth before settling."""

    amplitude: float = 0.02
    width: float = 0.06
    axis: str = "random"  # "0", "1" or "random"
    center: tuple[float, float] = (0.35, 0.65)  # seeded draw range, fraction of the cloth


@dataclass(frozen=True)
class Scenario:
    name: str
    task: str
    task_params: dict = field(default_factory=dict)
    cloth: ClothSpec = ClothSpec()
    catalog: str = ""
    position: tuple[float, float] = (0.0, 0.0)
    yaw_deg: float = 0.0
    poses: tuple[tuple[float, float, float], ...] = ()
    jitter_xy: float = 0.05
    jitter_yaw_deg: float = 45.0
    wrinkle: WrinkleSpec | None = None
    gripper: GripperParams = GripperParams()
    planner: PlanConfig = PlanConfig()
    trials: int = 1
    settle_time: float = 1.0
    output: str = ""
    corner_epsilon: float = CORNER_EPSILON

    @property
    def out_name(self) -> str:
        return self.output or self.name

    def to_dict(self) -> dict:
        """Plain nested form in the file schema; also the input of the config hash."""
        d = {
            "name": self.name,
            "task": self.task,
            "trials": self.trials,
            "catalog": self.catalog,
            "cloth": dataclasses.asdict(self.cloth),
            "pose": {"x": self.position[0], "y": self.position[1], "yaw_deg": self.yaw_deg},
            "poses": [list(p) for p in self.poses],
            "jitter": {"xy": self.jitter_xy, "yaw_deg": self.jitter_yaw_deg},
            "wrinkle": dataclasses.asdict(self.wrinkle) if self.wrinkle else None,
            "gripper": dataclasses.asdict(self.gripper),
            "planner": dataclasses.asdict(self.planner),
            "settle_time": self.settle_time,
            "corner_epsilon": self.corner_epsilon,
            "output": self.output,
            self.task: dict(self.task_params),
        }
        return _jsonable(d)


@dataclass(frozen=True)
class Suite:
    scenarios: tuple[Scenario, ...]
    seed: int = 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _coerce(value, default, where: str):
    """Check ``value`` against the type of ``default`` and convert it."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ScenarioError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ScenarioError(f"{where}: expected a list of {len(default)} values, got {value!r}")
        return tuple(_coerce(v, d, f"{where}[{k}]") for k, (v, d) in enumerate(zip(value, default)))
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ScenarioError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _require_map(value, where: str, line: str) -> _Map:
    if not isinstance(value, dict):
        raise ScenarioError(f"{line}: {where} must be a mapping, got {type(value).__name__}")
    if not isinstance(value, _Map):
        value = _Map(value)
    return value


def _check_keys(m: _Map, allowed, where: str) -> None:
    for k in m:
        if k not in allowed:
            raise ScenarioError(f"{m.at(k)}: unknown key {k!r} in {where} (allowed: {', '.join(sorted(allowed))})")


def _block(cls, value, where: str, line: str, base=None):
    """Dataclass from a mapping of field overrides, validated."""
    base = base if base is not None else cls()
    if value is None:
        return base
    m = _require_map(value, where, line)
    names = [f.name for f in dataclasses.fields(cls)]
    _check_keys(m, names, where)
    kw = {k: _coerce(v, getattr(base, k), f"{m.at(k)}: {where}.{k}") for k, v in m.items()}
    obj = dataclasses.replace(base, **kw)
    validate = getattr(obj, "validate", None)
    if validate is not None:
        try:
            validate()
        except ValueError as exc:
            raise ScenarioError(f"{m.at()}: {where}: {exc}") from None
    return obj


_SCENARIO_KEYS = ("name", "task", "trials", "catalog", "cloth", "pose", "poses", "jitter", "wrinkle", "gripper",
                  "planner", "settle_time", "corner_epsilon", "output", *TASKS)


def scenario_from_mapping(m, source: str = "<scenario>") -> Scenario:
    m = _require_map(m, "scenario", "line ?")
    where = f"{source}: {m.at()}"
    _check_keys(m, _SCENARIO_KEYS, "scenario")
    for key in ("name", "task"):
        if key not in m:
            raise ScenarioError(f"{where}: scenario is missing required key {key!r}")
    name = _coerce(m["name"], "", f"{m.at('name')}: name")
    if not _NAME_RE.match(name):
        raise ScenarioError(f"{m.at('name')}: name {name!r} must be letters, digits, '.', '_' or '-'")
    task = _coerce(m["task"], "", f"{m.at('task')}: task")
    if task not in TASKS:
        raise ScenarioError(f"{m.at('task')}: unknown task {task!r} (one of: {', '.join(TASKS)})")
    for other in TASKS:
        if other != task and other in m:
            raise ScenarioError(f"{m.at(other)}: block {other!r} does not apply to task {task!r}")

    required, optional = TASKS[task]
    if task not in m:
        raise ScenarioError(f"{where}: task {task!r} requires key '{task}.{required[0]}'")
    tm = _require_map(m[task], task, m.at(task))
    _check_keys(tm, (*required, *optional), task)
    params: dict[str, Any] = {}
    for key in required:
        if key not in tm:
            raise ScenarioError(f"{tm.at()}: task {task!r} requires key '{task}.{key}'")
        default = 1 if key == "n_folds" else 0.0
        params[key] = _coerce(tm[key], default, f"{tm.at(key)}: {task}.{key}")
    for key, default in optional.items():
        params[key] = _coerce(tm[key], default, f"{tm.at(key)}: {task}.{key}") if key in tm else default
    _validate_task(task, params, tm)

    catalog = ""
    base_cloth = ClothSpec()
    if m.get("catalog"):
        catalog = _coerce(m["catalog"], "", f"{m.at('catalog')}: catalog")
        if catalog not in CATALOG:
            raise ScenarioError(f"{m.at('catalog')}: unknown catalog item {catalog!r} "
                                f"(one of: {', '.join(CATALOG)})")
        base_cloth = dataclasses.replace(base_cloth, **CATALOG[catalog])
    cloth = _block(ClothSpec, m.get("cloth"), "cloth", m.at("cloth"), base_cloth)
    gripper = _block(GripperParams, m.get("gripper"), "gripper", m.at("gripper"))
    planner = _block(PlanConfig, m.get("planner"), "planner", m.at("planner"))

    x = y = yaw = 0.0
    if "pose" in m:
        pm = _require_map(m["pose"], "pose", m.at("pose"))
        _check_keys(pm, ("x", "y", "yaw_deg"), "pose")
        x = _coerce(pm.get("x", 0.0), 0.0, f"{pm.at('x')}: pose.x")
        y = _coerce(pm.get("y", 0.0), 0.0, f"{pm.at('y')}: pose.y")
        yaw = _coerce(pm.get("yaw_deg", 0.0), 0.0, f"{pm.at('yaw_deg')}: pose.yaw_deg")
    poses = ()
    if m.get("poses") is not None:
        if not isinstance(m["poses"], list):
            raise ScenarioError(f"{m.at('poses')}: poses must be a list of [x, y, yaw_deg]")
        poses = tuple(_coerce(p, (0.0, 0.0, 0.0), f"{m.at('poses')}: poses[{k}]") for k, p in enumerate(m["poses"]))
    jxy, jyaw = 0.05, 45.0
    if "jitter" in m:
        jm = _require_map(m["jitter"], "jitter", m.at("jitter"))
        _check_keys(jm, ("xy", "yaw_deg"), "jitter")
        jxy = _coerce(jm.get("xy", jxy), 0.0, f"{jm.at('xy')}: jitter.xy")
        jyaw = _coerce(jm.get("yaw_deg", jyaw), 0.0, f"{jm.at('yaw_deg')}: jitter.yaw_deg")
        if jxy < 0 or jyaw < 0:
            raise ScenarioError(f"{jm.at()}: jitter ranges must be non-negative")
    wrinkle = None
    if m.get("wrinkle") is not None:
        wrinkle = _block(WrinkleSpec, m["wrinkle"], "wrinkle", m.at("wrinkle"))
        lo, hi = wrinkle.center
        if wrinkle.axis not in ("0", "1", "random") or not 0 <= lo <= hi <= 1 or wrinkle.amplitude < 0 \
                or wrinkle.width <= 0:
            raise ScenarioError(f"{m.at('wrinkle')}: wrinkle needs axis 0/1/random, 0 <= center range <= 1, "
                                "amplitude >= 0 and width > 0")
    trials = _coerce(m.get("trials", 1), 1, f"{m.at('trials')}: trials")
    if trials < 1:
        raise ScenarioError(f"{m.at('trials')}: trials must be >= 1")
    settle_time = _coerce(m.get("settle_time", 1.0), 0.0, f"{m.at('settle_time')}: settle_time")
    if settle_time < 0:
        raise ScenarioError(f"{m.at('settle_time')}: settle_time must be >= 0")
    corner_epsilon = _coerce(m.get("corner_epsilon", CORNER_EPSILON), 0.0, f"{m.at('corner_epsilon')}: corner_epsilon")
    if not 0 < corner_epsilon < 0.1:
        raise ScenarioError(f"{m.at('corner_epsilon')}: corner_epsilon must be in (0, 0.1) m")
    output = _coerce(m.get("output", ""), "", f"{m.at('output')}: output")
    if output and not _NAME_RE.match(output):
        raise ScenarioError(f"{m.at('output')}: output must be a plain directory name")
    return Scenario(name, task, params, cloth, catalog, (x, y), yaw, poses, jxy, jyaw, wrinkle, gripper, planner,
                    trials, settle_time, output, corner_epsilon)


def _validate_task(task: str, p: dict, tm: _Map) -> None:
    def bad(key, why):
        raise ScenarioError(f"{tm.at(key)}: {task}.{key} {why}")

    if "direction" in p and not math.hypot(*p["direction"]) > 0:
        bad("direction", "must be a non-zero vector")
    if task == "fold" and p["n_folds"] not in (1, 2):
        bad("n_folds", "must be 1 or 2")
    if task == "drag" and p["distance"] < 0:
        bad("distance", "must be >= 0")
    if task == "lift":
        if p["height"] <= 0:
            bad("height", "must be > 0")
        if p["hold"] < 0:
            bad("hold", "must be >= 0")
    if task == "flatten" and p["slide_length"] < 0:
        bad("slide_length", "must be >= 0")
    if task == "payload":
        if p["grip_force"] < 0:
            bad("grip_force", "must be >= 0")
        if p["max_force"] <= 0:
            bad("max_force", "must be > 0")
        if p["speed"] <= 0:
            bad("speed", "must be > 0")
        if p["finger"] not in FINGERS:
            bad("finger", f"must be one of {FINGERS}")


def parse_suite(text: str, source: str = "<string>") -> Suite:
    doc = _parse_yaml(text, source)
    if not isinstance(doc, dict):
        raise ScenarioError(f"{source}: expected a mapping at the top level")
    if "scenarios" not in doc:
        return Suite((scenario_from_mapping(doc, source),), 0)
    _check_keys(doc, ("seed", "scenarios"), "suite")
    seed = _coerce(doc.get("seed", 0), 0, f"{doc.at('seed')}: seed")
    items = doc["scenarios"]
    if not isinstance(items, list) or not items:
        raise ScenarioError(f"{source}: {doc.at('scenarios')}: scenarios must be a non-empty list")
    scenarios = tuple(scenario_from_mapping(s, source) for s in items)
    seen: dict[str, str] = {}
    for s in scenarios:
        for key in {s.name, s.out_name}:
            if key in seen and seen[key] != s.name:
                raise ScenarioError(f"{source}: scenarios {seen[key]!r} and {s.name!r} share the name {key!r}")
            seen[key] = s.name
        if s.name in [t.name for t in scenarios if t is not s]:
            raise ScenarioError(f"{source}: duplicate scenario name {s.name!r}")
    return Suite(scenarios, seed)


def load_suite(path) -> Suite:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"{path}: no such file")
    return parse_suite(path.read_text(), str(path))


def load_scenario(path) -> Scenario:
    """Load a file holding exactly one scenario."""
    suite = load_suite(path)
    if len(suite.scenarios) != 1:
        raise ScenarioError(f"{path}: expected one scenario, found {len(suite.scenarios)}")
    return suite.scenarios[0]


def catalog_text() -> str:
    return resources.files("gogsim").joinpath("data/catalog.yaml").read_text()


def load_catalog() -> Suite:
    """The bundled benchmark suite over the catalog item classes."""
    return parse_suite(catalog_text(), "catalog.yaml")


def defaults_document() -> dict:
    """Every scenario key with its default (required task keys get example values)."""
    base = Scenario("example", "fold", {"n_folds": 1, "direction": (0.0, 1.0)}, wrinkle=WrinkleSpec()).to_dict()
    base.pop("fold")
    base["catalog"] = "small_towel"
    base["poses"] = []
    for task, (required, optional) in TASKS.items():
        base[task] = _jsonable({**{k: _REQUIRED_EXAMPLES[k] for k in required}, **optional})
    return {"seed": 0, "scenarios": [base]}


def defaults_yaml() -> str:
    header = (
        "# Full scenario schema with defaults. A scenario names one task and\n"
        "# carries only that task's block; required task keys have no default\n"
        "# (example values shown). 'poses' replaces seeded jitter when given;\n"
        "# 'wrinkle' is optional (null for a flat start); 'catalog' presets the\n"
        f"# cloth size ({', '.join(CATALOG)}) and 'cloth' overrides it.\n"
    )
    return header + yaml.safe_dump(defaults_document(), sort_keys=False)


def config_hash(suite: Suite) -> str:
    blob = json.dumps({"seed": suite.seed, "scenarios": [s.to_dict() for s in suite.scenarios]},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# --------------------------------------------------------------------------
# trials


@dataclass
class TrialResult:
    row: dict
    files: dict[str, bytes]
    reports: list[EpisodeReport] = field(default_factory=list)


def trial_rng(seed: int, name: str, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), int(trial)])


def trial_pose(s: Scenario, trial: int, rng: np.random.Generator) -> tuple[float, float, float]:
    """(x, y, yaw_deg) for a trial: the explicit pose list cycled, else base pose plus uniform jitter."""
    if s.poses:
        return s.poses[trial % len(s.poses)]
    j = rng.uniform(-1.0, 1.0, size=3)
    return (s.position[0] + s.jitter_xy * j[0], s.position[1] + s.jitter_xy * j[1],
            s.yaw_deg + s.jitter_yaw_deg * j[2])


def initial_cloth(s: Scenario, pose, rng: np.random.Generator):
    """Build, optionally wrinkle, and settle the trial's starting cloth."""
    c = clothsim.build_cloth(s.cloth, origin=pose[:2], yaw=math.radians(pose[2]))
    if s.wrinkle is not None:
        axis = int(rng.integers(0, 2)) if s.wrinkle.axis == "random" else int(s.wrinkle.axis)
        center = float(rng.uniform(*s.wrinkle.center))
        c = clothsim.add_ridge(c, s.wrinkle.amplitude, s.wrinkle.width, axis, center)
    if s.settle_time > 0:
        c, _ = clothsim.settle(c, s.settle_time, KINETIC_TOL)
    return c


def _perceive_edge(c, direction, epsilon=CORNER_EPSILON):
    """Detected corners and the cloth edge facing ``direction``."""
    mask = percept.rasterize_mask(c, MASK_SCALE)
    corners = percept.detect_corners(percept.extract_contour(mask), epsilon)
    if len(corners) < 3:
        raise percept.PerceptionError(f"only {len(corners)} corners detected")
    normal, a, b = facing_edge(corners.corners, direction)
    return mask, corners, normal, a, b


def _settled(rep: EpisodeReport, s: Scenario):
    c = rep.final_cloth
    if s.settle_time > 0:
        c, _ = clothsim.settle(c, s.settle_time, KINETIC_TOL)
    return c


def _slip_count(rep: EpisodeReport) -> int:
    return len(rep.events_of("slip"))


def _run_task(s: Scenario, c, keep: bool) -> tuple[dict, list[EpisodeReport]]:
    """Run the scenario's task on a settled cloth; returns (metrics, reports)."""
    p = s.task_params
    params, cfg = s.gripper, s.planner
    out: dict[str, Any] = {}
    if s.task == "fold":
        reps = auto_fold(c, FoldSpec(tuple(p["direction"]), p["n_folds"]), params, cfg, scale=MASK_SCALE,
                         corner_epsilon=s.corner_epsilon, settle_time=max(s.settle_time, 1e-3), keep_snapshots=keep)
        done = 0
        for k, rep in enumerate(reps, 1):
            if rep.failed:
                break
            done = k
            out[f"iou_{k}"] = rep.metrics["iou"]
            out[f"wr_{k}"] = rep.metrics["wr"]
            out[f"area_ratio_{k}"] = rep.metrics["area_ratio"]
        out["folds_done"] = done
        if done:
            out["iou"], out["wr"] = out[f"iou_{done}"], out[f"wr_{done}"]
        return out, reps

    if s.task == "payload":
        g, pins, axis = metrics.payload_setup(c, params, p["grip_force"], p["finger"])
        res = metrics.payload_pull(c, g, pins, axis, p["max_force"], p["finger"], p["speed"])
        rep = EpisodeReport(task="payload", final_cloth=c, final_gripper=g)
        rep.masks["pre"] = percept.rasterize_mask(c, MASK_SCALE)
        out.update(peak_force=res.peak_force, slipped=int(res.slipped), capped=int(res.capped), mode=res.mode)
        rep.metrics.update(out)
        rep.meta["trace"] = [[round(t, 9), f] for t, f in res.trace[:: max(len(res.trace) // 200, 1)]]
        return out, [rep]

    pre_mask, corners, normal, a, b = _perceive_edge(c, p["direction"], s.corner_epsilon)
    mid = 0.5 * (a + b)
    if s.task == "drag":
        line = Line2D(tuple(mid + p["distance"] * normal), tuple(normal))
        rep = execute(plan_drag(mid, normal, p["distance"], params, cfg), c, new_gripper(params), task="drag",
                      keep_snapshots=keep)
        if not rep.failed:
            final = _settled(rep, s)
            post = percept.rasterize_mask(final, MASK_SCALE)
            out["offset_m"] = metrics.drag_offset(post, line)
            rep.masks["post"] = post
            rep.final_cloth = final
        out["slip_events"] = _slip_count(rep)
        rep.meta["alignment_line"] = {"point": list(line.point), "normal": list(line.normal)}
    elif s.task == "lift":
        rep = execute(plan_lift((a, b), p["height"], p["hold"], params, cfg, inward=-normal), c,
                      new_gripper(params), task="lift", keep_snapshots=keep)
        if not rep.failed:
            out["lift_class"] = metrics.classify_lift(rep).value
            for f in FINGERS:
                out[f"{f}_retained"] = int(metrics.finger_retained(rep, f))
        out["slip_events"] = _slip_count(rep)
    else:  # flatten
        out["max_z_before"] = float(c.positions[:, 2].max())
        out["wr_before"] = metrics.cloth_wrinkle_penalty(c)
        rep = execute(plan_flatten(mid, normal, p["slide_length"], params, cfg), c, new_gripper(params),
                      task="flatten", keep_snapshots=keep)
        if not rep.failed:
            final = _settled(rep, s)
            rep.final_cloth = final
            out["max_z_after"] = float(final.positions[:, 2].max())
            out["wr_after"] = metrics.cloth_wrinkle_penalty(final)
            rep.masks["post"] = percept.rasterize_mask(final, MASK_SCALE)
        out["slip_events"] = _slip_count(rep)
    rep.masks["pre"] = pre_mask
    rep.meta["detected_corners"] = corners.corners.tolist()
    rep.metrics.update(out)
    return out, [rep]


def run_trial(s: Scenario, trial: int, seed: int = 0, frames: bool = False, frame_stride: int = 10) -> TrialResult:
    """One trial: seeded pose, settle, task pipeline, metrics, output files.

    Exceptions never escape; they turn into a failed row whose ``error``
    column carries the message.
    """
    rng = trial_rng(seed, s.name, trial)
    pose = trial_pose(s, trial, rng)
    row: dict[str, Any] = {"scenario": s.name, "trial": trial, "task": s.task, "status": "ok", "error": "",
                           "x": float(pose[0]), "y": float(pose[1]), "yaw_deg": float(pose[2])}
    base = f"{s.out_name}/trial_{trial:03d}"
    files: dict[str, bytes] = {}
    reports: list[EpisodeReport] = []
    try:
        c = initial_cloth(s, pose, rng)
        out, reports = _run_task(s, c, frames)
        row.update(out)
        failed = [r for r in reports if r.failed]
        if failed:
            row["status"] = "failed"
            row["error"] = failed[0].failure
    except Exception as exc:  # crash isolation: every error becomes a failed row
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
        files[f"{base}/error.txt"] = traceback.format_exc().encode()
        log.warning("%s trial %d failed: %s", s.name, trial, row["error"])
    for k, rep in enumerate(reports, 1):
        files[f"{base}/episode_{k}.json"] = (rep.to_json() + "\n").encode()
        if rep.trajectory is not None:
            files[f"{base}/trajectory_{k}.txt"] = rep.trajectory.to_text().encode()
        for mname, mask in sorted(rep.masks.items()):
            files[f"{base}/mask_{mname}_{k}.pgm"] = maskio.pgm_bytes(mask.bits, mask.scale, mask.origin)
        if frames and rep.snapshots:
            for fname, data in frame_images(rep, frame_stride):
                files[f"{base}/frames_{k}/{fname}"] = data
    return TrialResult(row, files, reports)


def _trial_job(args) -> TrialResult:
    s, trial, seed, frames, stride = args
    res = run_trial(s, trial, seed, frames, stride)
    res.reports = []  # states stay in the worker
    return res


# --------------------------------------------------------------------------
# frames


def _jaw_polygon(pose_tuple, width: float, finger: str, box) -> np.ndarray:
    pose = Pose.from_seq(pose_tuple)
    rot = pose.rotation
    sign = -1.0 if finger == "left" else 1.0
    center = pose.position + rot @ np.array([sign * 0.5 * width, 0.0, 0.0])
    hx, hy = 0.5 * box[0], 0.5 * box[1]
    local = np.array([[-hx, -hy, 0.0], [hx, -hy, 0.0], [hx, hy, 0.0], [-hx, hy, 0.0]])
    return (center + local @ rot.T)[:, :2]


def frame_images(report: EpisodeReport, stride: int = 10) -> list[tuple[str, bytes]]:
    """PNG bytes for every ``stride``-th frame: shaded cloth plus jaw outlines.

    Jaws are drawn blue in low friction and red in high friction. All frames
    share one world window so they can be flipped through.
    """
    if not report.frames or not report.snapshots or report.final_cloth is None:
        return []
    stride = max(int(stride), 1)
    picks = list(range(0, len(report.frames), stride))
    params = report.final_gripper.params if report.final_gripper is not None else GripperParams()
    pts = [report.snapshots[report.frames[i].snapshot][:, :2] for i in picks]
    for i in picks:
        fr = report.frames[i]
        pts += [_jaw_polygon(fr.tool_pose, fr.width, f, params.capture_box) for f in FINGERS]
    frame = percept.frame_for_points(np.vstack(pts), MASK_SCALE)
    digits = max(4, len(str(len(report.frames) - 1)))
    out = []
    for i in picks:
        fr = report.frames[i]
        c = report.final_cloth.with_positions(report.snapshots[fr.snapshot])
        img = metrics.render_shaded(c, MASK_SCALE, frame).intensity
        rgb = np.repeat(np.round(img[::-1] * 255).astype(np.uint8)[:, :, None], 3, axis=2)
        pil = Image.fromarray(rgb, "RGB")
        draw = ImageDraw.Draw(pil)
        for f in FINGERS:
            poly = _jaw_polygon(fr.tool_pose, fr.width, f, params.capture_box)
            px = (poly - np.asarray(frame.origin)) / MASK_SCALE
            xy = [(float(u), float(frame.height_px - v)) for u, v in px]
            color = (220, 40, 40) if fr.finger(f).mode == "HighFriction" else (40, 90, 220)
            draw.polygon(xy, outline=color)
        buf = io.BytesIO()
        pil.save(buf, format="PNG")
        out.append((f"frame_{i:0{digits}d}.png", buf.getvalue()))
    return out


def render_frames(report: EpisodeReport, stride: int, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, data in frame_images(report, stride):
        path = out_dir / name
        path.write_bytes(data)
        paths.append(path)
    return paths


# --------------------------------------------------------------------------
# aggregation and report files


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _mean(values) -> float:
    return math.fsum(values) / len(values)


def aggregate(rows: list[dict]) -> dict:
    """Means over valid rows of every numeric metric column, with counts."""
    valid = [r for r in rows if r.get("status") == "ok"]
    skip = {"trial", "x", "y", "yaw_deg"}
    cols = sorted({k for r in valid for k, v in r.items() if k not in skip and _is_number(v)})
    means = {}
    for col in cols:
        vals = [r[col] for r in valid if _is_number(r.get(col))]
        if vals:
            means[col] = {"mean": _mean(vals), "n": len(vals)}
    out: dict[str, Any] = {"trials": len(rows), "valid": len(valid), "failed": len(rows) - len(valid),
                           "note": f"aggregates over {len(valid)} of {len(rows)} trials", "means": means}
    classes = [r["lift_class"] for r in valid if r.get("lift_class")]
    if classes:
        out["lift_percent"] = {c.value: 100.0 * classes.count(c.value) / len(classes) for c in metrics.LiftClass}
    headline = {}
    for key, col in (("miou", "iou"), ("miou_1", "iou_1"), ("miou_2", "iou_2"), ("mean_wr", "wr"),
                     ("mean_offset_m", "offset_m"), ("mean_peak_force", "peak_force")):
        if col in means:
            headline[key] = means[col]["mean"]
    out["headline"] = headline
    return out


def summarize(rows: list[dict]) -> dict:
    by_scn: dict[str, list[dict]] = {}
    by_task: dict[str, list[dict]] = {}
    for r in rows:
        by_scn.setdefault(r["scenario"], []).append(r)
        by_task.setdefault(r["task"], []).append(r)
    return {
        "scenarios": {name: {"task": rs[0]["task"], **aggregate(rs)} for name, rs in sorted(by_scn.items())},
        "overall": {task: aggregate(rs) for task, rs in sorted(by_task.items())},
    }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_cell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def rows_csv(rows: list[dict]) -> str:
    extra = sorted({k for r in rows for k in r} - set(LEAD_COLUMNS))
    cols = [*LEAD_COLUMNS, *extra]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def read_rows(source) -> list[dict]:
    """Rows from a CSV path or text stream; empty cells are left out."""
    if hasattr(source, "read"):
        return _read_rows(source)
    with open(source, newline="") as fh:
        return _read_rows(fh)


def _read_rows(fh) -> list[dict]:
    rows = []
    for rec in csv.DictReader(fh):
        row = {k: _parse_cell(v) for k, v in rec.items()}
        for key in ("scenario", "status", "error", "task"):
            row[key] = rec[key]
        rows.append({k: v for k, v in row.items() if v is not None})
    return rows


@dataclass
class SuiteReport:
    rows: list[dict]
    summary: dict
    out_dir: Path | None = None

    @property
    def all_valid(self) -> bool:
        return all(r["status"] == "ok" for r in self.rows)


def load_report(out_dir) -> SuiteReport:
    """Read rows and summary back and check the aggregates against the rows."""
    out_dir = Path(out_dir)
    rows = read_rows(out_dir / "rows.csv")
    summary = json.loads((out_dir / "summary.json").read_text())
    again = json.loads(json.dumps(summarize(rows)))
    for key in ("scenarios", "overall"):
        if summary.get(key) != again[key]:
            raise ValueError(f"{out_dir}: summary.json {key} does not match rows.csv")
    return SuiteReport(rows, summary, out_dir)


def _headline_series(rows: list[dict]):
    task = rows[0]["task"]
    pick = {
        "fold": [("iou_1", "IoU 1-fold"), ("iou_2", "IoU 2-fold")],
        "drag": [("offset_m", "offset [m]")],
        "flatten": [("max_z_before", "max z before [m]"), ("max_z_after", "max z after [m]")],
        "payload": [("peak_force", "peak force [N]")],
        "lift": [("left_retained", "left kept"), ("right_retained", "right kept")],
    }[task]
    series = []
    for col, label in pick:
        vals = [r.get(col) if r["status"] == "ok" and _is_number(r.get(col)) else np.nan for r in rows]
        if not all(np.isnan(v) for v in vals):
            series.append((label, vals))
    return series


def summary_figure(rows: list[dict]) -> bytes:
    """Per-scenario bar chart of each trial's headline metric(s), as PNG bytes."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(r["scenario"], []).append(r)
    n = max(len(groups), 1)
    fig, axes = plt.subplots(n, 1, figsize=(6.0, 2.2 * n), squeeze=False)
    for ax, (name, rs) in zip(axes[:, 0], sorted(groups.items())):
        series = _headline_series(rs)
        trials = np.arange(len(rs))
        w = 0.8 / max(len(series), 1)
        for k, (label, vals) in enumerate(series):
            ax.bar(trials + (k - 0.5 * (len(series) - 1)) * w, vals, w, label=label)
        failed = [r["trial"] for r in rs if r["status"] != "ok"]
        for t in failed:
            ax.axvspan(t - 0.45, t + 0.45, color="0.85", zorder=0)
        ax.set_title(f"{name} ({rs[0]['task']}, {len(rs) - len(failed)}/{len(rs)} valid)", fontsize=9)
        ax.set_xticks(trials)
        ax.set_xlabel("trial", fontsize=8)
        if series:
            ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=80, metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()


def run_suite(suite: Suite | list[Scenario], out_dir=None, seed: int | None = None, jobs: int = 1,
              frames: bool = False, frame_stride: int = 10, figures: bool = True) -> SuiteReport:
    """Run every trial of every scenario and write the report files.

    Trials may run in ``jobs`` worker processes; rows and files are assembled
    in (scenario, trial) order regardless.
    """
    if not isinstance(suite, Suite):
        suite = Suite(tuple(suite), 0)
    if not suite.scenarios:
        raise ScenarioError("suite has no scenarios")
    if seed is not None:
        suite = Suite(suite.scenarios, int(seed))
    jobs_list = [(s, t, suite.seed, frames, frame_stride) for s in suite.scenarios for t in range(s.trials)]
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_trial_job, j) for j in jobs_list]
            results = []
            for j, fut in zip(jobs_list, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:  # the worker itself died
                    s, t = j[0], j[1]
                    results.append(TrialResult({"scenario": s.name, "trial": t, "task": s.task, "status": "failed",
                                                "error": f"worker: {type(exc).__name__}: {exc}"}, {}))
    else:
        results = [_trial_job(j) for j in jobs_list]
    results.sort(key=lambda r: (r.row["scenario"], r.row["trial"]))
    rows = [r.row for r in results]
    text = rows_csv(rows)
    summary = {
        "meta": {"config_hash": config_hash(suite), "seed": suite.seed, "version": __version__,
                 "trials": len(rows), "valid": sum(r["status"] == "ok" for r in rows)},
        # aggregates come from the rows exactly as written to the CSV
        **summarize(read_rows(io.StringIO(text))),
    }
    report = SuiteReport(rows, summary, Path(out_dir) if out_dir is not None else None)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for res in results:
            for rel, data in sorted(res.files.items()):
                path = out / rel
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(data)
        (out / "rows.csv").write_text(text)
        (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
        if figures:
            (out / "summary.png").write_bytes(summary_figure(rows))
    return report
