"""Evaluation metrics for fold, drag, lift and payload episodes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import cloth as clothsim
from .cloth import ClothState
from .episode import EpisodeReport
from .geometry import Line2D, Pose
from .gripper import (
    FINGERS,
    GripperParams,
    attempt_sliding_grasp,
    command_torque,
    emit_constraints,
    new_gripper,
    pin_constraints,
    sync_sliding_offsets,
    torque_for_force,
)
from .percept import BinaryMask, MaskFrame, frame_for_points, rasterize_mask
from .raster import raster_triangle


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class GrayImage:
    intensity: np.ndarray
    scale: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        a = np.asarray(self.intensity, dtype=float)
        if a.ndim != 2 or a.size == 0:
            raise MetricError("image must be a non-empty 2-D array")
        if a.min() < 0 or a.max() > 1:
            raise MetricError("intensities must lie in [0, 1]")
        object.__setattr__(self, "intensity", a)

    @property
    def width_px(self) -> int:
        return self.intensity.shape[1]

    @property
    def height_px(self) -> int:
        return self.intensity.shape[0]


@dataclass(frozen=True)
class FoldScore:
    iou: float
    wr: float


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """|a & b| / |a | b|, with ``b`` resampled onto ``a``'s grid if needed."""
    b = b.resample_like(a)
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return inter / union


def generate_fold_ground_truth(pre_mask: BinaryMask, fold_line: Line2D) -> BinaryMask:
    """The pre-fold mask clipped to the stationary side of the fold line."""
    if pre_mask.count == 0:
        raise MetricError("pre-fold mask is empty")
    jj, ii = np.nonzero(pre_mask.bits)
    half = 0.5 * pre_mask.scale
    lo = pre_mask.pixel_to_world(np.stack([ii.min(), jj.min()])) - half
    hi = pre_mask.pixel_to_world(np.stack([ii.max(), jj.max()])) + half
    box = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    sd = fold_line.signed_distance(box)
    if sd.min() > 1e-12 or sd.max() < -1e-12:
        raise MetricError("fold line does not cross the mask bounding box")
    x, y = pre_mask.pixel_centers()
    keep = fold_line.signed_distance(np.stack([x, y], axis=-1)) <= 0.0
    return pre_mask.with_bits(pre_mask.bits & keep)


LIGHT = np.array([0.5, 0.3, 0.8]) / np.linalg.norm([0.5, 0.3, 0.8])
AMBIENT = 0.15
DIFFUSE = 0.8
# wrinkles are scored on a finer render than the 2 mm perception masks
WR_SCALE = 0.0005


def cell_normals(cloth: ClothState) -> np.ndarray:
    q = cloth.quads()
    p = cloth.positions
    n = np.cross(p[q[:, 2]] - p[q[:, 0]], p[q[:, 3]] - p[q[:, 1]])
    length = np.linalg.norm(n, axis=1)
    n = n / np.where(length > 0, length, 1.0)[:, None]
    n[length == 0] = (0.0, 0.0, 1.0)
    # the camera sees whichever face points up
    return n * np.where(n[:, 2] < 0, -1.0, 1.0)[:, None]


def render_shaded(cloth: ClothState, scale: float = 0.002, frame: MaskFrame | None = None) -> GrayImage:
    """Top-down Lambertian render, one flat-shaded normal per grid cell.

    Overlapping layers are resolved with a z-buffer; the background is 0.
    """
    if cloth.nx < 2 or cloth.ny < 2:
        raise MetricError("render needs a 2-D cloth grid")
    frame = frame or frame_for_points(cloth.positions, scale)
    if frame.scale != scale:
        raise MetricError("frame scale does not match requested scale")
    shape = (frame.height_px, frame.width_px)
    img = np.zeros(shape)
    zbuf = np.full(shape, -np.inf)
    px = np.empty_like(cloth.positions)
    px[:, :2] = (cloth.positions[:, :2] - np.asarray(frame.origin)) / scale
    px[:, 2] = cloth.positions[:, 2]
    shade = np.clip(AMBIENT + DIFFUSE * np.clip(cell_normals(cloth) @ LIGHT, 0.0, None), 0.0, 1.0)
    for c, quad in enumerate(cloth.quads()):
        for tri in (quad[[0, 1, 2]], quad[[0, 2, 3]]):
            jj, ii, bary = raster_triangle(px[tri], shape)
            if not len(jj):
                continue
            z = bary @ px[tri, 2]
            top = z > zbuf[jj, ii]
            zbuf[jj[top], ii[top]] = z[top]
            img[jj[top], ii[top]] = shade[c]
    return GrayImage(img, scale, frame.origin)


def gaussian_kernel(size: int = 5, sigma: float = 1.4) -> np.ndarray:
    """Normalised 2-D Gaussian taps.

    Scalar ``math.exp`` per tap and a correctly rounded ``math.fsum``
    normalisation make the coefficients reproducible to the last bit.
    """
    c = (size - 1) / 2.0
    taps = [[math.exp(-((i - c) ** 2 + (j - c) ** 2) / (2.0 * sigma * sigma)) for i in range(size)]
            for j in range(size)]
    total = math.fsum(v for row in taps for v in row)
    return np.array([[v / total for v in row] for row in taps])


# smoothing weights normalized to unit sum: the response to a unit step is 1
SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 4.0
SOBEL_Y = SOBEL_X.T.copy()
TAN_22_5 = math.sqrt(2.0) - 1.0


def _correlate(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Edge-replicated correlation, accumulating taps in row-major order."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    pad = np.pad(img, ((ph, ph), (pw, pw)), mode="edge")
    h, w = img.shape
    out = np.zeros_like(img)
    for dy in range(kh):
        for dx in range(kw):
            out = out + kernel[dy, dx] * pad[dy : dy + h, dx : dx + w]
    return out


def sobel(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    gx = _correlate(img, SOBEL_X)
    gy = _correlate(img, SOBEL_Y)
    return gx, gy, np.sqrt(gx * gx + gy * gy)


def non_max_suppression(gx: np.ndarray, gy: np.ndarray, mag: np.ndarray) -> np.ndarray:
    """Keep local maxima across the gradient, quantised to 0/45/90/135 degrees.

    A pixel must beat its lower-index neighbour strictly and match or beat the
    higher-index one, so plateaus two pixels wide thin to one.
    """
    h, w = mag.shape
    pad = np.zeros((h + 2, w + 2))
    pad[1:-1, 1:-1] = mag

    def nb(di, dj):
        return pad[1 + dj : 1 + dj + h, 1 + di : 1 + di + w]

    ax, ay = np.abs(gx), np.abs(gy)
    horiz = ay <= TAN_22_5 * ax
    vert = ~horiz & (ax <= TAN_22_5 * ay)
    pos = gx * gy > 0
    lo = np.where(horiz, nb(-1, 0), np.where(vert, nb(0, -1), np.where(pos, nb(-1, -1), nb(1, -1))))
    hi = np.where(horiz, nb(1, 0), np.where(vert, nb(0, 1), np.where(pos, nb(1, 1), nb(-1, 1))))
    keep = (mag > 0) & (mag > lo) & (mag >= hi)
    return np.where(keep, mag, 0.0)


def canny(img, low: float = 0.1, high: float = 0.2) -> np.ndarray:
    """Canny edges as a boolean array.

    Gaussian blur (5x5, sigma 1.4), Sobel gradients scaled to intensity per
    pixel, non-maximum suppression, then hysteresis: weak pixels
    (>= ``low``) survive when 8-connected to a strong one (>= ``high``).
    """
    if not 0 <= low <= high:
        raise MetricError("need 0 <= low <= high")
    a = img.intensity if isinstance(img, GrayImage) else np.asarray(img, dtype=float)
    blurred = _correlate(a, gaussian_kernel())
    gx, gy, mag = sobel(blurred)
    nms = non_max_suppression(gx, gy, mag)
    weak = nms >= low
    weak &= nms > 0
    strong = weak & (nms >= high)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros(a.shape, dtype=bool)
    hit = np.zeros(n + 1, dtype=bool)
    hit[np.unique(labels[strong])] = True
    hit[0] = False
    return hit[labels]


def canny_mask(img: GrayImage, low: float = 0.1, high: float = 0.2) -> BinaryMask:
    return BinaryMask(canny(img, low, high), img.scale, img.origin)


def wrinkle_penalty(img: GrayImage, cloth_mask: BinaryMask, boundary_margin: int = 3,
                    low: float = 0.1, high: float = 0.2) -> float:
    """Edge pixels inside the eroded cloth mask, as a fraction of the mask area."""
    if img.intensity.shape != cloth_mask.bits.shape:
        raise MetricError("image and mask dimensions differ")
    area = cloth_mask.count
    if area == 0:
        raise MetricError("cloth mask is empty")
    edges = canny(img, low, high)
    return wrinkle_fraction(edges, cloth_mask.bits, boundary_margin)


def cloth_wrinkle_penalty(cloth: ClothState, scale: float = WR_SCALE, boundary_margin: int = 3) -> float:
    """Render ``cloth`` at the scoring resolution and return its wrinkle penalty."""
    mask = rasterize_mask(cloth, scale)
    return wrinkle_penalty(render_shaded(cloth, scale, mask), mask, boundary_margin)


def wrinkle_fraction(edges: np.ndarray, mask: np.ndarray, boundary_margin: int = 3) -> float:
    area = int(mask.sum())
    if area == 0:
        raise MetricError("cloth mask is empty")
    inner = mask
    if boundary_margin > 0:
        inner = ndimage.binary_erosion(mask, structure=np.ones((3, 3), bool), iterations=boundary_margin,
                                       border_value=0)
    return int(np.count_nonzero(edges & inner)) / area


class LiftClass(enum.Enum):
    PERFECT = "Perfect"
    HALF = "Half"
    FAIL = "Fail"


def finger_retained(report: EpisodeReport, finger: str) -> bool:
    if not report.events_of("grasp_ok", finger):
        return False
    hold_end = report.meta.get("hold_end", math.inf)
    for e in report.events_of("slip", finger):
        if e.t <= hold_end:
            return False
    frames = [f for f in report.frames if f.t <= hold_end]
    if frames and frames[-1].finger(finger).grasped == 0:
        return False
    return True


def classify_lift(report: EpisodeReport) -> LiftClass:
    """Both fingers kept their grasp through the hold: Perfect; one: Half; none: Fail.

    Only the event stream and grasp counts matter, never force magnitudes.
    """
    if report.task != "lift":
        raise MetricError(f"classify_lift needs a lift episode, got {report.task!r}")
    kept = sum(finger_retained(report, f) for f in FINGERS)
    return (LiftClass.FAIL, LiftClass.HALF, LiftClass.PERFECT)[kept]


def drag_offset(final_mask: BinaryMask, alignment_line: Line2D, resolution: float = 1e-3) -> float:
    """Mean signed distance of the leading edge past ``alignment_line``.

    The line normal points in the drag direction. For each pixel column along
    the line the pixel reaching furthest along the normal is the leading
    edge; its far boundary is measured. Rounded to ``resolution``.
    """
    if final_mask.count == 0:
        raise MetricError("final mask is empty")
    x, y = final_mask.pixel_centers()
    b = final_mask.bits
    pts = np.stack([x[b], y[b]], axis=1)
    n = np.asarray(alignment_line.normal)
    reach = 0.5 * final_mask.scale * (abs(n[0]) + abs(n[1]))
    dist = alignment_line.signed_distance(pts) + reach
    along = pts @ alignment_line.direction
    cols = np.floor(along / final_mask.scale + 1e-9).astype(np.int64)
    uniq, inv = np.unique(cols, return_inverse=True)
    lead = np.full(len(uniq), -np.inf)
    np.maximum.at(lead, np.asarray(inv).ravel(), dist)
    mean = float(lead.mean())
    return round(mean / resolution) * resolution


@dataclass
class PayloadResult:
    peak_force: float
    slipped: bool
    capped: bool
    trace: list[tuple[float, float]]
    mode: str


def payload_setup(cloth: ClothState, params: GripperParams, grip_force: float, finger: str = "right",
                  inset: float = 0.025):
    """Pin the cloth's first grid row and grasp the middle of the last row.

    Returns ``(gripper, pins, pull_axis)``; the tool y axis points away from
    the pinned edge and is the pull direction.
    """
    nx, ny = cloth.nx, cloth.ny
    pinned = np.arange(nx)
    far = cloth.positions[(ny - 1) * nx : ny * nx, :2]
    near = cloth.positions[:nx, :2]
    mid_far = far.mean(axis=0)
    axis = mid_far - near.mean(axis=0)
    axis = axis / np.linalg.norm(axis)
    yaw = math.atan2(-axis[0], axis[1])
    center = mid_far - inset * axis
    g = new_gripper(params, Pose(center[0], center[1], 0.0, 0.0, 0.0, yaw))
    if grip_force > 0:
        g = command_torque(g, finger, torque_for_force(grip_force, params))
        g, _ = attempt_sliding_grasp(g, finger, cloth)
    pins = pin_constraints(pinned, cloth.positions[pinned])
    return g, pins, np.array([axis[0], axis[1], 0.0])


def payload_pull(cloth: ClothState, gripper, pins, pull_axis, max_force: float = 30.0, finger: str = "right",
                 speed: float = 0.2, dt: float = 1e-3, max_time: float = 30.0) -> PayloadResult:
    """Retract the tool at constant speed and log grasp tension.

    Returns the peak tension seen before the first slip, or ``max_force``
    when tension reaches the cap (or the run ends) without any slip.
    """
    if not max_force > 0:
        raise MetricError("max_force must be positive")
    fs = gripper.finger(finger)
    mode = fs.mode.value
    if fs.grip_force <= 0 or not fs.holding:
        return PayloadResult(0.0, False, False, [], mode)
    gid = FINGERS.index(finger)
    g = gripper
    axis = np.asarray(pull_axis, dtype=float)
    start = g.tool_pose.position
    peak = 0.0
    trace = []
    n = int(round(max_time / dt))
    for k in range(1, n + 1):
        pos = start + axis * speed * k * dt
        g = replace(g, tool_pose=replace(g.tool_pose, x=float(pos[0]), y=float(pos[1]), z=float(pos[2])))
        cs = emit_constraints(g, cloth) + pins
        cloth, info = clothsim.step_detailed(cloth, dt, cs)
        gf = info.groups.get(gid)
        if gf is None:
            break
        if gf.broke or gf.slipped:
            return PayloadResult(peak, True, False, trace, mode)
        tension = gf.magnitude
        trace.append((k * dt, tension))
        peak = max(peak, tension)
        if peak >= max_force:
            return PayloadResult(max_force, False, True, trace, mode)
        g, _ = sync_sliding_offsets(g, cloth)
    return PayloadResult(max_force, False, False, trace, mode)
