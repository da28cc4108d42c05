"""Mass-spring cloth on a table plane.

Particles live on an ``nx`` x ``ny`` grid (index ``j * nx + i``, ``i`` along the
cloth width). Structural, shear and bend springs connect them. Stepping is
semi-implicit Euler: forces from the current state update velocities, the new
velocities move the particles, then grasp constraints and table contact are
resolved. Everything is plain float64 numpy with fixed operation order, so a
step is a pure, bitwise-reproducible function of its inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import math

import numpy as np

if TYPE_CHECKING:
    from .gripper import GraspConstraintSet

GRAVITY = 9.81
PENETRATION_TOL = 1e-4
DT_MAX = 5e-3

# constraint modes shared with the gripper module
MODE_LOW = 0
MODE_HIGH = 1
MODE_PIN = 2


class ClothError(ValueError):
    pass


class SimulationDiverged(RuntimeError):
    def __init__(self, particle: int, time: float):
        super().__init__(f"simulation diverged: particle {particle} non-finite at t={time:.4f}s")
        self.particle = particle
        self.time = time


@dataclass(frozen=True)
class ClothSpec:
    width_m: float = 0.3
    height_m: float = 0.3
    nx: int = 16
    ny: int = 16
    mass_per_area: float = 0.2
    stiffness_structural: float = 20.0
    stiffness_shear: float = 4.0
    stiffness_bend: float = 0.2
    damping: float = 0.004
    table_friction_mu: float = 0.4
    rest_thickness: float = 0.001
    air_drag: float = 2e-4

    def validate(self) -> None:
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ClothError("nx and ny must be integers")
        if self.nx < 2 or self.ny < 2:
            raise ClothError(f"grid must be at least 2x2, got nx={self.nx}, ny={self.ny}")
        for name in (
            "width_m",
            "height_m",
            "mass_per_area",
            "stiffness_structural",
            "stiffness_shear",
            "stiffness_bend",
            "damping",
            "table_friction_mu",
            "rest_thickness",
        ):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ClothError(f"{name} must be strictly positive, got {v!r}")
        if not (np.isfinite(self.air_drag) and self.air_drag >= 0):
            raise ClothError(f"air_drag must be non-negative, got {self.air_drag!r}")


@dataclass(frozen=True)
class Springs:
    i: np.ndarray
    j: np.ndarray
    rest: np.ndarray
    k: np.ndarray

    def __len__(self) -> int:
        return len(self.i)

    @classmethod
    def empty(cls) -> "Springs":
        return cls(np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0))


@dataclass(frozen=True)
class ClothState:
    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray
    springs: Springs
    nx: int
    ny: int
    damping: float = 0.004
    table_mu: float = 0.4
    air_drag: float = 2e-4
    rest_thickness: float = 0.001
    time: float = 0.0

    def __post_init__(self):
        n = len(self.positions)
        if self.velocities.shape != (n, 3) or self.positions.shape != (n, 3):
            raise ClothError("positions and velocities must both be (n, 3)")
        if len(self.masses) != n:
            raise ClothError("one mass per particle required")
        if self.nx * self.ny != n:
            raise ClothError(f"nx*ny={self.nx * self.ny} does not match {n} particles")
        s = self.springs
        if len(s) and (s.i.min() < 0 or s.j.max() >= n or s.j.min() < 0 or s.i.max() >= n or np.any(s.i == s.j)):
            raise ClothError("spring references an invalid particle pair")

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def patch_half(self) -> float:
        """Half the grid spacing: each particle stands for the cloth within this distance."""
        if not len(self.springs):
            return 0.0
        return 0.5 * float(self.springs.rest.min())

    def quads(self) -> np.ndarray:
        """Grid cells as (ncell, 4) particle indices in counter-clockwise order."""
        if self.nx < 2 or self.ny < 2:
            return np.zeros((0, 4), dtype=int)
        jj, ii = np.meshgrid(np.arange(self.ny - 1), np.arange(self.nx - 1), indexing="ij")
        a = (jj * self.nx + ii).ravel()
        return np.stack([a, a + 1, a + 1 + self.nx, a + self.nx], axis=1)

    def with_positions(self, positions, velocities=None) -> "ClothState":
        positions = np.array(positions, dtype=float)
        if velocities is None:
            velocities = np.zeros_like(positions)
        return replace(self, positions=positions, velocities=np.array(velocities, dtype=float))


def _grid_springs(nx: int, ny: int, dx: float, dy: float, spec: ClothSpec) -> Springs:
    idx = np.arange(nx * ny).reshape(ny, nx)
    groups = []

    def add(a, b, rest, k):
        a = a.ravel()
        b = b.ravel()
        groups.append((a, b, np.full(a.shape, rest), np.full(a.shape, k)))

    diag = float(np.hypot(dx, dy))
    add(idx[:, :-1], idx[:, 1:], dx, spec.stiffness_structural)
    add(idx[:-1, :], idx[1:, :], dy, spec.stiffness_structural)
    add(idx[:-1, :-1], idx[1:, 1:], diag, spec.stiffness_shear)
    add(idx[:-1, 1:], idx[1:, :-1], diag, spec.stiffness_shear)
    if nx > 2:
        add(idx[:, :-2], idx[:, 2:], 2.0 * dx, spec.stiffness_bend)
    if ny > 2:
        add(idx[:-2, :], idx[2:, :], 2.0 * dy, spec.stiffness_bend)
    i, j, rest, k = (np.concatenate(parts) for parts in zip(*groups))
    return Springs(i.astype(int), j.astype(int), rest.astype(float), k.astype(float))


def grid_points(spec: ClothSpec, origin=(0.0, 0.0), yaw: float = 0.0, z: float | None = None) -> np.ndarray:
    """Flat grid positions centred on ``origin`` and rotated by ``yaw``."""
    dx = spec.width_m / (spec.nx - 1)
    dy = spec.height_m / (spec.ny - 1)
    u = np.arange(spec.nx) * dx - 0.5 * spec.width_m
    v = np.arange(spec.ny) * dy - 0.5 * spec.height_m
    vv, uu = np.meshgrid(v, u, indexing="ij")
    c, s = np.cos(yaw), np.sin(yaw)
    pts = np.empty((spec.nx * spec.ny, 3))
    pts[:, 0] = origin[0] + c * uu.ravel() - s * vv.ravel()
    pts[:, 1] = origin[1] + s * uu.ravel() + c * vv.ravel()
    pts[:, 2] = spec.rest_thickness if z is None else z
    return pts


def build_cloth(spec: ClothSpec, origin=(0.0, 0.0), yaw: float = 0.0) -> ClothState:
    """Flat cloth at rest, every spring exactly at rest length."""
    spec.validate()
    nx, ny = int(spec.nx), int(spec.ny)
    dx = spec.width_m / (nx - 1)
    dy = spec.height_m / (ny - 1)
    pos = grid_points(spec, origin, yaw)
    n = nx * ny
    masses = np.full(n, spec.width_m * spec.height_m * spec.mass_per_area / n)
    return ClothState(
        positions=pos,
        velocities=np.zeros_like(pos),
        masses=masses,
        springs=_grid_springs(nx, ny, dx, dy, spec),
        nx=nx,
        ny=ny,
        damping=spec.damping,
        table_mu=spec.table_friction_mu,
        air_drag=spec.air_drag,
        rest_thickness=spec.rest_thickness,
    )


def add_ridge(state: ClothState, amplitude: float, width: float, axis: int = 0, center=0.5) -> ClothState:
    """Bunch a flat grid cloth into raised-cosine ridges without stretching it.

    The height profile varies along grid ``axis`` (0: along i, 1: along j) and
    peaks at fraction ``center`` of the cloth; a sequence of fractions gives
    one ridge at each (where ridges overlap, the higher one wins). Grid lines
    are placed so that neighbours stay exactly one spacing apart along the
    profile; the cloth on either side is drawn in towards the ridges.
    """
    if amplitude < 0 or width <= 0:
        raise ClothError("ridge needs amplitude >= 0 and width > 0")
    if state.nx < 2 or state.ny < 2:
        raise ClothError("ridge needs a 2-D grid")
    centers = np.atleast_1d(np.asarray(center, dtype=float))
    if centers.size == 0 or np.any((centers < 0) | (centers > 1)):
        raise ClothError("ridge centers must lie in [0, 1]")
    grid = state.positions.reshape(state.ny, state.nx, 3)
    if axis == 1:
        grid = grid.transpose(1, 0, 2)
    elif axis != 0:
        raise ClothError("axis must be 0 or 1")
    n = grid.shape[1]
    along = grid[:, -1, :2] - grid[:, 0, :2]
    e = along.mean(axis=0)
    e = e / np.linalg.norm(e)
    spacing = float(np.mean(np.linalg.norm(np.diff(grid[:, :, :2], axis=1), axis=2)))
    u = np.arange(n) * spacing
    peaks = centers * u[-1]
    uc = float(peaks.mean())

    def profile(x):
        d = np.abs(x + uc - peaks)
        bumps = np.where(d < 0.5 * width, 0.5 * amplitude * (1.0 + np.cos(2.0 * np.pi * d / width)), 0.0)
        return float(bumps.max())

    def next_x(x0, sign):
        z0 = profile(x0)
        lo, hi = 0.0, spacing
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            x = x0 + sign * mid
            if math.hypot(mid, profile(x) - z0) < spacing:
                lo = mid
            else:
                hi = mid
        return x0 + sign * 0.5 * (lo + hi)

    xs = np.empty(n)
    k0 = int(np.argmin(np.abs(u - uc)))
    xs[k0] = u[k0] - uc
    for k in range(k0 + 1, n):
        xs[k] = next_x(xs[k - 1], 1.0)
    for k in range(k0 - 1, -1, -1):
        xs[k] = next_x(xs[k + 1], -1.0)
    zs = np.array([profile(x) for x in xs])
    new = grid.copy()
    new[:, :, :2] += ((uc + xs) - u)[None, :, None] * e[None, None, :]
    new[:, :, 2] += zs[None, :]
    if axis == 1:
        new = new.transpose(1, 0, 2)
    pos = np.ascontiguousarray(new).reshape(-1, 3)
    return replace(state, positions=pos, velocities=np.zeros_like(pos))


def single_particle(mass: float, position, air_drag: float = 0.0, table_mu: float = 0.4) -> ClothState:
    """Degenerate spring-free state, used for ballistic checks."""
    pos = np.array([position], dtype=float)
    return ClothState(
        positions=pos,
        velocities=np.zeros_like(pos),
        masses=np.array([float(mass)]),
        springs=Springs.empty(),
        nx=1,
        ny=1,
        air_drag=air_drag,
        table_mu=table_mu,
    )


@dataclass
class GroupForce:
    """Constraint outcome for one constraint group (one finger, or the pins)."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    needed_axial: float = 0.0
    slipped: bool = False
    broke: bool = False
    count: int = 0

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.force))


@dataclass
class StepInfo:
    groups: dict[int, GroupForce] = field(default_factory=dict)


def internal_forces(state: ClothState) -> np.ndarray:
    x, v, m = state.positions, state.velocities, state.masses
    n = len(x)
    f = np.zeros((n, 3))
    f[:, 2] -= m * GRAVITY
    if state.air_drag:
        f -= state.air_drag * v
    s = state.springs
    if len(s):
        d = x[s.j] - x[s.i]
        length = np.sqrt((d * d).sum(axis=1))
        u = d / np.maximum(length, 1e-12)[:, None]
        rel = ((v[s.j] - v[s.i]) * u).sum(axis=1)
        mag = s.k * (length - s.rest) + state.damping * rel
        fs = u * mag[:, None]
        for c in range(3):
            f[:, c] += np.bincount(s.i, weights=fs[:, c], minlength=n)
            f[:, c] -= np.bincount(s.j, weights=fs[:, c], minlength=n)
    return f


def step_detailed(state: ClothState, dt: float, constraints: "GraspConstraintSet | None" = None) -> tuple[ClothState, StepInfo]:
    if not (0.0 < dt <= DT_MAX):
        raise ClothError(f"dt must be in (0, {DT_MAX}], got {dt!r}")
    x0, v0, m = state.positions, state.velocities, state.masses
    n = len(x0)
    f = internal_forces(state)
    v_free = v0 + dt * f / m[:, None]
    x_free = x0 + dt * v_free
    x_new = x_free.copy()
    v_new = v_free.copy()
    info = StepInfo()
    held = np.zeros(n, dtype=bool)

    if constraints is not None and len(constraints):
        idx = constraints.indices
        if idx.min() < 0 or idx.max() >= n:
            raise ClothError("constraint references an invalid particle index")
        for g in np.unique(constraints.groups):
            sel = np.nonzero(constraints.groups == g)[0]
            _apply_group(int(g), sel, constraints, dt, x0, v_free, m, x_new, v_new, held, info)

    free = ~held
    below = free & (x_new[:, 2] < 0.0)
    if below.any():
        vz = v_new[below, 2]
        dvn = np.maximum(-vz, 0.0)
        x_new[below, 2] = 0.0
        v_new[below, 2] = np.maximum(vz, 0.0)
        vt = v_new[below, :2]
        speed = np.sqrt((vt * vt).sum(axis=1))
        cut = state.table_mu * dvn
        scale = np.where(speed > cut, 1.0 - cut / np.maximum(speed, 1e-300), 0.0)
        v_new[below, :2] = vt * scale[:, None]
        # move with the post-friction velocity so static friction really holds
        x_new[below, :2] = x0[below, :2] + dt * v_new[below, :2]

    bad = ~np.isfinite(x_new).all(axis=1)
    if bad.any():
        raise SimulationDiverged(int(np.argmax(bad)), state.time + dt)
    return replace(state, positions=x_new, velocities=v_new, time=state.time + dt), info


def _apply_group(g, sel, cs, dt, x0, v_free, m, x_new, v_new, held, info):
    idx = cs.indices[sel]
    targets = cs.targets[sel]
    mode = int(cs.modes[sel[0]])
    mm = m[idx][:, None]
    out = GroupForce(count=len(idx))
    info.groups[g] = out

    v_stick = (targets - x0[idx]) / dt
    if mode in (MODE_HIGH, MODE_PIN):
        forces = mm * (v_stick - v_free[idx]) / dt
        total = forces.sum(axis=0)
        out.force = total
        cap = float(cs.caps[sel[0]])
        if mode == MODE_HIGH and np.linalg.norm(total) > cap:
            out.broke = True
            return
        x_new[idx] = targets
        v_new[idx] = v_stick
        held[idx] = True
        return

    # low friction: rigid normal to the slide axis, capped friction along it
    a = cs.slide_axes[sel]
    vf = v_free[idx]
    vs_ax = (v_stick * a).sum(axis=1)
    vf_ax = (vf * a).sum(axis=1)
    perp_stick = v_stick - vs_ax[:, None] * a
    need_ax = m[idx] * (vs_ax - vf_ax) / dt
    total_ax = float(need_ax.sum())
    cap = float(cs.caps[sel[0]])
    out.needed_axial = total_ax
    if abs(total_ax) <= cap:
        v_ax = vs_ax
        f_ax = need_ax
    else:
        out.slipped = True
        share = np.copysign(cap, total_ax) / len(idx)
        f_ax = np.full(len(idx), share)
        v_ax = vf_ax + dt * f_ax / m[idx]
    v = perp_stick + v_ax[:, None] * a
    f_perp = mm * (perp_stick - (vf - vf_ax[:, None] * a)) / dt
    out.force = (f_perp + f_ax[:, None] * a).sum(axis=0)
    v_new[idx] = v
    x_new[idx] = x0[idx] + dt * v
    held[idx] = True


def step(state: ClothState, dt: float = 1e-3, constraints: "GraspConstraintSet | None" = None) -> ClothState:
    return step_detailed(state, dt, constraints)[0]


def kinetic_energy(state: ClothState) -> float:
    v = state.velocities
    return float(0.5 * np.dot(state.masses, (v * v).sum(axis=1)))


def elastic_energy(state: ClothState) -> float:
    s = state.springs
    if not len(s):
        return 0.0
    d = state.positions[s.j] - state.positions[s.i]
    stretch = np.sqrt((d * d).sum(axis=1)) - s.rest
    return float(0.5 * np.dot(s.k, stretch * stretch))


def potential_energy(state: ClothState) -> float:
    return float(GRAVITY * np.dot(state.masses, state.positions[:, 2]))


def total_energy(state: ClothState) -> tuple[float, float]:
    """(kinetic, elastic) energy in joules."""
    return kinetic_energy(state), elastic_energy(state)


def settle(
    state: ClothState,
    max_time: float = 2.0,
    kinetic_tol: float = 1e-7,
    dt: float = 1e-3,
    constraints=None,
) -> tuple[ClothState, bool]:
    """Step until kinetic energy drops below ``kinetic_tol`` or ``max_time`` passes.

    Returns the final state and ``True`` when the energy criterion terminated
    the loop. At least one step is always taken.
    """
    if not kinetic_tol > 0:
        raise ClothError("kinetic_tol must be positive")
    t_end = state.time + max_time
    while True:
        state = step(state, dt, constraints)
        if kinetic_energy(state) < kinetic_tol:
            return state, True
        if state.time >= t_end - 0.5 * dt:
            return state, False


def dump_positions_csv(frames, path) -> None:
    """Write ``(time, state)`` pairs as long-format CSV for debugging."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "particle", "x", "y", "z"])
        for t, st in frames:
            for k, p in enumerate(st.positions):
                w.writerow([f"{t:.6f}", k, repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))])
