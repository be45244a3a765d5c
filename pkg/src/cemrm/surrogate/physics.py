"""Pseudo-rigid-body finger chains, contact shapes and motion primitives.

Units are SI throughout (metres, newtons, seconds, radians). Design
quantities arrive in millimetres and are converted at the chain
constructor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..design_space import FingerDesign

YOUNGS_MODULUS = 2.0e6  # Pa
WEB_WIDTH = 0.010  # m
FLEXURE_THICKNESS = 0.004  # m
MM = 1e-3


# --------------------------------------------------------------------------
# scalar laws


def tendon_force(ds_current: float, ds_target: float, T_fixed: float) -> float:
    """Bang-bang tendon law: full force until the target retraction is passed."""
    if T_fixed <= 0:
        raise ValueError("T_fixed must be positive")
    return float(T_fixed) if ds_current <= ds_target else 0.0


def friction_contact(normal_force: float, mu: float, tangential_demand: float) -> float:
    """Coulomb clamp of a tangential demand to the friction cone."""
    if normal_force < 0 or mu < 0:
        raise ValueError("normal force and friction coefficient must be non-negative")
    cap = mu * normal_force
    return math.copysign(min(abs(tangential_demand), cap), tangential_demand)


def prismatic_frame_count(ds: float, accel: float, dt: float) -> int:
    """Frames needed to travel ``ds``: ``ceil(sqrt(2 ds / a) / dt)``."""
    if ds < 0 or accel <= 0 or dt <= 0:
        raise ValueError("need ds >= 0, accel > 0 and dt > 0")
    if ds == 0:
        return 0
    # tiny guard keeps exact quotients such as 0.2 / (1/3000) from rounding up
    return int(math.ceil(math.sqrt(2.0 * ds / accel) / dt - 1e-9))


def motion_profile(ds: float, accel: float, dt: float) -> np.ndarray:
    """Per-frame displacements of an accelerate-then-brake move over ``ds``.

    Velocity ramps up by a constant increment for the first half of the
    frames and down by the same increment for the second half, ending at
    rest. The increment is rescaled so the frames sum to ``ds`` exactly;
    a literal ``+-accel`` over the frame count above would only cover half
    the distance.
    """
    n = prismatic_frame_count(ds, accel, dt)
    if n == 0:
        return np.zeros(0)
    if n == 1:
        return np.array([float(ds)])
    k = np.arange(1, n + 1)
    shape = np.minimum(k, n - k).astype(np.float64)
    return ds * shape / (n * n // 4)


def profile_velocities(displacements: np.ndarray, dt: float) -> np.ndarray:
    return np.asarray(displacements) / dt


# --------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Disc:
    radius: float

    @property
    def bottom(self) -> float:
        return -self.radius

    @property
    def half_width(self) -> float:
        return self.radius

    def sdf(self, points: np.ndarray, origin) -> tuple[np.ndarray, np.ndarray]:
        """Signed distance and unit outward gradient at ``points`` ``(n, 2)``."""
        rel = points - np.asarray(origin)
        dist = np.hypot(rel[:, 0], rel[:, 1])
        safe = np.where(dist > 1e-15, dist, 1.0)
        grad = rel / safe[:, None]
        grad[dist <= 1e-15] = (0.0, 1.0)
        return dist - self.radius, grad


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise vertices relative to the object origin."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("polygon needs at least three 2D vertices")
        e = np.roll(v, -1, axis=0) - v
        nxt = np.roll(e, -1, axis=0)
        cross = e[:, 0] * nxt[:, 1] - e[:, 1] * nxt[:, 0]
        if not np.all(cross > 0):
            raise ValueError("polygon must be convex and counter-clockwise")
        normals = np.stack([e[:, 1], -e[:, 0]], axis=1)
        normals /= np.linalg.norm(normals, axis=1)[:, None]
        object.__setattr__(self, "_v", v)
        object.__setattr__(self, "_e", e)
        object.__setattr__(self, "_ee", np.sum(e * e, axis=1))
        object.__setattr__(self, "_n", normals)

    @property
    def bottom(self) -> float:
        return float(min(y for _, y in self.vertices))

    @property
    def half_width(self) -> float:
        return float(max(abs(x) for x, _ in self.vertices))

    def sdf(self, points: np.ndarray, origin) -> tuple[np.ndarray, np.ndarray]:
        v, e, normals = self._v, self._e, self._n
        p = points - np.asarray(origin)
        ap = p[:, None, :] - v[None, :, :]
        t = np.clip((ap[:, :, 0] * e[:, 0] + ap[:, :, 1] * e[:, 1]) / self._ee, 0.0, 1.0)
        diff = ap - t[:, :, None] * e[None, :, :]
        d2 = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2
        j = np.argmin(d2, axis=1)
        rows = np.arange(len(p))
        dist = np.sqrt(d2[rows, j])
        side = ap[:, :, 0] * normals[:, 0] + ap[:, :, 1] * normals[:, 1]
        smax = side.max(axis=1)
        inside = smax <= 0.0
        out = ~inside & (dist > 1e-15)
        safe = np.where(out, dist, 1.0)
        grad = np.where(out[:, None], diff[rows, j] / safe[:, None], normals[np.argmax(side, axis=1)])
        return np.where(inside, smax, dist), grad


class Ground:
    """Half-plane ``y >= 0``."""

    def sdf(self, points: np.ndarray, origin=None) -> tuple[np.ndarray, np.ndarray]:
        grad = np.zeros_like(points)
        grad[:, 1] = 1.0
        return points[:, 1].copy(), grad


# --------------------------------------------------------------------------
# finger chains


def joint_stiffness(l_fle: float, E: float = YOUNGS_MODULUS, width: float = WEB_WIDTH,
                    thickness: float = FLEXURE_THICKNESS) -> float:
    """Cantilever torsional stiffness ``E w t^3 / (12 l)`` of a flexure (SI)."""
    if l_fle <= 0:
        raise ValueError("flexure length must be positive")
    return E * width * thickness**3 / (12.0 * l_fle)


def moment_arm(h: float, h_ten: float, thickness: float = FLEXURE_THICKNESS) -> float:
    """Tendon moment arm ``h - h_ten + t/2`` (all metres)."""
    return h - h_ten + 0.5 * thickness


@dataclass
class FingerChain:
    """Planar serial chain of ``S`` flexure joints and rigid blocks.

    Link ``i`` starts at joint ``i`` with a flexure of length ``l_fle`` and
    continues with a block of length ``l_seg``. ``side`` is +1 when the
    inward direction is world +x and -1 when mirrored. Positive joint angles
    curl the finger inward.
    """

    base: np.ndarray
    base_angle: float
    side: int
    l_seg: float
    l_fle: float
    stiffness: np.ndarray
    arms: np.ndarray
    radii: np.ndarray
    circles_per_block: int = 3

    @classmethod
    def from_design(cls, finger: FingerDesign, base, base_angle: float, side: int,
                    E: float = YOUNGS_MODULUS, width: float = WEB_WIDTH,
                    thickness: float = FLEXURE_THICKNESS, circles_per_block: int = 3) -> "FingerChain":
        h = np.asarray(finger.h) * MM
        h_ten = np.asarray(finger.h_ten) * MM
        k = joint_stiffness(finger.l_fle * MM, E, width, thickness)
        return cls(
            base=np.asarray(base, dtype=np.float64),
            base_angle=float(base_angle),
            side=int(side),
            l_seg=finger.l_seg * MM,
            l_fle=finger.l_fle * MM,
            stiffness=np.full(len(h), k),
            arms=moment_arm(h, h_ten, thickness),
            radii=0.5 * h,
            circles_per_block=circles_per_block,
        )

    @property
    def segments(self) -> int:
        return len(self.stiffness)

    @property
    def link_length(self) -> float:
        return self.l_seg + self.l_fle

    def tendon_displacement(self, theta) -> float:
        return float(np.dot(self.arms, theta))

    def spring_energy(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        return float(0.5 * np.sum(self.stiffness * theta**2))

    def joint_positions(self, theta) -> np.ndarray:
        """Joint ``0..S-1`` positions followed by the fingertip, shape ``(S+1, 2)``."""
        return ChainSet([self]).kinematics(np.atleast_2d(theta))[0][0]

    def circle_centers(self, theta) -> np.ndarray:
        return ChainSet([self]).kinematics(np.atleast_2d(theta))[1][0].reshape(-1, 2)


class ChainSet:
    """Several chains with equal segment counts, stacked for batched solves."""

    def __init__(self, chains: list[FingerChain]):
        if not chains:
            raise ValueError("need at least one chain")
        S = chains[0].segments
        nc = chains[0].circles_per_block
        if any(c.segments != S or c.circles_per_block != nc for c in chains):
            raise ValueError("chains must share segment and circle counts")
        self.chains = chains
        self.S = S
        self.nc = nc
        self.base = np.stack([c.base for c in chains])
        self.alpha0 = np.array([c.base_angle for c in chains])
        self.side = np.array([float(c.side) for c in chains])
        self.l_seg = np.array([c.l_seg for c in chains])
        self.l_fle = np.array([c.l_fle for c in chains])
        self.k = np.stack([c.stiffness for c in chains])
        self.r = np.stack([c.arms for c in chains])
        self.rad = np.repeat(np.stack([c.radii for c in chains])[:, :, None], nc, axis=2)
        self.t = (np.arange(nc) + 0.5) / nc
        self.lower = np.tril(np.ones((S, S)))  # [i, m] = 1 where joint m drives link i

    def __len__(self) -> int:
        return len(self.chains)

    def set_bases(self, base: np.ndarray, alpha0: np.ndarray | None = None) -> None:
        self.base = np.asarray(base, dtype=np.float64)
        if alpha0 is not None:
            self.alpha0 = np.asarray(alpha0, dtype=np.float64)

    def kinematics(self, theta: np.ndarray):
        """Joint positions ``(C, S+1, 2)``, circle centres ``(C, S, nc, 2)`` and link directions."""
        alpha = self.alpha0[:, None] + np.cumsum(theta, axis=1)
        u = np.stack([self.side[:, None] * np.sin(alpha), -np.cos(alpha)], axis=2)
        L = (self.l_seg + self.l_fle)[:, None, None]
        steps = L * u
        joints = np.concatenate([self.base[:, None, :], self.base[:, None, :] + np.cumsum(steps, axis=1)], axis=1)
        offset = self.l_fle[:, None] + self.t[None, :] * self.l_seg[:, None]  # (C, nc)
        centers = joints[:, :-1, None, :] + offset[:, None, :, None] * u[:, :, None, :]
        return joints, centers, u

    def circle_jacobian(self, joints: np.ndarray, centers: np.ndarray) -> np.ndarray:
        """d(centre)/d(theta) with shape ``(C, S, nc, S, 2)``."""
        rel = centers[:, :, :, None, :] - joints[:, None, None, :-1, :]
        rot = np.stack([-rel[..., 1], rel[..., 0]], axis=-1)
        mask = self.lower[None, :, None, :, None]
        return self.side[:, None, None, None, None] * rot * mask

    def tendon_displacement(self, theta: np.ndarray) -> np.ndarray:
        return np.sum(self.r * theta, axis=1)


@dataclass(frozen=True)
class Obstacle:
    shape: object
    origin: tuple[float, float] = (0.0, 0.0)


@dataclass
class Equilibrium:
    theta: np.ndarray
    residual: float
    iterations: int
    converged: bool
    # per-chain contact summaries against the first obstacle (the object)
    normal: np.ndarray  # total normal force magnitude per chain (N)
    force_on_object: np.ndarray  # (C, 2) net force applied to the object by each chain
    min_gap: float  # smallest surface gap to the object (m), negative when penetrating


def _contacts(cs: ChainSet, theta, obstacles):
    joints, centers, _ = cs.kinematics(theta)
    flat = centers.reshape(-1, 2)
    rad = cs.rad.reshape(-1)
    out = []
    for ob in obstacles:
        d, grad = ob.shape.sdf(flat, ob.origin)
        out.append((d - rad, np.maximum(rad - d, 0.0), grad))
    return joints, centers, out


class _Potential:
    """Energy whose gradient is the joint torque imbalance."""

    def __init__(self, cs, theta_old, tension, damping, obstacles, k_c):
        self.cs, self.theta_old, self.tension = cs, theta_old, tension
        self.damping, self.obstacles, self.k_c = damping, obstacles, k_c
        self.C = len(cs)

    def energy(self, theta, contacts):
        cs = self.cs
        e = 0.5 * np.sum(cs.k * theta**2, axis=1)
        e += 0.5 * self.damping * np.sum((theta - self.theta_old) ** 2, axis=1)
        e -= self.tension * np.sum(cs.r * theta, axis=1)
        for _, pen, _ in contacts:
            e += 0.5 * self.k_c * np.sum(pen.reshape(self.C, -1) ** 2, axis=1)
        return e

    def gradient(self, theta, joints, centers, contacts, hessian=False):
        cs, C, S = self.cs, self.C, self.cs.S
        g = cs.k * theta + self.damping * (theta - self.theta_old) - self.tension[:, None] * cs.r
        H = None
        if hessian:
            H = np.zeros((C, S, S))
            H[:, np.arange(S), np.arange(S)] = cs.k + self.damping
        J = None
        for _, pen, grad in contacts:
            pen = pen.reshape(C, -1)
            if not pen.any():
                continue
            if J is None:
                J = cs.circle_jacobian(joints, centers).reshape(C, S * cs.nc, S, 2)
            gj = np.einsum("cnmd,cnd->cnm", J, grad.reshape(C, -1, 2))
            g -= self.k_c * np.einsum("cn,cnm->cm", pen, gj)
            if hessian:
                active = (pen > 0.0).astype(np.float64)
                H += self.k_c * np.einsum("cn,cnm,cnl->cml", active, gj, gj)
        return g, H


def solve_equilibrium(
    cs: ChainSet,
    theta_old: np.ndarray,
    tension: np.ndarray,
    obstacles: list[Obstacle],
    damping: float,
    contact_stiffness: float = 1e4,
    tol: float = 1e-6,
    max_iter: int = 200,
    theta_init: np.ndarray | None = None,
    max_step: float = 0.1,
) -> Equilibrium:
    """Torque balance of every chain against fixed obstacles.

    Solves ``k theta + damping (theta - theta_old) - T r - tau_contact = 0``
    per joint, where ``damping`` is the viscous coefficient divided by the
    step length and contacts are penalty springs on the block circles. The
    residual is the gradient of a potential, so Gauss-Newton steps with a
    backtracking line search decrease it monotonically. Each iteration moves
    a joint by at most ``max_step`` radians so fingers cannot tunnel through
    thin objects. ``residual`` is the largest absolute joint torque
    imbalance in N m.
    """
    C = theta_old.shape[0]
    pot = _Potential(cs, theta_old, np.asarray(tension, dtype=np.float64), damping, obstacles,
                     contact_stiffness)
    theta = np.array(theta_old if theta_init is None else theta_init, dtype=np.float64)
    joints, centers, contacts = _contacts(cs, theta, obstacles)
    energy = pot.energy(theta, contacts)
    residual = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        g, H = pot.gradient(theta, joints, centers, contacts, hessian=True)
        residual = float(np.max(np.abs(g)))
        if residual < tol:
            break
        step = np.linalg.solve(H, g[:, :, None])[:, :, 0]
        big = np.max(np.abs(step), axis=1)
        step *= np.minimum(1.0, max_step / np.maximum(big, 1e-300))[:, None]
        slope = np.sum(g * step, axis=1)
        scale = np.ones(C)
        for _ in range(30):
            trial = theta - scale[:, None] * step
            t_joints, t_centers, t_contacts = _contacts(cs, trial, obstacles)
            t_energy = pot.energy(trial, t_contacts)
            ok = t_energy <= energy - 1e-4 * scale * slope + 1e-15 * (1.0 + np.abs(energy))
            if ok.all():
                break
            scale = np.where(ok, scale, 0.5 * scale)
        theta, joints, centers, contacts, energy = trial, t_joints, t_centers, t_contacts, t_energy
    else:
        g, _ = pot.gradient(theta, joints, centers, contacts)
        residual = float(np.max(np.abs(g)))

    if contacts:
        gap, pen, grad = contacts[0]
        pen = pen.reshape(C, -1)
        force = (-contact_stiffness * pen[:, :, None] * grad.reshape(C, -1, 2)).sum(axis=1)
        normal = contact_stiffness * pen.sum(axis=1)
        min_gap = float(gap.min())
    else:
        normal = np.zeros(C)
        force = np.zeros((C, 2))
        min_gap = math.inf
    return Equilibrium(theta, residual, it, residual < tol, normal, force, min_gap)
