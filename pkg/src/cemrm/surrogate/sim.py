"""Deterministic planar grasp rollout.

The hand is two jaws on a prismatic axis: the thumb chain on the left jaw
and the index and middle chains on the right. Fingers hang downward from
the wrist and curl inward under tendon tension. Joint angles follow a
damped quasi-static torque balance each step; the object is locked
horizontally to the hand and moves vertically under gravity, penalty
contact forces and a Coulomb friction budget supplied by the squeeze.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..design_space import FINGERS, DesignVector, validate
from ..objective import EvalOutcome
from .bundle import SimObject, TeleopRecord
from .physics import (
    ChainSet, FingerChain, Ground, Obstacle, motion_profile, solve_equilibrium, tendon_force,
)

SIDES = {"thumb": +1, "index": -1, "middle": -1}


@dataclass(frozen=True)
class PhaseConfig:
    fps: float = 3000.0
    grasp_frames: int = 800
    hold_frames: int = 150
    test_frames: int = 700
    grasp_step: int = 50
    dynamic_step: int = 5
    prismatic_accel: float = 4.0
    lift_accel: float = 2.0
    jaw_travel: float = 0.08
    T_fixed: float = 30.0
    youngs_modulus: float = 2.0e6
    web_width: float = 0.010
    flexure_thickness: float = 0.004
    joint_damping: float = 0.2  # N m s / rad
    contact_stiffness: float = 3e4
    sag_stiffness: float = 200.0  # 1/m; tangential stiffness per newton of squeeze
    gravity: float = 9.81
    impulse_range: tuple[float, float] = (0.05, 0.2)
    max_iterations: int = 200
    tolerance: float = 1e-6
    contact_tolerance: float = 5e-4
    circles_per_block: int = 3
    refresh_frames: int = 50  # finger re-solve interval while the object is held
    move_tolerance: float = 2e-4  # m of object slip that forces a re-solve

    def __post_init__(self):
        if self.T_fixed < 0:
            raise ValueError("T_fixed must be non-negative")
        if self.fps <= 0 or self.grasp_step < 1 or self.dynamic_step < 1:
            raise ValueError("fps and step sizes must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    def to_dict(self) -> dict:
        out = asdict(self)
        out["impulse_range"] = list(self.impulse_range)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PhaseConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown phase settings: {sorted(unknown)}")
        data = dict(data)
        if "impulse_range" in data:
            data["impulse_range"] = tuple(data["impulse_range"])
        return cls(**data)


@dataclass
class RolloutReport:
    outcome: EvalOutcome
    residuals: list[float] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    impulse: float = 0.0
    theta: np.ndarray | None = None


def build_chains(design: DesignVector, phase: PhaseConfig) -> ChainSet:
    chains = [
        FingerChain.from_design(
            finger, np.zeros(2), 0.0, SIDES[name], phase.youngs_modulus, phase.web_width,
            phase.flexure_thickness, phase.circles_per_block,
        )
        for name, finger in zip(FINGERS, design.fingers())
    ]
    return ChainSet(chains)


def place_chains(cs: ChainSet, design: DesignVector, wrist, yaw: float, gap: float) -> None:
    """Position chain bases for a wrist pose and jaw gap (metres)."""
    R = design.R * 1e-3
    c, s = math.cos(yaw), math.sin(yaw)
    bases, alphas = [], []
    for name, finger in zip(FINGERS, design.fingers()):
        side = SIDES[name]
        off = -side * (0.5 * gap + R * (1.0 - math.cos(finger.phi)))
        bases.append((wrist[0] + c * off, wrist[1] + s * off))
        alphas.append(finger.psi + side * yaw)
    cs.set_bases(np.array(bases), np.array(alphas))


def impulse_for(seed, phase: PhaseConfig) -> float:
    lo, hi = phase.impulse_range
    return float(np.random.default_rng(seed).uniform(lo, hi))


def _failure(record: TeleopRecord, reason: str) -> EvalOutcome:
    # an unsolvable step counts as a dropped object
    return EvalOutcome(
        dq=(0.0, -record.lift_height), ground_collision=True, design_valid=True,
        contact_at_end=False, force_feedback_nonzero=False, lifted=False, diagnostic=reason,
    )


def simulate(
    design: DesignVector,
    record: TeleopRecord,
    obj: SimObject,
    phase: PhaseConfig = PhaseConfig(),
    seed=0,
    test: bool = False,
    impulse: float | None = None,
    trace: list | None = None,
) -> RolloutReport:
    """Run grasp, lift and hold; in test mode add the disturbance phase.

    Returns the outcome together with per-solve torque residuals so callers
    can audit the quasi-static balance.
    """
    validity = validate(design)
    if not validity:
        return RolloutReport(EvalOutcome.invalid("; ".join(validity.reasons)))

    dt = phase.dt
    geom = obj.geometry
    origin = np.array([0.0, -geom.bottom])
    gx, gy, yaw = record.grasp_pose
    wrist = origin + np.array([gx, gy])
    cs = build_chains(design, phase)
    targets = np.array([record.tendon_targets[f] for f in FINGERS])
    side = cs.side
    report = RolloutReport(EvalOutcome())
    k_c = phase.contact_stiffness

    def tensions(theta, active=True):
        if not active or phase.T_fixed == 0:
            return np.zeros(len(cs))
        ds = cs.tendon_displacement(theta)
        # a zero target leaves that finger's motor idle
        return np.array([
            tendon_force(ds[i], targets[i], phase.T_fixed) if targets[i] > 0 else 0.0
            for i in range(len(cs))
        ])

    def solve(theta, tension, obstacles, frames):
        eq = solve_equilibrium(
            cs, theta, tension, obstacles, damping=phase.joint_damping / (frames * dt),
            contact_stiffness=k_c, tol=phase.tolerance, max_iter=phase.max_iterations,
        )
        report.residuals.append(eq.residual)
        report.iterations.append(eq.iterations)
        return eq

    # --- grasp: close the jaws, then pull the tendons; the object rests on the ground
    closing = motion_profile(record.prismatic_displacement, phase.prismatic_accel, dt)
    closed = np.concatenate([[0.0], np.cumsum(closing)])
    n_close = len(closing)
    theta = np.zeros((len(cs), cs.S))
    ground = Obstacle(Ground())
    eq = None
    frame = 0
    while frame < phase.grasp_frames:
        n = min(phase.grasp_step, phase.grasp_frames - frame)
        frame += n
        gap = phase.jaw_travel - closed[min(frame, n_close)]
        place_chains(cs, design, wrist, yaw, gap)
        tension = tensions(theta, active=frame > n_close)
        eq = solve(theta, tension, [Obstacle(geom, tuple(origin)), ground], n)
        if not eq.converged:
            return RolloutReport(_failure(record, f"grasp equilibrium did not converge (residual {eq.residual:.3g})"),
                                 report.residuals, report.iterations)
        theta = eq.theta

    # --- dynamic phases: wrist follows a profile, object moves vertically
    m, g = obj.mass, phase.gravity
    y0 = float(origin[1])
    y, v = y0, 0.0
    wy0 = float(wrist[1])
    z0 = y0 - wy0
    state = {"eq": eq, "theta": theta, "dirty": True, "moved": 0.0, "sag": 0.0,
             "collided": False, "rise": 0.0, "since": 0}

    def refresh():
        frames = max(state["since"], phase.dynamic_step)
        place_chains(cs, design, wrist, yaw, phase.jaw_travel - closed[min(frame, n_close)])
        tension = tensions(state["theta"])
        e = solve(state["theta"], tension, [Obstacle(geom, (float(origin[0]), y))], frames)
        if not e.converged:
            raise _Diverged(e.residual)
        creep = np.max(np.abs(phase.joint_damping / (frames * dt) * (e.theta - state["theta"])))
        state.update(eq=e, theta=e.theta, dirty=creep > 1e-5, moved=0.0, since=0)

    def advance(displacements: np.ndarray, lift_height: float, check_ground: bool):
        nonlocal y, v
        k = 0
        v_w = 0.0
        while k < len(displacements):
            chunk = displacements[k:k + phase.dynamic_step]
            k += len(chunk)
            n = len(chunk)
            h = n * dt
            e = state["eq"]
            state["since"] += n
            due = state["moved"] > phase.move_tolerance or state["since"] >= phase.refresh_frames
            free = e.normal.sum() == 0.0 and e.min_gap - state["moved"] > 1e-3
            if state["dirty"] and due and not free:
                refresh()
                e = state["eq"]
            wy_step = float(chunk.sum())
            v_w_new = float(chunk[-1]) / dt
            fny = float(e.force_on_object[:, 1].sum())
            squeeze_l = float(e.normal[side > 0].sum())
            squeeze_r = float(e.normal[side < 0].sum())
            cap = obj.friction * 2.0 * min(squeeze_l, squeeze_r)
            v_trial = v + h * (-g + fny / m)
            rel = v_trial - v_w_new
            if abs(rel) <= cap * h / m:
                dy = wy_step
                demand = m * (g + (v_w_new - v_w) / h) - fny
                total = squeeze_l + squeeze_r
                state["sag"] = -demand / (phase.sag_stiffness * total) if total > 0 else 0.0
                v = v_w_new
            else:
                v = v_trial - math.copysign(cap * h / m, rel)
                dy = v * h
                state["sag"] = 0.0
            v_w = v_w_new
            y += dy
            wrist[1] += wy_step
            state["rise"] += wy_step
            if y + geom.bottom < 0.0:
                y = -geom.bottom
                v = max(v, 0.0)
            touching = y + geom.bottom <= 1e-9
            if check_ground and touching and state["rise"] >= 0.5 * lift_height - 1e-12:
                state["collided"] = True
            if trace is not None:
                trace.append({"y": y, "v": v, "wrist": float(wrist[1]), "cap": cap, "fny": fny,
                              "squeeze": (squeeze_l, squeeze_r), "sag": state["sag"]})
            if abs(dy - wy_step) > 1e-12:
                state["dirty"] = True
                state["moved"] += abs(dy - wy_step)

    lift = motion_profile(record.lift_height, phase.lift_accel, dt)
    shot = 0.0
    try:
        refresh()  # fingers leave the ground once lifting starts
        advance(lift, record.lift_height, check_ground=True)
        advance(np.zeros(phase.hold_frames), record.lift_height, check_ground=True)
        if test:
            shot = impulse_for(seed, phase) if impulse is None else float(impulse)
            v -= shot / m
            state["sag"] = 0.0
            advance(np.zeros(phase.test_frames), record.lift_height, check_ground=True)
        state["dirty"] = True
        refresh()
    except _Diverged as exc:
        return RolloutReport(_failure(record, f"hold equilibrium did not converge (residual {exc.args[0]:.3g})"),
                             report.residuals, report.iterations, shot)

    touching = y + geom.bottom <= 1e-9
    collided = state["collided"] or (touching and state["rise"] >= 0.5 * record.lift_height - 1e-12)
    e = state["eq"]
    dq_y = (y + state["sag"] - float(wrist[1])) - z0
    outcome = EvalOutcome(
        dq=(0.0, float(dq_y)),
        ground_collision=bool(collided),
        design_valid=True,
        contact_at_end=bool(e.min_gap <= phase.contact_tolerance),
        force_feedback_nonzero=bool(e.normal.sum() > 1e-4),
        lifted=bool(y - y0 >= 0.5 * record.lift_height - 1e-12),
    )
    report.outcome = outcome
    report.impulse = shot
    report.theta = state["theta"]
    return report


class _Diverged(Exception):
    pass


def rollout(design, record, obj, phase: PhaseConfig = PhaseConfig(), seed=0, test: bool = False) -> EvalOutcome:
    """Outcome of one design grasping one object with one record."""
    return simulate(design, record, obj, phase, seed, test).outcome
