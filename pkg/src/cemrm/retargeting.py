"""Offline retargeting of recorded hand-keypoint streams into grasp records.

Quaternions are ``(x, y, z, w)`` (scalar last, as in
:mod:`scipy.spatial.transform`). World frames are z-up. The grasp plane is
spanned by the object's yawed x axis and the world z axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .design_space import FINGERS
from .surrogate.bundle import TeleopRecord

UNIT_TOL = 1e-9
SLERP_LINEAR_BELOW = 1e-6


class RetargetError(ValueError):
    """Malformed stream, calibration or geometry."""


@dataclass(frozen=True)
class JumpTolerance:
    translation: float = 0.05
    rotation: float = 0.35

    def __post_init__(self):
        if self.translation <= 0 or self.rotation <= 0:
            raise RetargetError("jump tolerances must be positive")


@dataclass(frozen=True)
class Calibration:
    """Constants that map human hand motion onto the robot hand.

    ``travel`` is the prismatic joint's opening range in metres;
    ``tendon_max`` is the tendon retraction reached at a fully folded
    finger (bend angle pi).
    """

    object_id: str
    object_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    object_yaw: float = 0.0
    mapping_scale: float = 1.0
    travel: tuple[float, float] = (0.0, 0.08)
    tendon_max: float = 0.03
    jump_tolerance: JumpTolerance = field(default_factory=JumpTolerance)

    def __post_init__(self):
        if self.mapping_scale <= 0:
            raise RetargetError("mapping_scale must be positive")
        if not self.travel[0] <= self.travel[1]:
            raise RetargetError("travel must be an increasing (low, high) pair")
        if self.tendon_max < 0:
            raise RetargetError("tendon_max must be non-negative")

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "object_position": list(self.object_position),
            "object_yaw": self.object_yaw,
            "mapping_scale": self.mapping_scale,
            "travel": list(self.travel),
            "tendon_max": self.tendon_max,
            "jump_tolerance": {"translation": self.jump_tolerance.translation,
                               "rotation": self.jump_tolerance.rotation},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Calibration":
        known = {"object_id", "object_position", "object_yaw", "mapping_scale", "travel",
                 "tendon_max", "jump_tolerance"}
        unknown = set(data) - known
        if unknown:
            raise RetargetError(f"unknown calibration keys: {sorted(unknown)}")
        if "object_id" not in data:
            raise RetargetError("calibration is missing 'object_id'")
        kw = dict(data)
        if "object_position" in kw:
            kw["object_position"] = tuple(float(v) for v in kw["object_position"])
        if "travel" in kw:
            kw["travel"] = tuple(float(v) for v in kw["travel"])
        if "jump_tolerance" in kw:
            kw["jump_tolerance"] = JumpTolerance(**kw["jump_tolerance"])
        return cls(**kw)


@dataclass(frozen=True)
class HandFrame:
    """One tracked hand sample.

    ``keypoints`` holds ``wrist`` plus ``<finger>_tip``, ``<finger>_distal``
    and ``<finger>_proximal`` for each robot finger the hand drives.
    ``grasp`` marks the frame at which the operator closed the hand.
    """

    timestamp: float
    keypoints: dict[str, np.ndarray]
    wrist_orientation: np.ndarray
    grasp: bool = False

    def __post_init__(self):
        q = np.asarray(self.wrist_orientation, dtype=np.float64)
        if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
            raise RetargetError("wrist_orientation must be a unit quaternion")
        if "wrist" not in self.keypoints:
            raise RetargetError("frame has no 'wrist' keypoint")

    @property
    def wrist(self) -> np.ndarray:
        return np.asarray(self.keypoints["wrist"], dtype=np.float64)

    def to_dict(self) -> dict:
        out = {
            "t": self.timestamp,
            "keypoints": {k: [float(x) for x in v] for k, v in self.keypoints.items()},
            "wrist_orientation": [float(x) for x in self.wrist_orientation],
        }
        if self.grasp:
            out["grasp"] = True
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "HandFrame":
        try:
            kp = {str(k): np.asarray(v, dtype=np.float64) for k, v in data["keypoints"].items()}
            for name, v in kp.items():
                if v.shape != (3,):
                    raise RetargetError(f"keypoint {name!r} must have 3 coordinates")
            return cls(
                timestamp=float(data["t"]), keypoints=kp,
                wrist_orientation=np.asarray(data["wrist_orientation"], dtype=np.float64),
                grasp=bool(data.get("grasp", False)),
            )
        except KeyError as exc:
            raise RetargetError(f"frame is missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, RetargetError):
                raise
            raise RetargetError(f"bad frame value: {exc}") from None


@dataclass(frozen=True)
class DeltaPose:
    translation: np.ndarray
    rotation: np.ndarray  # unit quaternion, applied on the left in the world frame


def bend_angle(p_tip, p_distal, p_proximal) -> float:
    """Angle between the distal and proximal bone directions, in [0, pi]."""
    v1 = np.asarray(p_tip, dtype=np.float64) - np.asarray(p_distal, dtype=np.float64)
    v2 = np.asarray(p_distal, dtype=np.float64) - np.asarray(p_proximal, dtype=np.float64)
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 == 0.0 or n2 == 0.0:
        raise RetargetError("bend angle needs three distinct points")
    c = float(np.dot(v1, v2) / (n1 * n2))
    return math.acos(min(1.0, max(-1.0, c)))


def pulley_displacement(delta_q: float, r_pulley: float) -> float:
    if r_pulley <= 0:
        raise RetargetError("pulley radius must be positive")
    return r_pulley * delta_q


def _unit(q, name="quaternion") -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
        raise RetargetError(f"{name} must be a unit 4-vector")
    return q


def slerp(q0, q1, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between unit quaternions."""
    q0, q1 = _unit(q0, "q0"), _unit(q1, "q1")
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1, dot = -q1, -dot
    dot = min(dot, 1.0)
    omega = math.acos(dot)
    if omega < SLERP_LINEAR_BELOW:
        q = (1.0 - t) * q0 + t * q1
        return q / np.linalg.norm(q)
    s = math.sin(omega)
    q = (math.sin((1.0 - t) * omega) / s) * q0 + (math.sin(t * omega) / s) * q1
    return q / np.linalg.norm(q)


def quaternion_angle(q0, q1) -> float:
    """Rotation angle (rad) taking ``q0`` to ``q1``."""
    q0, q1 = np.asarray(q0, dtype=np.float64), np.asarray(q1, dtype=np.float64)
    if np.dot(q0, q1) < 0.0:
        q1 = -q1
    # atan2 form stays accurate near zero, where acos of the dot product does not
    return 4.0 * math.atan2(float(np.linalg.norm(q1 - q0)), float(np.linalg.norm(q1 + q0)))


def _relative(q0, q1) -> np.ndarray:
    return (Rotation.from_quat(q1) * Rotation.from_quat(q0).inv()).as_quat()


def delta_pose_stream(frames: list[HandFrame], jump_tolerance: JumpTolerance = JumpTolerance()) -> list[DeltaPose]:
    """World-frame wrist increments between consecutive frames.

    A step whose translation or rotation exceeds the tolerance is split into
    ``n`` equal sub-steps, ``n`` being the larger of ``ceil(step/tol)`` over
    the two parts; the sub-steps compose to the original step.
    """
    if len(frames) < 2:
        raise RetargetError("need at least two frames")
    out = []
    for a, b in zip(frames, frames[1:]):
        dp = b.wrist - a.wrist
        qa, qb = np.asarray(a.wrist_orientation), np.asarray(b.wrist_orientation)
        dist = float(np.linalg.norm(dp))
        angle = quaternion_angle(qa, qb)
        n = 1
        if dist > jump_tolerance.translation or angle > jump_tolerance.rotation:
            n = max(math.ceil(dist / jump_tolerance.translation),
                    math.ceil(angle / jump_tolerance.rotation), 1)
        prev = qa
        for k in range(1, n + 1):
            cur = qb if k == n else slerp(qa, qb, k / n)
            out.append(DeltaPose(dp / n, _relative(prev, cur)))
            prev = cur
    return out


def compose(position, orientation, deltas: list[DeltaPose]) -> tuple[np.ndarray, np.ndarray]:
    """Apply a delta stream to a starting pose."""
    p = np.asarray(position, dtype=np.float64).copy()
    rot = Rotation.from_quat(orientation)
    for d in deltas:
        p = p + d.translation
        rot = Rotation.from_quat(d.rotation) * rot
    return p, rot.as_quat()


def pinch_to_prismatic(thumb_tip, index_tip, mapping_scale: float,
                       travel: tuple[float, float] = (0.0, 0.08)) -> float:
    """Jaw opening commanded by the thumb-index pinch aperture."""
    if mapping_scale <= 0:
        raise RetargetError("mapping_scale must be positive")
    d = float(np.linalg.norm(np.asarray(thumb_tip, dtype=np.float64) - np.asarray(index_tip, dtype=np.float64)))
    return min(max(mapping_scale * d, travel[0]), travel[1])


def tendon_from_bend(theta: float, tendon_max: float) -> float:
    return theta / math.pi * tendon_max


def finger_bend(frame: HandFrame, finger: str) -> float:
    kp = frame.keypoints
    try:
        return bend_angle(kp[f"{finger}_tip"], kp[f"{finger}_distal"], kp[f"{finger}_proximal"])
    except KeyError as exc:
        raise RetargetError(f"frame at t={frame.timestamp} lacks keypoint {exc.args[0]!r}") from None


def planar_pose(frame: HandFrame, calibration: Calibration) -> tuple[float, float, float]:
    """Wrist pose relative to the object, projected onto the grasp plane."""
    c, s = math.cos(calibration.object_yaw), math.sin(calibration.object_yaw)
    ex = np.array([c, s, 0.0])
    rel = frame.wrist - np.asarray(calibration.object_position)
    axis = Rotation.from_quat(frame.wrist_orientation).apply([1.0, 0.0, 0.0])
    yaw = math.atan2(float(axis[2]), float(np.dot(axis, ex)))
    return float(np.dot(rel, ex)), float(rel[2]), yaw


def grasp_indices(frames: list[HandFrame]) -> list[int]:
    return [i for i, f in enumerate(frames) if f.grasp]


def compile_record(frames: list[HandFrame], calibration: Calibration, grasp_index: int | None = None) -> TeleopRecord:
    """Build one record from the stream around a marked grasp frame.

    The lift height is the highest wrist rise after the grasp and before
    the next grasp marker. The stored prismatic value is the closing stroke
    from fully open, i.e. the travel limit minus the commanded opening.
    """
    marks = grasp_indices(frames)
    if not marks:
        raise RetargetError("stream has no grasp marker")
    g = marks[0] if grasp_index is None else grasp_index
    if g not in marks:
        raise RetargetError(f"frame {g} is not a grasp marker")
    later = [m for m in marks if m > g]
    end = later[0] if later else len(frames)
    frame = frames[g]
    kp = frame.keypoints
    try:
        opening = pinch_to_prismatic(kp["thumb_tip"], kp["index_tip"], calibration.mapping_scale, calibration.travel)
    except KeyError as exc:
        raise RetargetError(f"grasp frame lacks keypoint {exc.args[0]!r}") from None
    z0 = frame.wrist[2]
    rise = max((f.wrist[2] - z0 for f in frames[g:end]), default=0.0)
    targets = {f: tendon_from_bend(finger_bend(frame, f), calibration.tendon_max) for f in FINGERS}
    return TeleopRecord(
        object_id=calibration.object_id,
        grasp_pose=planar_pose(frame, calibration),
        prismatic_displacement=calibration.travel[1] - opening,
        tendon_targets=targets,
        lift_height=max(float(rise), 0.0),
        source="retargeted",
    )


def compile_records(frames: list[HandFrame], calibration: Calibration) -> list[TeleopRecord]:
    return [compile_record(frames, calibration, g) for g in grasp_indices(frames)]


def read_stream(path: str | Path) -> list[HandFrame]:
    """Parse a JSON-lines stream; errors cite the 1-based line number."""
    frames: list[HandFrame] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                frame = HandFrame.from_dict(json.loads(line))
            except json.JSONDecodeError as exc:
                raise RetargetError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            except (RetargetError, AttributeError) as exc:
                raise RetargetError(f"line {lineno}: {exc}") from None
            if frames and frame.timestamp <= frames[-1].timestamp:
                raise RetargetError(f"line {lineno}: timestamps must increase")
            frames.append(frame)
    return frames


def write_stream(frames: list[HandFrame], path: str | Path) -> None:
    with open(path, "w") as fh:
        for f in frames:
            fh.write(json.dumps(f.to_dict()) + "\n")


def read_calibration(path: str | Path) -> Calibration:
    try:
        return Calibration.from_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError:
        raise RetargetError(f"missing calibration file {path}") from None
    except json.JSONDecodeError as exc:
        raise RetargetError(f"{path}: invalid JSON ({exc.msg})") from None
