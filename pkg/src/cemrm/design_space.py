"""Bounded design vector for a three-finger tendon-driven soft hand.

Lengths are in millimetres, angles in radians. The flat vector layout is
fixed: fingers in the order thumb, index, middle; within each finger the
slots are ``l_seg, l_fle, h[0..S), h_ten[0..S), psi, phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

FINGERS = ("thumb", "index", "middle")

LENGTH_BOUNDS = (6.0, 18.0)
THICKNESS_BOUNDS = (4.0, 18.0)
TENDON_BOUNDS = (4.0, 18.0)
PSI_LIMIT = math.pi / 4
PHI_LIMIT = math.pi / 2
# psi lives in an open interval; clamping uses a hair-narrower closed one
PSI_CLAMP = PSI_LIMIT * (1.0 - 1e-9)

# footprint disc diameter is max(h[0], FOOTPRINT_MIN_MM)
FOOTPRINT_MIN_MM = 12.0


class DimensionError(ValueError):
    """Raised when a vector does not match the design dimension."""


@dataclass(frozen=True)
class FingerDesign:
    l_seg: float
    l_fle: float
    h: tuple[float, ...]
    h_ten: tuple[float, ...]
    psi: float
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "h", tuple(float(v) for v in self.h))
        object.__setattr__(self, "h_ten", tuple(float(v) for v in self.h_ten))
        if len(self.h) != len(self.h_ten):
            raise ValueError("h and h_ten must have the same number of blocks")

    @property
    def segments(self) -> int:
        return len(self.h)

    def to_dict(self) -> dict[str, Any]:
        return {
            "l_seg": self.l_seg,
            "l_fle": self.l_fle,
            "h": list(self.h),
            "h_ten": list(self.h_ten),
            "psi": self.psi,
            "phi": self.phi,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FingerDesign":
        return cls(
            l_seg=float(data["l_seg"]),
            l_fle=float(data["l_fle"]),
            h=tuple(data["h"]),
            h_ten=tuple(data["h_ten"]),
            psi=float(data["psi"]),
            phi=float(data["phi"]),
        )


@dataclass(frozen=True)
class DesignVector:
    """Full hand design: three fingers plus campaign constants.

    Attributes:
        thumb, index, middle: per-finger parameters.
        S: segment blocks per finger.
        R: mounting half-circle radius in mm.
    """

    thumb: FingerDesign
    index: FingerDesign
    middle: FingerDesign
    S: int = 4
    R: float = 40.0

    def fingers(self) -> tuple[FingerDesign, FingerDesign, FingerDesign]:
        return (self.thumb, self.index, self.middle)

    @property
    def dim(self) -> int:
        return design_dim(self.S)

    def to_array(self) -> np.ndarray:
        out = []
        for f in self.fingers():
            out.extend([f.l_seg, f.l_fle, *f.h, *f.h_ten, f.psi, f.phi])
        return np.asarray(out, dtype=np.float64)

    @classmethod
    def from_array(cls, vec, S: int = 4, R: float = 40.0) -> "DesignVector":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (design_dim(S),):
            raise DimensionError(f"expected vector of length {design_dim(S)}, got shape {vec.shape}")
        per = 2 * S + 4
        fingers = []
        for k in range(3):
            v = vec[k * per:(k + 1) * per]
            fingers.append(
                FingerDesign(
                    l_seg=float(v[0]),
                    l_fle=float(v[1]),
                    h=tuple(float(x) for x in v[2:2 + S]),
                    h_ten=tuple(float(x) for x in v[2 + S:2 + 2 * S]),
                    psi=float(v[2 + 2 * S]),
                    phi=float(v[3 + 2 * S]),
                )
            )
        return cls(*fingers, S=S, R=R)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"S": self.S, "R": self.R}
        for name, f in zip(FINGERS, self.fingers()):
            out[name] = f.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DesignVector":
        S = int(data.get("S", 4))
        fingers = [FingerDesign.from_dict(data[name]) for name in FINGERS]
        for name, f in zip(FINGERS, fingers):
            if f.segments != S:
                raise ValueError(f"{name}: expected {S} segment blocks, got {f.segments}")
        return cls(*fingers, S=S, R=float(data.get("R", 40.0)))


def design_dim(S: int) -> int:
    return 3 * (2 + 2 * S + 2)


def bounds(S: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper bound arrays in flat slot order.

    psi uses its open-interval limits; h_ten's coupling to h is not encoded
    here (see :func:`apply_action`).
    """
    lo, hi = [], []
    for _ in FINGERS:
        lo += [LENGTH_BOUNDS[0]] * 2 + [THICKNESS_BOUNDS[0]] * S + [TENDON_BOUNDS[0]] * S
        hi += [LENGTH_BOUNDS[1]] * 2 + [THICKNESS_BOUNDS[1]] * S + [TENDON_BOUNDS[1]] * S
        lo += [-PSI_LIMIT, -PHI_LIMIT]
        hi += [PSI_LIMIT, PHI_LIMIT]
    return np.asarray(lo), np.asarray(hi)


def slot_names(S: int = 4) -> list[str]:
    names = []
    for finger in FINGERS:
        names += [f"{finger}.l_seg", f"{finger}.l_fle"]
        names += [f"{finger}.h[{i}]" for i in range(S)]
        names += [f"{finger}.h_ten[{i}]" for i in range(S)]
        names += [f"{finger}.psi", f"{finger}.phi"]
    return names


def action_scale(S: int = 4) -> np.ndarray:
    """Half-width of each slot's bound interval.

    A normalized action ``u`` in ``[-1, 1]`` per slot maps to the physical
    offset ``u * action_scale(S)``.
    """
    lo, hi = bounds(S)
    return 0.5 * (hi - lo)


def denormalize(u, S: int = 4) -> np.ndarray:
    return np.asarray(u, dtype=np.float64) * action_scale(S)


def normalize(a, S: int = 4) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) / action_scale(S)


def mount_position(phi: float, R: float) -> np.ndarray:
    """Mount point on a half-circle of radius ``R``, in its local frame."""
    return np.array([R * math.cos(phi), R * math.sin(phi)])


def global_mount_positions(design: DesignVector) -> dict[str, np.ndarray]:
    """Mount points in the palm frame with the prismatic joint closed.

    The two half-circle centres sit at ``(-R, 0)`` (thumb) and ``(R, 0)``
    (index/middle); each local x axis points toward the other centre, so
    the index/middle frame is the thumb frame rotated by pi.
    """
    R = design.R
    out = {"thumb": np.array([-R, 0.0]) + mount_position(design.thumb.phi, R)}
    for name in ("index", "middle"):
        f = getattr(design, name)
        out[name] = np.array([R, 0.0]) - mount_position(f.phi, R)
    return out


def uniform_baseline(S: int = 4, R: float = 40.0) -> DesignVector:
    """Uniform baseline hand used to collect the demonstrations."""
    if S < 2:
        raise ValueError("baseline needs at least two segment blocks")

    def finger(phi: float) -> FingerDesign:
        return FingerDesign(
            l_seg=12.0, l_fle=12.0, h=(11.0,) * S, h_ten=(5.5,) * S, psi=0.0, phi=phi
        )

    return DesignVector(
        thumb=finger(0.0), index=finger(-math.pi / 4), middle=finger(math.pi / 4), S=S, R=R
    )


def _clamp_finger(f: FingerDesign) -> FingerDesign:
    def clip(v, lo, hi):
        return min(max(v, lo), hi)

    h = tuple(clip(v, *THICKNESS_BOUNDS) for v in f.h)
    h_ten = tuple(
        clip(t, TENDON_BOUNDS[0], min(TENDON_BOUNDS[1], hi)) for t, hi in zip(f.h_ten, h)
    )
    return FingerDesign(
        l_seg=clip(f.l_seg, *LENGTH_BOUNDS),
        l_fle=clip(f.l_fle, *LENGTH_BOUNDS),
        h=h,
        h_ten=h_ten,
        psi=clip(f.psi, -PSI_CLAMP, PSI_CLAMP),
        phi=clip(f.phi, -PHI_LIMIT, PHI_LIMIT),
    )


def clamp(design: DesignVector) -> DesignVector:
    return replace(
        design,
        thumb=_clamp_finger(design.thumb),
        index=_clamp_finger(design.index),
        middle=_clamp_finger(design.middle),
    )


def apply_action(base: DesignVector, action) -> DesignVector:
    """Offset ``base`` by a physical action vector and clamp into bounds.

    ``h_ten[i]`` is clamped against the already-clamped ``h[i]``.
    """
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (base.dim,):
        raise DimensionError(f"action must have shape ({base.dim},), got {action.shape}")
    moved = DesignVector.from_array(base.to_array() + action, S=base.S, R=base.R)
    return clamp(moved)


@dataclass(frozen=True)
class Validity:
    valid: bool
    reasons: tuple[str, ...] = field(default_factory=tuple)

    def __bool__(self) -> bool:
        return self.valid


def validate(design: DesignVector) -> Validity:
    """Check bounds and base-footprint overlap between fingers."""
    reasons = []

    def check(name, value, lo, hi, strict=False):
        ok = (lo < value < hi) if strict else (lo <= value <= hi)
        if not (ok and math.isfinite(value)):
            reasons.append(f"bound violation: {name}={value:g} outside [{lo:g}, {hi:g}]")

    for fname, f in zip(FINGERS, design.fingers()):
        if f.segments != design.S:
            reasons.append(f"bound violation: {fname} has {f.segments} blocks, expected {design.S}")
            continue
        check(f"{fname}.l_seg", f.l_seg, *LENGTH_BOUNDS)
        check(f"{fname}.l_fle", f.l_fle, *LENGTH_BOUNDS)
        for i, (h, t) in enumerate(zip(f.h, f.h_ten)):
            check(f"{fname}.h[{i}]", h, *THICKNESS_BOUNDS)
            check(f"{fname}.h_ten[{i}]", t, *TENDON_BOUNDS)
            if t > h:
                reasons.append(f"bound violation: {fname}.h_ten[{i}]={t:g} exceeds h[{i}]={h:g}")
        check(f"{fname}.psi", f.psi, -PSI_LIMIT, PSI_LIMIT, strict=True)
        check(f"{fname}.phi", f.phi, -PHI_LIMIT, PHI_LIMIT)

    mounts = global_mount_positions(design)
    radii = {
        name: 0.5 * max(f.h[0], FOOTPRINT_MIN_MM) if f.segments else 0.5 * FOOTPRINT_MIN_MM
        for name, f in zip(FINGERS, design.fingers())
    }
    for i, a in enumerate(FINGERS):
        for b in FINGERS[i + 1:]:
            dist = float(np.linalg.norm(mounts[a] - mounts[b]))
            if not dist > radii[a] + radii[b]:
                reasons.append(
                    f"finger penetration: {a}/{b} centres {dist:.3f} mm apart, "
                    f"need > {radii[a] + radii[b]:.3f}"
                )
    return Validity(valid=not reasons, reasons=tuple(reasons))
