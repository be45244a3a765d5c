"""Scripted grasp heuristics that generate the bundled objects and records.

Run ``python -m cemrm.surrogate.scripted OUT_DIR`` to regenerate the shipped
bundle; output is a pure function of the seed.
"""

from __future__ import annotations

import argparse
import math

import numpy as np

from ..design_space import FINGERS, DesignVector, uniform_baseline
from .bundle import Bundle, SimObject, TeleopRecord, default_bundle_path, write_bundle

MASS_PER_DENSITY = 0.05  # kg per unit of the density class scale
FRICTION = 0.8
RECORDS_PER_OBJECT = 5
LIFT_HEIGHT = 0.08
JAW_TRAVEL = 0.08


def _square(half: float):
    return ((-half, 0.0), (half, 0.0), (half, 2 * half), (-half, 2 * half))


def _bar(half_width: float, thickness: float):
    return ((-half_width, 0.0), (half_width, 0.0), (half_width, thickness), (-half_width, thickness))


# (name, shape, size) per primitive; each appears once per density class
_PRIMITIVES = (
    ("disc_small", "disc", 0.02),
    ("disc_large", "disc", 0.03),
    ("bar", "polygon", _bar(0.03, 0.01)),
    ("square", "polygon", _square(0.02)),
)
_DENSITIES = {
    "light": {"disc_small": 2.0, "disc_large": 3.0, "bar": 1.5, "square": 2.5},
    "heavy": {"disc_small": 6.0, "disc_large": 7.0, "bar": 5.0, "square": 6.5},
}


def default_objects() -> list[SimObject]:
    objects = []
    for cls in ("light", "heavy"):
        for name, shape, size in _PRIMITIVES:
            density = _DENSITIES[cls][name]
            kw = {"radius": size} if shape == "disc" else {"vertices": size}
            objects.append(SimObject(
                object_id=f"{name}_{cls}", shape=shape, mass=MASS_PER_DENSITY * density,
                friction=FRICTION, density_class=cls, density=density, **kw,
            ))
    return objects


def scripted_record(
    obj: SimObject,
    hand: DesignVector,
    tendon_target: float = 0.015,
    squeeze: float = 0.002,
    clearance: float = 0.003,
    x_offset: float = 0.0,
    source: str = "scripted",
) -> TeleopRecord:
    """Centre the jaws on the object with fingertips just above the ground.

    The jaws close until the inner finger faces would overlap the object by
    ``squeeze`` per side; ``clearance`` keeps the straight fingertips off the
    ground.
    """
    geom = obj.geometry
    thumb = hand.thumb
    reach = hand.S * (thumb.l_seg + thumb.l_fle) * 1e-3
    half_finger = 0.5 * thumb.h[0] * 1e-3
    # the index/middle jaw sits further out than the thumb by the mount offset
    mount = hand.R * 1e-3 * (1.0 - math.cos(hand.index.phi))
    gx = -0.5 * mount + x_offset
    gy = reach + clearance + geom.bottom
    gap = 2.0 * (geom.half_width + half_finger) - mount - 2.0 * squeeze
    stroke = min(max(JAW_TRAVEL - gap, 0.0), JAW_TRAVEL)
    return TeleopRecord(
        object_id=obj.object_id,
        grasp_pose=(gx, gy, 0.0),
        prismatic_displacement=stroke,
        tendon_targets={f: tendon_target for f in FINGERS},
        lift_height=LIFT_HEIGHT,
        source=source,
    )


def scripted_bundle(seed: int = 0) -> Bundle:
    """Eight objects with five jittered demonstrations each."""
    hand = uniform_baseline()
    objects = default_objects()
    records = {}
    for i, obj in enumerate(objects):
        rng = np.random.default_rng([seed, i])
        recs = []
        for k in range(RECORDS_PER_OBJECT):
            if k == 0:
                recs.append(scripted_record(obj, hand))
                continue
            recs.append(scripted_record(
                obj, hand,
                tendon_target=round(float(rng.uniform(0.012, 0.02)), 6),
                squeeze=round(float(rng.uniform(0.001, 0.003)), 6),
                clearance=round(float(rng.uniform(0.002, 0.004)), 6),
                x_offset=round(float(rng.uniform(-0.001, 0.001)), 6),
            ))
        records[obj.object_id] = recs
    return Bundle(objects, records)


def _finger_points(base, angle: float, bone: float = 0.03):
    """Proximal, distal and tip points of a finger bent by ``angle`` in the x-z plane."""
    base = np.asarray(base, dtype=np.float64)
    distal = base + np.array([0.0, 0.0, -bone])
    tip = distal + bone * np.array([math.sin(angle), 0.0, -math.cos(angle)])
    return base, distal, tip


def sample_stream(seed: int = 0, object_id: str = "disc_small_light"):
    """Synthetic tracked demonstration: approach, pinch, fold, lift.

    One tracking dropout produces a wrist jump well above the default
    tolerance, which the retargeting pipeline interpolates.
    """
    from ..retargeting import Calibration, HandFrame

    rng = np.random.default_rng(seed)
    obj = next(o for o in default_objects() if o.object_id == object_id)
    target = scripted_record(obj, uniform_baseline())
    gx, gy, _ = target.grasp_pose
    object_position = np.array([0.4, 0.1, 0.0])
    calibration = Calibration(object_id=object_id, object_position=tuple(object_position.tolist()))
    opening = JAW_TRAVEL - target.prismatic_displacement
    fold = target.tendon_targets["thumb"] / calibration.tendon_max * math.pi
    grasp_at, lift_frames = 40, 30
    identity = np.array([0.0, 0.0, 0.0, 1.0])
    frames = []
    for i in range(grasp_at + lift_frames + 1):
        approach = min(i / grasp_at, 1.0)
        height = gy + 0.15 * (1.0 - approach)
        if i > grasp_at:
            height += LIFT_HEIGHT * (i - grasp_at) / lift_frames
        if i == 20:
            height += 0.3  # tracking dropout
        wrist = object_position + np.array([gx, 0.0, height])
        wrist = wrist + np.where(i == grasp_at, 0.0, rng.normal(0.0, 2e-4, 3))
        closure = min(max((i - 25) / (grasp_at - 25), 0.0), 1.0)
        pinch = JAW_TRAVEL + closure * (opening - JAW_TRAVEL)
        kp = {"wrist": wrist}
        for k, name in enumerate(FINGERS):
            root = wrist + np.array([0.01 * k, 0.02 * (k - 1), -0.03])
            prox, dist, tip = _finger_points(root, closure * fold)
            kp.update({f"{name}_proximal": prox, f"{name}_distal": dist, f"{name}_tip": tip})
        kp["index_tip"] = kp["thumb_tip"] + np.array([pinch, 0.0, 0.0])
        frames.append(HandFrame(timestamp=round(i / 60.0, 9), keypoints=kp,
                                wrist_orientation=identity, grasp=i == grasp_at))
    return frames, calibration


def write_sample_retarget(out_dir) -> None:
    """Write the sample stream, its calibration and the compiled golden record."""
    import json
    from pathlib import Path

    from ..retargeting import compile_record, read_stream, write_stream

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames, calibration = sample_stream()
    write_stream(frames, out / "sample_stream.jsonl")
    (out / "calibration.json").write_text(json.dumps(calibration.to_dict(), indent=2) + "\n")
    record = compile_record(read_stream(out / "sample_stream.jsonl"), calibration)
    (out / "golden_record.json").write_text(json.dumps(record.to_dict(), indent=2) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Regenerate the scripted object/record bundle.")
    parser.add_argument("out", nargs="?", default=str(default_bundle_path()))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--retarget-dir", default=None,
                        help="also write the sample stream, calibration and golden record here")
    args = parser.parse_args(argv)
    root = write_bundle(scripted_bundle(args.seed), args.out)
    print(f"wrote bundle to {root}")
    if args.retarget_dir:
        write_sample_retarget(args.retarget_dir)
        print(f"wrote retargeting sample to {args.retarget_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
