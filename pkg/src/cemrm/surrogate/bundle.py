"""Objects, teleoperation records and the on-disk bundle that pairs them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..design_space import FINGERS
from .physics import ConvexPolygon, Disc

MANIFEST = "manifest.json"
DENSITY_CLASSES = {"light": (1.0, 4.0), "heavy": (5.0, 8.0)}


class BundleError(ValueError):
    """A bundle, object or record file is missing or malformed."""


@dataclass(frozen=True)
class SimObject:
    """Planar rigid object.

    ``shape`` is ``"disc"`` (uses ``radius``) or ``"polygon"`` (uses
    ``vertices``, counter-clockwise, metres about the object origin).
    """

    object_id: str
    shape: str
    mass: float
    friction: float
    density_class: str
    density: float
    radius: float = 0.0
    vertices: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.mass <= 0:
            raise BundleError(f"{self.object_id}: mass must be positive")
        if self.friction < 0:
            raise BundleError(f"{self.object_id}: friction must be non-negative")
        if self.density_class not in DENSITY_CLASSES:
            raise BundleError(f"{self.object_id}: unknown density class {self.density_class!r}")
        lo, hi = DENSITY_CLASSES[self.density_class]
        if not lo <= self.density <= hi:
            raise BundleError(f"{self.object_id}: density {self.density} outside the {self.density_class} range")
        if self.shape == "disc":
            if self.radius <= 0:
                raise BundleError(f"{self.object_id}: disc radius must be positive")
        elif self.shape == "polygon":
            try:
                ConvexPolygon(tuple(map(tuple, self.vertices)))
            except ValueError as exc:
                raise BundleError(f"{self.object_id}: {exc}") from None
        else:
            raise BundleError(f"{self.object_id}: unknown shape {self.shape!r}")

    @property
    def geometry(self):
        if self.shape == "disc":
            return Disc(self.radius)
        return ConvexPolygon(tuple(map(tuple, self.vertices)))

    def to_dict(self) -> dict:
        out = {
            "object_id": self.object_id, "shape": self.shape, "mass": self.mass,
            "friction": self.friction, "density_class": self.density_class, "density": self.density,
        }
        if self.shape == "disc":
            out["radius"] = self.radius
        else:
            out["vertices"] = [list(v) for v in self.vertices]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimObject":
        try:
            return cls(
                object_id=str(data["object_id"]), shape=str(data["shape"]), mass=float(data["mass"]),
                friction=float(data["friction"]), density_class=str(data["density_class"]),
                density=float(data["density"]), radius=float(data.get("radius", 0.0)),
                vertices=tuple(tuple(map(float, v)) for v in data.get("vertices", ())),
            )
        except KeyError as exc:
            raise BundleError(f"object is missing field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class TeleopRecord:
    """One grasp demonstration reduced to the plane.

    ``grasp_pose`` is the wrist pose relative to the object origin
    ``(x, y, yaw)``; ``prismatic_displacement`` is how far the jaws close from
    fully open; ``tendon_targets`` are per-finger tendon retractions.
    """

    object_id: str
    grasp_pose: tuple[float, float, float]
    prismatic_displacement: float
    tendon_targets: dict[str, float]
    lift_height: float
    source: str = "scripted"

    def __post_init__(self):
        if self.prismatic_displacement < 0:
            raise BundleError("prismatic_displacement must be non-negative")
        if set(self.tendon_targets) != set(FINGERS):
            raise BundleError(f"tendon_targets must name exactly {FINGERS}")
        if any(v < 0 for v in self.tendon_targets.values()):
            raise BundleError("tendon targets must be non-negative")
        if self.lift_height < 0:
            raise BundleError("lift_height must be non-negative")
        if not all(math.isfinite(v) for v in self.grasp_pose):
            raise BundleError("grasp_pose must be finite")

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "grasp_pose": list(self.grasp_pose),
            "prismatic_displacement": self.prismatic_displacement,
            "tendon_targets": {f: self.tendon_targets[f] for f in FINGERS},
            "lift_height": self.lift_height,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TeleopRecord":
        try:
            pose = tuple(float(v) for v in data["grasp_pose"])
            if len(pose) != 3:
                raise BundleError("grasp_pose needs (x, y, yaw)")
            return cls(
                object_id=str(data["object_id"]), grasp_pose=pose,
                prismatic_displacement=float(data["prismatic_displacement"]),
                tendon_targets={str(k): float(v) for k, v in data["tendon_targets"].items()},
                lift_height=float(data["lift_height"]), source=str(data.get("source", "scripted")),
            )
        except KeyError as exc:
            raise BundleError(f"record is missing field {exc.args[0]!r}") from None


@dataclass
class Bundle:
    objects: list[SimObject]
    records: dict[str, list[TeleopRecord]] = field(default_factory=dict)
    root: Path | None = None

    def records_for(self, object_id: str) -> list[TeleopRecord]:
        recs = self.records.get(object_id, [])
        if not recs:
            raise BundleError(f"no records for object {object_id!r}")
        return recs

    def by_class(self, density_class: str) -> list[SimObject]:
        return [o for o in self.objects if o.density_class == density_class]


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise BundleError(f"missing file {path}") from None
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def load_bundle(path: str | Path) -> Bundle:
    """Read a bundle directory (``manifest.json`` plus object and record files)."""
    root = Path(path)
    if root.is_file():
        root = root.parent
    manifest = _read_json(root / MANIFEST)
    objects, records = [], {}
    for entry in manifest.get("objects", []):
        obj = SimObject.from_dict(_read_json(root / entry["file"]))
        objects.append(obj)
        records[obj.object_id] = [TeleopRecord.from_dict(_read_json(root / r)) for r in entry.get("records", [])]
        for rec in records[obj.object_id]:
            if rec.object_id != obj.object_id:
                raise BundleError(f"record for {rec.object_id!r} listed under {obj.object_id!r}")
    if not objects:
        raise BundleError(f"{root / MANIFEST} lists no objects")
    return Bundle(objects, records, root)


def write_bundle(bundle: Bundle, path: str | Path) -> Path:
    root = Path(path)
    (root / "objects").mkdir(parents=True, exist_ok=True)
    (root / "records").mkdir(parents=True, exist_ok=True)
    entries = []
    for obj in bundle.objects:
        ofile = f"objects/{obj.object_id}.json"
        (root / ofile).write_text(json.dumps(obj.to_dict(), indent=2) + "\n")
        rfiles = []
        for i, rec in enumerate(bundle.records.get(obj.object_id, [])):
            rfile = f"records/{obj.object_id}_{i}.json"
            (root / rfile).write_text(json.dumps(rec.to_dict(), indent=2) + "\n")
            rfiles.append(rfile)
        entries.append({"object_id": obj.object_id, "file": ofile, "records": rfiles})
    (root / MANIFEST).write_text(json.dumps({"version": 1, "objects": entries}, indent=2) + "\n")
    return root


def default_bundle_path() -> Path:
    return Path(str(resources.files("cemrm") / "data" / "bundle"))


def load_default_bundle() -> Bundle:
    return load_bundle(default_bundle_path())
