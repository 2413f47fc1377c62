"""Deterministic 2D bin simulator.

Objects are axis-aligned integer boxes stacked by an immutable ``z`` rank.
All area computations run on a 1-px raster, so they are exact for integer
boxes. Scenes are frozen values; ``apply_push`` returns a new scene.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable

import numpy as np

from .actions import PUSH_DISTANCE, PushAction, direction_vector, push_offset

BIN_SIZE = 224
N_CLASSES = 20
N_INSTANCES = 3
GRID_CELL = 8
GRID_SIZE = BIN_SIZE // GRID_CELL  # 28, aligned with the action bins
VIS_THRESHOLD = 0.25
PUSH_WIDTH = 16
MIN_SIDE, MAX_SIDE = 20, 60

CLASS_NAMES = (
    "apple", "ball", "banana", "book", "bottle",
    "bowl", "clock", "cup", "key", "keyboard",
    "knife", "mouse", "notebook", "pen", "phone",
    "remote", "scissors", "spoon", "toothbrush", "wallet",
)
OBJECTS_PER_DIFFICULTY = {"easy": 20, "hard": 35}

Box = tuple[int, int, int, int]


@dataclass(frozen=True)
class ObjectInstance:
    id: int
    class_id: int
    instance_id: int
    box: Box
    z: int

    @property
    def area(self) -> int:
        x0, y0, x1, y1 = self.box
        return (x1 - x0) * (y1 - y0)

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


@dataclass(frozen=True)
class Scene:
    objects: tuple[ObjectInstance, ...]
    difficulty: str = "easy"
    seed: int = 0
    bin_size: int = BIN_SIZE

    def __post_init__(self):
        zs = [o.z for o in self.objects]
        if len(set(zs)) != len(zs):
            raise ValueError("z ranks must be unique within a scene")
        keys = [(o.class_id, o.instance_id) for o in self.objects]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (class_id, instance_id) in scene")
        for o in self.objects:
            x0, y0, x1, y1 = o.box
            if not (0 <= x0 < x1 <= BIN_SIZE and 0 <= y0 < y1 <= BIN_SIZE):
                raise ValueError(f"object {o.id} box {o.box} is degenerate or outside the bin")

    def get(self, obj_id: int) -> ObjectInstance:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(f"unknown object id {obj_id}")

    def of_class(self, class_id: int) -> list[ObjectInstance]:
        return [o for o in self.objects if o.class_id == class_id]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "difficulty": self.difficulty,
            "objects": [
                {"id": o.id, "class": o.class_id, "instance": o.instance_id,
                 "box": list(o.box), "z": o.z}
                for o in self.objects
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        objs = tuple(
            ObjectInstance(o["id"], o["class"], o["instance"], tuple(o["box"]), o["z"])
            for o in d["objects"]
        )
        return cls(objs, d["difficulty"], d["seed"])


@dataclass(frozen=True)
class Detection:
    id: int
    class_id: int
    box: Box  # tight box of the unoccluded raster cells
    visibility: float
    height: int | None = None  # stacking rank as a depth camera would order it


@dataclass(frozen=True)
class Observation:
    detections: tuple[Detection, ...]
    class_grid: np.ndarray  # (GRID_SIZE, GRID_SIZE, N_CLASSES) visible-coverage fractions
    timestep: int = 0

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return (self.detections == other.detections and self.timestep == other.timestep
                and np.array_equal(self.class_grid, other.class_grid))

    __hash__ = None


def instance_size(class_id: int, instance_id: int) -> tuple[int, int]:
    """Fixed (width, height) for a catalogue instance, both in [20, 60].

    Sides are skewed toward the large end (square-root of a uniform hash byte)
    so that easy bins still hold a fair share of buried objects.
    """
    digest = hashlib.blake2b(f"{class_id}:{instance_id}".encode(), digest_size=4).digest()
    span = MAX_SIDE - MIN_SIDE
    return tuple(MIN_SIDE + int(round(span * math.sqrt(b / 255))) for b in digest[:2])


def generate_scene(seed: int, difficulty: str = "easy") -> Scene:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    if difficulty not in OBJECTS_PER_DIFFICULTY:
        raise ValueError(f"unknown difficulty {difficulty!r}")
    n = OBJECTS_PER_DIFFICULTY[difficulty]
    rng = np.random.default_rng([seed, n])
    picks = rng.choice(N_CLASSES * N_INSTANCES, size=n, replace=False)
    objects = []
    for z, flat in enumerate(picks):
        c, i = divmod(int(flat), N_INSTANCES)
        w, h = instance_size(c, i)
        x0 = int(rng.integers(0, BIN_SIZE - w + 1))
        y0 = int(rng.integers(0, BIN_SIZE - h + 1))
        objects.append(ObjectInstance(z, c, i, (x0, y0, x0 + w, y0 + h), z))
    return Scene(tuple(objects), difficulty, seed)


@lru_cache(maxsize=512)
def label_map(scene: Scene) -> np.ndarray:
    """(224, 224) array holding the index (into scene.objects) of the topmost object, -1 if empty."""
    lm = np.full((BIN_SIZE, BIN_SIZE), -1, dtype=np.int16)
    for idx in sorted(range(len(scene.objects)), key=lambda k: scene.objects[k].z):
        x0, y0, x1, y1 = scene.objects[idx].box
        lm[y0:y1, x0:x1] = idx
    lm.setflags(write=False)
    return lm


def _visible_counts(scene: Scene) -> np.ndarray:
    lm = label_map(scene)
    return np.bincount(lm.ravel().astype(np.int64) + 1, minlength=len(scene.objects) + 1)[1:]


def visibilities(scene: Scene) -> dict[int, float]:
    counts = _visible_counts(scene)
    return {o.id: counts[k] / o.area for k, o in enumerate(scene.objects)}


def visibility(scene: Scene, obj_id: int) -> float:
    for k, o in enumerate(scene.objects):
        if o.id == obj_id:
            return float(_visible_counts(scene)[k] / o.area)
    raise KeyError(f"unknown object id {obj_id}")


def visible_area(scene: Scene, obj_id: int) -> int:
    for k, o in enumerate(scene.objects):
        if o.id == obj_id:
            return int(_visible_counts(scene)[k])
    raise KeyError(f"unknown object id {obj_id}")


def _visible_box(lm: np.ndarray, idx: int, box: Box) -> Box | None:
    x0, y0, x1, y1 = box
    mask = lm[y0:y1, x0:x1] == idx
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return (x0 + int(cols[0]), y0 + int(rows[0]), x0 + int(cols[-1]) + 1, y0 + int(rows[-1]) + 1)


def observe(scene: Scene, timestep: int = 0, vis_threshold: float = VIS_THRESHOLD) -> Observation:
    lm = label_map(scene)
    counts = _visible_counts(scene)
    detections = []
    for k, o in enumerate(scene.objects):
        vis = counts[k] / o.area
        if vis >= vis_threshold:
            detections.append(Detection(o.id, o.class_id, _visible_box(lm, k, o.box), float(vis), o.z))

    grid = np.zeros((GRID_SIZE, GRID_SIZE, N_CLASSES))
    if scene.objects:
        classes = np.array([o.class_id for o in scene.objects] + [-1], dtype=np.int16)
        cm = classes[lm]  # lm == -1 picks the trailing sentinel
        blocks = cm.reshape(GRID_SIZE, GRID_CELL, GRID_SIZE, GRID_CELL)
        for c in sorted({o.class_id for o in scene.objects}):
            grid[:, :, c] = (blocks == c).mean(axis=(1, 3))
    return Observation(tuple(detections), grid, timestep)


@lru_cache(maxsize=4096)
def corridor_mask(start: tuple[float, float], direction: int,
                  length: float = PUSH_DISTANCE, width: float = PUSH_WIDTH) -> np.ndarray:
    """Pixels whose centers lie in the swept push rectangle."""
    dx, dy = direction_vector(direction)
    ys, xs = np.mgrid[0:BIN_SIZE, 0:BIN_SIZE]
    rx = xs + 0.5 - start[0]
    ry = ys + 0.5 - start[1]
    along = rx * dx + ry * dy
    perp = np.abs(rx * dy - ry * dx)
    mask = (along >= 0) & (along <= length) & (perp <= width / 2.0)
    mask.setflags(write=False)
    return mask


def pushed_object(scene: Scene, push: PushAction) -> int | None:
    """Id of the topmost object with visible pixels inside the push corridor."""
    lm = label_map(scene)
    hit = np.unique(lm[corridor_mask(push.start, push.direction_class)])
    hit = hit[hit >= 0]
    if hit.size == 0:
        return None
    top = max(hit, key=lambda k: scene.objects[k].z)
    return scene.objects[int(top)].id


def _overlaps(a: Box, b: Box) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _translate(box: Box, dx: int, dy: int) -> Box:
    return (box[0] + dx, box[1] + dy, box[2] + dx, box[3] + dy)


def _clamp(box: Box) -> Box:
    x0, y0, x1, y1 = box
    dx = -x0 if x0 < 0 else min(0, BIN_SIZE - x1)
    dy = -y0 if y0 < 0 else min(0, BIN_SIZE - y1)
    return _translate(box, dx, dy)


def _separation(pusher: Box, other: Box, sx: int, sy: int) -> int:
    # smallest k >= 0 such that other shifted by k*(sx, sy) no longer overlaps pusher
    needs = []
    if sx > 0:
        needs.append(pusher[2] - other[0])
    elif sx < 0:
        needs.append(other[2] - pusher[0])
    if sy > 0:
        needs.append(pusher[3] - other[1])
    elif sy < 0:
        needs.append(other[3] - pusher[1])
    return max(0, min(needs))


def apply_push(scene: Scene, push: PushAction) -> tuple[Scene, set[int]]:
    """Quasi-static push.

    The topmost object visible in the corridor translates by the push vector.
    Lower objects it newly runs into are shoved just clear of it along the same
    direction (one level, no cascade). Objects it was already resting on stay put.
    """
    px, py = push.start
    if not (0 <= px < BIN_SIZE and 0 <= py < BIN_SIZE):
        raise ValueError(f"push start {push.start} outside the bin")
    target = pushed_object(scene, push)
    if target is None:
        return scene, set()

    dx, dy = push_offset(push.direction_class)
    sx, sy = int(np.sign(dx)), int(np.sign(dy))
    pusher = scene.get(target)
    new_box = _clamp(_translate(pusher.box, dx, dy))
    boxes = {o.id: o.box for o in scene.objects}
    boxes[target] = new_box
    for o in scene.objects:
        if o.z >= pusher.z or _overlaps(o.box, pusher.box) or not _overlaps(o.box, new_box):
            continue
        k = _separation(new_box, o.box, sx, sy)
        boxes[o.id] = _clamp(_translate(o.box, sx * k, sy * k))

    moved = {o.id for o in scene.objects if boxes[o.id] != o.box}
    if not moved:
        return scene, set()
    objs = tuple(replace(o, box=boxes[o.id]) for o in scene.objects)
    return replace(scene, objects=objs), moved


def apply_pushes(scene: Scene, pushes: Iterable[PushAction]) -> Scene:
    for p in pushes:
        scene, _ = apply_push(scene, p)
    return scene
