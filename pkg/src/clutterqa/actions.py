"""Push actions and their decoupled (x-bin, y-bin, direction|STOP) discretization."""

from __future__ import annotations

import math
from dataclasses import dataclass

IMAGE_SIZE = 224
PUSH_DISTANCE = IMAGE_SIZE // 4  # 56 px
BIN_WIDTH = 8
N_BINS = IMAGE_SIZE // BIN_WIDTH  # 28
N_DIRECTIONS = 8
STOP = 8  # ninth class of the direction head
N_O_CLASSES = N_DIRECTIONS + 1

_HALF = math.sqrt(2.0) / 2.0
_UNIT = (
    (1.0, 0.0), (_HALF, _HALF), (0.0, 1.0), (-_HALF, _HALF),
    (-1.0, 0.0), (-_HALF, -_HALF), (0.0, -1.0), (_HALF, -_HALF),
)


@dataclass(frozen=True)
class PushAction:
    start: tuple[float, float]
    direction_class: int
    distance: int = PUSH_DISTANCE

    def __post_init__(self):
        if not 0 <= self.direction_class < N_DIRECTIONS:
            raise ValueError(f"direction class {self.direction_class} not in [0, 7]")
        if self.distance != PUSH_DISTANCE:
            raise ValueError("push distance is fixed at a quarter of the image width")

    @property
    def midpoint(self) -> tuple[float, float]:
        dx, dy = direction_vector(self.direction_class)
        half = self.distance / 2.0
        return (self.start[0] + half * dx, self.start[1] + half * dy)


@dataclass(frozen=True)
class DiscreteAction:
    x_bin: int
    y_bin: int
    o_class: int

    def __post_init__(self):
        if not (0 <= self.x_bin < N_BINS and 0 <= self.y_bin < N_BINS):
            raise ValueError(f"position bins ({self.x_bin}, {self.y_bin}) out of range")
        if not 0 <= self.o_class <= STOP:
            raise ValueError(f"o_class {self.o_class} out of range")

    @property
    def is_stop(self) -> bool:
        return self.o_class == STOP

    def to_list(self) -> list[int]:
        return [self.x_bin, self.y_bin, self.o_class]

    @classmethod
    def from_list(cls, v) -> "DiscreteAction":
        return cls(int(v[0]), int(v[1]), int(v[2]))


STOP_ACTION = DiscreteAction(0, 0, STOP)


def direction_vector(o_class: int) -> tuple[float, float]:
    """Unit vector at ``o_class * 45`` degrees from +x, turning toward +y (image down)."""
    if not 0 <= o_class < N_DIRECTIONS:
        raise ValueError(f"direction class {o_class} not in [0, 7]")
    return _UNIT[o_class]


def push_offset(o_class: int) -> tuple[int, int]:
    """Integer pixel translation of one push (diagonals round 56/sqrt(2) to 40)."""
    dx, dy = direction_vector(o_class)
    return round(PUSH_DISTANCE * dx), round(PUSH_DISTANCE * dy)


def discretize(px: float, py: float, angle_deg: float) -> DiscreteAction:
    if not (0 <= px < IMAGE_SIZE and 0 <= py < IMAGE_SIZE):
        raise ValueError(f"push start ({px}, {py}) outside the image")
    if angle_deg % 45 != 0:
        raise ValueError("angle must be a multiple of 45 degrees")
    return DiscreteAction(int(px // BIN_WIDTH), int(py // BIN_WIDTH), int(angle_deg // 45) % N_DIRECTIONS)


def discretize_push(push: PushAction) -> DiscreteAction:
    return discretize(push.start[0], push.start[1], 45 * push.direction_class)


def continuize(a: DiscreteAction) -> PushAction | None:
    """Decode to the bin-center push; ``None`` stands for STOP."""
    if a.is_stop:
        return None
    half = BIN_WIDTH // 2
    return PushAction((BIN_WIDTH * a.x_bin + half, BIN_WIDTH * a.y_bin + half), a.o_class)


def nearest_direction(vx: float, vy: float) -> int:
    """Canonical direction with the largest cosine to (vx, vy); ties go to the lower class."""
    if vx == 0 and vy == 0:
        return 0
    best, best_dot = 0, -math.inf
    for k, (ux, uy) in enumerate(_UNIT):
        dot = ux * vx + uy * vy
        if dot > best_dot + 1e-12:
            best, best_dot = k, dot
    return best
