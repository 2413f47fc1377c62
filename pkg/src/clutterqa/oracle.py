"""Full-knowledge expert that demonstrates least-step push sequences."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .actions import (BIN_WIDTH, STOP_ACTION, DiscreteAction, PushAction, continuize,
                      direction_vector, discretize, discretize_push)
from .graph import Relation, box_relation
from .qa import MAX_COUNT, NO, YES, QType, Question
from .world import (BIN_SIZE, VIS_THRESHOLD, ObjectInstance, Observation, Scene, _overlaps,
                    apply_push, label_map, observe, pushed_object, visibilities)

MAX_STEPS = 5
MAX_STARTS = 4
CANONICAL_PUSH = continuize(discretize(BIN_SIZE / 2, BIN_SIZE / 2, 0))


def ground_truth_answer(scene: Scene, q: Question):
    """Answer computed from the full scene (true boxes and stacking order)."""
    objs = scene.of_class(q.class_a)
    if q.qtype is QType.EXISTENCE:
        return YES if objs else NO
    if q.qtype is QType.COUNTING:
        return min(MAX_COUNT, len(objs))
    return YES if related_pairs(scene, q.class_a, q.class_b, q.relation) else NO


def related_pairs(scene: Scene, class_a: int, class_b: int, relation: Relation | None = None):
    """(a, b, relation) for every pair related by AboveBelow/Nearby.

    With ``relation`` given, keep only that relation; for AboveBelow the
    class-a member must also be the higher one.
    """
    out = []
    for a in scene.of_class(class_a):
        for b in scene.of_class(class_b):
            if a.id == b.id:
                continue
            rel = box_relation(a.box, b.box)
            if rel is Relation.NONE:
                continue
            if relation is not None:
                if rel is not relation:
                    continue
                if rel is Relation.ABOVE_BELOW and a.z < b.z:
                    continue
            out.append((a, b, rel))
    return out


def occluders(scene: Scene, target: ObjectInstance) -> list[ObjectInstance]:
    """Higher objects whose boxes intersect the target, highest first."""
    above = [o for o in scene.objects if o.z > target.z and _overlaps(o.box, target.box)]
    return sorted(above, key=lambda o: -o.z)


def _direction_order(vx: float, vy: float) -> list[int]:
    # best angular agreement first; ties go to the lower class
    return sorted(range(8), key=lambda k: (-round(direction_vector(k)[0] * vx + direction_vector(k)[1] * vy, 9), k))


def _grid_starts(scene: Scene, obj: ObjectInstance) -> list[tuple[int, int]]:
    """Bin-center starts over the object's visible region, nearest to its center first."""
    idx = scene.objects.index(obj)
    lm = label_map(scene)
    half = BIN_WIDTH // 2
    cx, cy = obj.center
    pts = []
    x0, y0, x1, y1 = obj.box
    for gx in range(x0 // BIN_WIDTH, (x1 - 1) // BIN_WIDTH + 1):
        for gy in range(y0 // BIN_WIDTH, (y1 - 1) // BIN_WIDTH + 1):
            px, py = gx * BIN_WIDTH + half, gy * BIN_WIDTH + half
            if lm[py, px] == idx:
                pts.append(((px - cx) ** 2 + (py - cy) ** 2, px, py))
    pts.sort()
    start = discretize_push(PushAction((min(cx, BIN_SIZE - 1), min(cy, BIN_SIZE - 1)), 0))
    snapped = continuize(start).start
    out = [snapped] + [(px, py) for _, px, py in pts if (px, py) != snapped]
    return out[:MAX_STARTS]


def _candidate_pushes(scene: Scene, mover: ObjectInstance, away_from: ObjectInstance):
    vx = mover.center[0] - away_from.center[0]
    vy = mover.center[1] - away_from.center[1]
    starts = _grid_starts(scene, mover)
    for o in _direction_order(vx, vy):
        for s in starts:
            push = PushAction(s, o)
            if pushed_object(scene, push) == mover.id:
                yield push


def _visible_area_of(scene: Scene, classes) -> float:
    vis = visibilities(scene)
    return sum(vis[o.id] * o.area for o in scene.objects if o.class_id in classes)


def _progressing_push(scene: Scene, mover: ObjectInstance, away_from: ObjectInstance,
                      classes) -> PushAction | None:
    """First push of ``mover`` that strictly grows the visible area of ``classes``."""
    before = _visible_area_of(scene, classes)
    for push in _candidate_pushes(scene, mover, away_from):
        after, _ = apply_push(scene, push)
        if _visible_area_of(after, classes) > before:
            return push
    return None


def _uncover(scene: Scene, target: ObjectInstance, classes, skip=()) -> PushAction | None:
    for occ in occluders(scene, target):
        if occ.id in skip:
            continue
        push = _progressing_push(scene, occ, target, classes)
        if push is not None:
            return push
    return None


@dataclass
class OracleState:
    """What the expert remembers between steps of one episode."""

    pair: tuple[int, int] | None = None  # (top id, bottom id) of the SPATIAL pair under study
    separated: bool = False


def choose_pair(scene: Scene, q: Question) -> tuple[int, int] | None:
    pairs = related_pairs(scene, q.class_a, q.class_b)
    if not pairs:
        return None
    # prefer a pair that carries the asked relation
    pairs.sort(key=lambda p: (p[2] is not q.relation, p[0].id, p[1].id))
    a, b, _ = pairs[0]
    return (a.id, b.id) if a.z > b.z else (b.id, a.id)


def plan_step(scene: Scene, q: Question, state: OracleState | None = None,
              vis_threshold: float = VIS_THRESHOLD) -> PushAction | None:
    """Next expert push, or ``None`` for STOP.

    EXISTENCE uncovers the most visible instance of the class, COUNTING the
    least visible hidden one. SPATIAL clears foreign occluders off both members
    of one related pair, then slides the upper member off the lower one.
    Every push must strictly grow the visible area of the queried classes.
    """
    if q.qtype is QType.SPATIAL:
        state = state if state is not None else OracleState(pair=choose_pair(scene, q))
        if state.pair is None or state.separated:
            return None
        classes = {q.class_a, q.class_b}
        top, bottom = scene.get(state.pair[0]), scene.get(state.pair[1])
        for member, partner in ((top, bottom), (bottom, top)):
            push = _uncover(scene, member, classes, skip={partner.id})
            if push is not None:
                return push
        if _overlaps(top.box, bottom.box):
            push = _progressing_push(scene, top, bottom, classes)
            if push is not None:
                state.separated = True
                return push
        return None

    instances = scene.of_class(q.class_a)
    if not instances:
        return None
    vis = visibilities(scene)
    hidden = [o for o in instances if vis[o.id] < vis_threshold]
    if q.qtype is QType.EXISTENCE:
        if len(hidden) < len(instances):
            return None
        order = sorted(hidden, key=lambda o: (-vis[o.id], o.id))  # most visible first
    else:
        order = sorted(hidden, key=lambda o: (vis[o.id], o.id))  # least visible first
    for target in order:
        push = _uncover(scene, target, {q.class_a})
        if push is not None:
            return push
    return None


def needs_extra_action(truth) -> bool:
    return truth == NO or truth == 0


class OraclePolicy:
    """Expert policy; privileged access to the scene and the true answer."""

    name = "oracle"

    def __init__(self, vis_threshold: float = VIS_THRESHOLD):
        self.vis_threshold = vis_threshold

    def reset(self, scene: Scene, q: Question) -> None:
        self.q = q
        self.extra = needs_extra_action(ground_truth_answer(scene, q))
        self.extra_done = False
        self.state = OracleState(pair=choose_pair(scene, q) if q.qtype is QType.SPATIAL else None)

    def act(self, scene: Scene, obs: Observation) -> DiscreteAction:
        if not self.extra_done:
            push = plan_step(scene, self.q, self.state, self.vis_threshold)
            if push is not None:
                return discretize_push(push)
        if self.extra and not self.extra_done:
            self.extra_done = True
            return discretize_push(CANONICAL_PUSH)
        return STOP_ACTION


@dataclass
class Step:
    observation: Observation
    question: Question
    action: DiscreteAction


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)
    scene_seed: int = 0

    @property
    def actions(self) -> list[DiscreteAction]:
        return [s.action for s in self.steps]

    @property
    def n_pushes(self) -> int:
        return sum(1 for s in self.steps if not s.action.is_stop)


def demonstrate(scene: Scene, q: Question, max_steps: int = MAX_STEPS,
                vis_threshold: float = VIS_THRESHOLD) -> tuple[Trajectory, Scene]:
    """Roll out the expert; returns the trajectory and the final scene."""
    if max_steps < 0:
        raise ValueError("max_steps must be >= 0")
    policy = OraclePolicy(vis_threshold)
    policy.reset(scene, q)
    traj = Trajectory(scene_seed=scene.seed)
    for t in range(max_steps + 1):
        obs = observe(scene, t, vis_threshold)
        action = policy.act(scene, obs) if t < max_steps else STOP_ACTION
        traj.steps.append(Step(obs, q, action))
        if action.is_stop:
            break
        scene, _ = apply_push(scene, continuize(action))
    return traj, scene


def write_trajectories(records, path) -> None:
    """``records``: iterable of (demo_index, series, question_index, Trajectory)."""
    with open(path, "w") as fh:
        for demo, series, qidx, traj in records:
            for t, step in enumerate(traj.steps):
                fh.write(json.dumps({
                    "demo": demo,
                    "t": t,
                    "observation_ref": f"series/{series}/q/{qidx}/t/{t}",
                    "question_ref": f"series/{series}/q/{qidx}",
                    "action": step.action.to_list(),
                }, sort_keys=True) + "\n")


def read_trajectory_actions(path) -> dict[int, dict]:
    """demo index -> {"series", "question", "actions"} from a trajectory file."""
    demos: dict[int, dict] = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            parts = rec["question_ref"].split("/")
            d = demos.setdefault(rec["demo"], {"series": int(parts[1]), "question": int(parts[3]),
                                              "actions": []})
            if rec["t"] != len(d["actions"]):
                raise ValueError(f"demo {rec['demo']}: steps out of order")
            d["actions"].append(DiscreteAction.from_list(rec["action"]))
    return demos
