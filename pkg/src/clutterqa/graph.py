"""Scene graphs over detections and their alignment across push steps."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum

from .world import Box, Observation

# Relation thresholds; read-only by convention.
IOU_STACKED = 0.5
DIST_STACKED = 0.5
DIST_NEARBY = 1.0
ALIGN_RADIUS = 64.0


class Relation(str, Enum):
    ABOVE_BELOW = "AboveBelow"
    NEARBY = "Nearby"
    NONE = "None"


@dataclass(frozen=True)
class Node:
    id: int
    class_id: int
    box: Box
    visibility: float = 1.0
    height: int | None = None


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    rel: Relation
    top: int | None = None

    def __post_init__(self):
        if self.a >= self.b:
            raise ValueError("edges are stored once with a < b")
        if self.rel is Relation.NONE:
            raise ValueError("None relations are not edges")


@dataclass
class SceneGraph:
    nodes: list[Node] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    timestep: int = 0

    def node(self, node_id: int) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def degrees(self) -> dict[int, int]:
        deg = {n.id: 0 for n in self.nodes}
        for e in self.edges:
            deg[e.a] += 1
            deg[e.b] += 1
        return deg

    def adjacency(self) -> dict[int, list[int]]:
        adj = {n.id: [] for n in self.nodes}
        for e in self.edges:
            adj[e.a].append(e.b)
            adj[e.b].append(e.a)
        return adj

    def to_dict(self) -> dict:
        edges = []
        for e in self.edges:
            d = {"a": e.a, "b": e.b, "rel": e.rel.value}
            if e.top is not None:
                d["top"] = e.top
            edges.append(d)
        return {
            "timestep": self.timestep,
            "nodes": [{"id": n.id, "class": n.class_id, "box": list(n.box), "vis": n.visibility,
                       "height": n.height} for n in self.nodes],
            "edges": edges,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneGraph":
        nodes = [Node(n["id"], n["class"], tuple(n["box"]), n.get("vis", 1.0), n.get("height"))
                 for n in d["nodes"]]
        edges = [Edge(e["a"], e["b"], Relation(e["rel"]), e.get("top")) for e in d["edges"]]
        return cls(nodes, edges, d["timestep"])


def dump_graphs(graphs, path) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_dict(), sort_keys=True) + "\n")


def load_graphs(path) -> list[SceneGraph]:
    with open(path) as fh:
        return [SceneGraph.from_dict(json.loads(line)) for line in fh if line.strip()]


def _area(b: Box) -> float:
    w, h = b[2] - b[0], b[3] - b[1]
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate box {b}")
    return float(w * h)


def iou(a: Box, b: Box) -> float:
    sa, sb = _area(a), _area(b)
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    overlap = iw * ih
    return overlap / (sa + sb - overlap)


def center(b: Box) -> tuple[float, float]:
    return ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0)


def norm_distance(a: Box, b: Box) -> float:
    """Center distance over the longer of the two box diagonals."""
    diag = max(math.hypot(a[2] - a[0], a[3] - a[1]), math.hypot(b[2] - b[0], b[3] - b[1]))
    if diag <= 0:
        raise ValueError("degenerate box")
    (ax, ay), (bx, by) = center(a), center(b)
    return math.hypot(ax - bx, ay - by) / diag


def classify_relation(overlap: float, l: float) -> Relation:
    if overlap >= IOU_STACKED:
        return Relation.ABOVE_BELOW
    if l < DIST_STACKED:
        return Relation.ABOVE_BELOW
    if l < DIST_NEARBY:
        return Relation.NEARBY
    return Relation.NONE


def box_relation(a: Box, b: Box) -> Relation:
    return classify_relation(iou(a, b), norm_distance(a, b))


def stack_top(p: Node, q: Node) -> int:
    """Upper node of a stacked pair: by depth when both carry it, else the less occluded one."""
    if p.height is not None and q.height is not None:
        return p.id if p.height > q.height else q.id
    return q.id if q.visibility > p.visibility else p.id


def build_graph(obs: Observation) -> SceneGraph:
    """One node per detection (frame-local ids in detection order)."""
    nodes = [Node(k, d.class_id, d.box, d.visibility, d.height) for k, d in enumerate(obs.detections)]
    edges = []
    for i, p in enumerate(nodes):
        for q in nodes[i + 1:]:
            rel = box_relation(p.box, q.box)
            if rel is Relation.NONE:
                continue
            top = stack_top(p, q) if rel is Relation.ABOVE_BELOW else None
            edges.append(Edge(p.id, q.id, rel, top))
    return SceneGraph(nodes, edges, obs.timestep)


def key_node(g: SceneGraph) -> int:
    if not g.nodes:
        raise ValueError("key node of an empty graph")
    deg = g.degrees()
    return min(deg, key=lambda n: (-deg[n], n))


def align(prev: SceneGraph, cur: SceneGraph, radius: float = ALIGN_RADIUS) -> dict[int, int]:
    """Greedy same-class nearest-center matching, anchored on the previous key node."""
    pairs = []
    for p in prev.nodes:
        pc = center(p.box)
        for c in cur.nodes:
            if c.class_id != p.class_id:
                continue
            cc = center(c.box)
            d = math.hypot(pc[0] - cc[0], pc[1] - cc[1])
            if d <= radius:
                pairs.append((d, p.id, c.id))
    pairs.sort()

    mapping: dict[int, int] = {}
    used: set[int] = set()
    if prev.nodes:
        anchor = key_node(prev)
        for d, p, c in pairs:
            if p == anchor:
                mapping[p] = c
                used.add(c)
                break
    for d, p, c in pairs:
        if p in mapping or c in used:
            continue
        mapping[p] = c
        used.add(c)
    return mapping


def _contains(outer: Box, inner: Box) -> bool:
    return outer[0] <= inner[0] and outer[1] <= inner[1] and outer[2] >= inner[2] and outer[3] >= inner[3]


def _hull(a: Box, b: Box) -> Box:
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))


@dataclass
class Track:
    """One physical object followed through the frames it was detected in."""

    id: int
    class_id: int
    sightings: list[tuple[int, Node]] = field(default_factory=list)  # (frame index, node)
    rest_box: Box | None = None  # hull of visible boxes before the first relocation
    relocated: bool = False

    @property
    def last(self) -> Node:
        return self.sightings[-1][1]

    def visibility_at(self, frame: int) -> float:
        for t, n in self.sightings:
            if t == frame:
                return n.visibility
        return 0.0

    def add(self, frame: int, node: Node) -> None:
        if self.sightings and not self.relocated:
            prev = self.last.box
            if _contains(prev, node.box) or _contains(node.box, prev):
                # occlusion changed, the object did not
                self.rest_box = _hull(self.rest_box, node.box)
            else:
                self.relocated = True
        elif not self.sightings:
            self.rest_box = node.box
        self.sightings.append((frame, node))


class DynamicSceneGraph:
    """Per-step scene graphs linked by alignments, plus object tracks.

    Each new frame is aligned against the last known position of every track,
    so an object that is briefly covered and reappears is not counted twice.
    """

    def __init__(self, radius: float = ALIGN_RADIUS):
        self.radius = radius
        self.frames: list[SceneGraph] = []
        self.alignments: list[dict[int, int]] = []
        self.key_nodes: list[int | None] = []
        self.tracks: list[Track] = []
        self._frame_tracks: list[dict[int, int]] = []  # per frame: node id -> track id

    def update(self, g: SceneGraph) -> None:
        t = len(self.frames)
        memory = SceneGraph([replace(tr.last, id=tr.id) for tr in self.tracks])
        matched = align(memory, g, self.radius) if memory.nodes else {}
        node_to_track = {c: tr for tr, c in matched.items()}
        for n in g.nodes:
            if n.id not in node_to_track:
                tr = Track(len(self.tracks), n.class_id)
                self.tracks.append(tr)
                node_to_track[n.id] = tr.id
            self.tracks[node_to_track[n.id]].add(t, n)

        if self.frames:
            prev_nodes = {tr: nid for nid, tr in self._frame_tracks[-1].items()}
            self.alignments.append({prev_nodes[tr]: nid for nid, tr in node_to_track.items()
                                    if tr in prev_nodes})
        self.frames.append(g)
        self.key_nodes.append(key_node(g) if g.nodes else None)
        self._frame_tracks.append(node_to_track)

    def removed(self, step: int) -> set[int]:
        """Node ids of frame ``step`` with no counterpart in frame ``step + 1``."""
        return {n.id for n in self.frames[step].nodes} - set(self.alignments[step])

    def added(self, step: int) -> set[int]:
        """Node ids of frame ``step + 1`` with no counterpart in frame ``step``."""
        return {n.id for n in self.frames[step + 1].nodes} - set(self.alignments[step].values())

    def _top(self, p: Track, q: Track) -> int:
        hp, hq = p.last.height, q.last.height
        if hp is not None and hq is not None:
            return p.id if hp > hq else q.id
        # first frame where the two differ in visibility decides who was on top
        frames = sorted({t for t, _ in p.sightings} | {t for t, _ in q.sightings})
        for t in frames:
            vp, vq = p.visibility_at(t), q.visibility_at(t)
            if vp != vq:
                return p.id if vp > vq else q.id
        return min(p.id, q.id)

    def fused(self) -> SceneGraph:
        """Graph of every tracked object at its estimated resting place.

        Relations are recomputed from the resting boxes, so a pair that a push
        separated keeps the relation it had before exploration began.
        """
        nodes = [Node(tr.id, tr.class_id, tr.rest_box, max(n.visibility for _, n in tr.sightings),
                      tr.last.height) for tr in self.tracks]
        edges = []
        for i, p in enumerate(self.tracks):
            for q in self.tracks[i + 1:]:
                rel = box_relation(p.rest_box, q.rest_box)
                if rel is Relation.NONE:
                    continue
                top = self._top(p, q) if rel is Relation.ABOVE_BELOW else None
                edges.append(Edge(p.id, q.id, rel, top))
        timestep = self.frames[-1].timestep if self.frames else 0
        return SceneGraph(nodes, edges, timestep)


def class_census(g: SceneGraph) -> Counter:
    return Counter(n.class_id for n in g.nodes)
