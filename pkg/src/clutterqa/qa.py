"""Template questions and graph-search answering."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from enum import Enum

from .graph import Relation, SceneGraph, key_node
from .world import CLASS_NAMES

YES, NO = "Yes", "No"
MAX_COUNT = 3

_IRREGULAR_PLURALS = {"knife": "knives", "mouse": "mice", "scissors": "scissors",
                      "toothbrush": "toothbrushes"}


def plural(name: str) -> str:
    return _IRREGULAR_PLURALS.get(name, name + "s")


_SINGULAR = {name: i for i, name in enumerate(CLASS_NAMES)}
_PLURAL = {plural(name): i for i, name in enumerate(CLASS_NAMES)}


class QType(str, Enum):
    EXISTENCE = "EXISTENCE"
    COUNTING = "COUNTING"
    SPATIAL = "SPATIAL"


class QuestionParseError(ValueError):
    pass


@dataclass(frozen=True)
class Question:
    """A typed query.

    For AboveBelow questions ``class_a`` is always the class asked to be on
    top: "Is the pen below the book?" is stored as (book, pen).
    """

    qtype: QType
    class_a: int
    class_b: int | None = None
    relation: Relation | None = None
    text: str = ""

    def __post_init__(self):
        spatial = self.qtype is QType.SPATIAL
        if spatial != (self.class_b is not None) or spatial != (self.relation is not None):
            raise ValueError("class_b and relation are required for SPATIAL questions only")
        if self.relation is Relation.NONE:
            raise ValueError("questions ask about AboveBelow or Nearby")

    def to_dict(self) -> dict:
        d = {"text": self.text, "qtype": self.qtype.value, "class_a": self.class_a}
        if self.class_b is not None:
            d["class_b"] = self.class_b
            d["relation"] = self.relation.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Question":
        rel = d.get("relation")
        return cls(QType(d["qtype"]), d["class_a"], d.get("class_b"),
                   Relation(rel) if rel is not None else None, d.get("text", ""))


_EXIST = re.compile(r"^is there an? (\w+) in the bin\?$")
_COUNT = re.compile(r"^how many (\w+) are there in the bin\?$")
_SPATIAL = re.compile(r"^is the (\w+) (above|below|near) the (\w+)\?$")


def _lookup(word: str, table: dict[str, int]) -> int:
    if word not in table:
        raise QuestionParseError(f"unknown object class {word!r}")
    return table[word]


def parse_question(text: str) -> Question:
    s = " ".join(text.strip().lower().split())
    if m := _EXIST.match(s):
        return Question(QType.EXISTENCE, _lookup(m[1], _SINGULAR), text=text)
    if m := _COUNT.match(s):
        return Question(QType.COUNTING, _lookup(m[1], _PLURAL), text=text)
    if m := _SPATIAL.match(s):
        a, b = _lookup(m[1], _SINGULAR), _lookup(m[3], _SINGULAR)
        if m[2] == "near":
            return Question(QType.SPATIAL, a, b, Relation.NEARBY, text)
        if m[2] == "below":
            a, b = b, a
        return Question(QType.SPATIAL, a, b, Relation.ABOVE_BELOW, text)
    raise QuestionParseError(f"question does not match any template: {text!r}")


def existence_text(c: int) -> str:
    name = CLASS_NAMES[c]
    article = "an" if name[0] in "aeiou" else "a"
    return f"Is there {article} {name} in the bin?"


def counting_text(c: int) -> str:
    return f"How many {plural(CLASS_NAMES[c])} are there in the bin?"


def spatial_text(a: int, b: int, word: str) -> str:
    return f"Is the {CLASS_NAMES[a]} {word} the {CLASS_NAMES[b]}?"


def bfs_order(g: SceneGraph) -> list[int]:
    """BFS from the key node, then from the smallest unvisited node of each remaining component."""
    if not g.nodes:
        return []
    adj = g.adjacency()
    seen: set[int] = set()
    order = []
    roots = [key_node(g)] + sorted(adj)
    for root in roots:
        if root in seen:
            continue
        seen.add(root)
        queue = deque([root])
        while queue:
            u = queue.popleft()
            order.append(u)
            for v in sorted(adj[u]):
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
    return order


def answer(final: SceneGraph, q: Question):
    classes = {n.id: n.class_id for n in final.nodes}
    if q.qtype is QType.EXISTENCE:
        return YES if any(classes[u] == q.class_a for u in bfs_order(final)) else NO
    if q.qtype is QType.COUNTING:
        return min(MAX_COUNT, sum(1 for c in classes.values() if c == q.class_a))
    for e in final.edges:
        if e.rel is not q.relation:
            continue
        ca, cb = classes[e.a], classes[e.b]
        if q.relation is Relation.NEARBY:
            if {ca, cb} == {q.class_a, q.class_b}:
                return YES
        else:
            if e.top is None:
                continue
            bottom = e.b if e.top == e.a else e.a
            if classes[e.top] == q.class_a and classes[bottom] == q.class_b:
                return YES
    return NO
