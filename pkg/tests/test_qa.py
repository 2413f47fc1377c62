from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from clutterqa.graph import Edge, Node, Relation, SceneGraph, box_relation
from clutterqa.qa import (NO, YES, QType, Question, QuestionParseError, answer, bfs_order, counting_text,
                          existence_text, parse_question, spatial_text)
from clutterqa.world import CLASS_NAMES

KEY, KEYBOARD, PEN, NOTEBOOK = (CLASS_NAMES.index(n) for n in ("key", "keyboard", "pen", "notebook"))


def test_parse_examples():
    assert parse_question("Is there a key in the bin?") == Question(QType.EXISTENCE, KEY, text="Is there a key in the bin?")
    q = parse_question("How many keyboards are there in the bin?")
    assert (q.qtype, q.class_a) == (QType.COUNTING, KEYBOARD)
    q = parse_question("Is the pen above the notebook?")
    assert (q.qtype, q.class_a, q.class_b, q.relation) == (QType.SPATIAL, PEN, NOTEBOOK, Relation.ABOVE_BELOW)


def test_parse_below_and_near():
    q = parse_question("Is the pen below the notebook?")
    assert (q.class_a, q.class_b, q.relation) == (NOTEBOOK, PEN, Relation.ABOVE_BELOW)
    q = parse_question("is the   pen NEAR the notebook?")
    assert (q.class_a, q.class_b, q.relation) == (PEN, NOTEBOOK, Relation.NEARBY)


@pytest.mark.parametrize("text", ["Is there a dragon in the bin?", "What is in the bin?",
                                  "How many key are there in the bin?", ""])
def test_parse_errors(text):
    with pytest.raises(QuestionParseError):
        parse_question(text)


def test_templates_roundtrip_for_every_class():
    for c in range(20):
        assert parse_question(existence_text(c)).class_a == c
        assert parse_question(counting_text(c)).class_a == c
        assert parse_question(spatial_text(c, (c + 1) % 20, "near")).class_b == (c + 1) % 20
    assert existence_text(CLASS_NAMES.index("apple")).startswith("Is there an apple")


def test_question_invariants():
    with pytest.raises(ValueError):
        Question(QType.EXISTENCE, 0, 1, Relation.NEARBY)
    with pytest.raises(ValueError):
        Question(QType.SPATIAL, 0)
    q = parse_question("Is the pen near the notebook?")
    assert Question.from_dict(q.to_dict()) == q


def node(i, c, x=0, y=0, w=20):
    return Node(i, c, (x, y, x + w, y + w))


def test_answer_examples():
    g = SceneGraph([node(i, KEYBOARD, 60 * i) for i in range(3)])
    assert answer(g, parse_question("How many keyboards are there in the bin?")) == 3
    assert answer(g, parse_question("Is there a key in the bin?")) == NO
    g = SceneGraph([node(0, PEN), node(1, NOTEBOOK)], [Edge(0, 1, Relation.ABOVE_BELOW, top=0)])
    assert answer(g, parse_question("Is the pen above the notebook?")) == YES
    assert answer(g, parse_question("Is the notebook below the pen?")) == YES
    assert answer(g, parse_question("Is the notebook above the pen?")) == NO
    assert answer(g, parse_question("Is the pen near the notebook?")) == NO


def test_answer_empty_graph():
    empty = SceneGraph()
    assert answer(empty, parse_question("Is there a key in the bin?")) == NO
    assert answer(empty, parse_question("How many keys are there in the bin?")) == 0
    assert answer(empty, parse_question("Is the pen near the notebook?")) == NO


def test_counting_clamps_at_three():
    g = SceneGraph([node(i, KEY, 30 * i) for i in range(5)])
    assert answer(g, parse_question("How many keys are there in the bin?")) == 3


def test_bfs_covers_isolated_nodes():
    g = SceneGraph([node(0, 1), node(1, 2), node(2, 3), node(5, KEY, 150, 150)],
                   [Edge(0, 1, Relation.NEARBY), Edge(1, 2, Relation.NEARBY)])
    order = bfs_order(g)
    assert order[0] == 1 and sorted(order) == [0, 1, 2, 5]
    assert answer(g, parse_question("Is there a key in the bin?")) == YES


@st.composite
def graphs(draw):
    n = draw(st.integers(0, 8))
    nodes = [Node(i, draw(st.integers(0, 4)),
                  (x := draw(st.integers(0, 180)), y := draw(st.integers(0, 180)),
                   x + draw(st.integers(5, 40)), y + draw(st.integers(5, 40)))) for i in range(n)]
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            rel = box_relation(nodes[i].box, nodes[j].box)
            if rel is not Relation.NONE:
                top = draw(st.sampled_from([i, j])) if rel is Relation.ABOVE_BELOW else None
                edges.append(Edge(i, j, rel, top))
    return SceneGraph(nodes, edges)


@settings(max_examples=80)
@given(graphs(), st.integers(0, 4), st.integers(0, 4), st.sampled_from(["above", "below", "near"]))
def test_answer_properties(g, a, b, word):
    census = Counter(n.class_id for n in g.nodes)
    assert answer(g, Question(QType.COUNTING, a)) == min(3, census[a])
    assert (answer(g, Question(QType.EXISTENCE, a)) == YES) == (census[a] > 0)
    assert sorted(bfs_order(g)) == sorted(n.id for n in g.nodes)
    if a == b:
        return
    q = parse_question(spatial_text(a, b, word))
    got = answer(g, q)
    assert got == answer(g, q)
    if got == YES:
        witnesses = [e for e in g.edges if e.rel is q.relation
                     and {g.node(e.a).class_id, g.node(e.b).class_id} == {q.class_a, q.class_b}
                     and box_relation(g.node(e.a).box, g.node(e.b).box) is q.relation]
        if q.relation is Relation.ABOVE_BELOW:
            witnesses = [e for e in witnesses if g.node(e.top).class_id == q.class_a]
        assert witnesses
