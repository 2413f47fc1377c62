import pytest

from clutterqa.world import ObjectInstance, Scene


def make_scene(*specs, seed=0):
    """Scene from (class_id, box) pairs; later entries sit higher."""
    used = {}
    objs = []
    for z, (c, box) in enumerate(specs):
        inst = used.get(c, 0)
        used[c] = inst + 1
        objs.append(ObjectInstance(z, c, inst, tuple(box), z))
    return Scene(tuple(objs), "easy", seed)


@pytest.fixture
def scene_of():
    return make_scene


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
