"""Dataset generation, episode execution and evaluation metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .actions import STOP_ACTION, DiscreteAction, PushAction, continuize, direction_vector
from .graph import DynamicSceneGraph, Relation, SceneGraph, box_relation, build_graph
from .oracle import MAX_STEPS, OraclePolicy, Step, Trajectory, demonstrate, ground_truth_answer
from .qa import MAX_COUNT, NO, YES, QType, Question, answer, counting_text, existence_text, parse_question, spatial_text
from .world import BIN_SIZE, N_CLASSES, Scene, apply_push, generate_scene, observe

ANSWER_VOCAB = {
    QType.EXISTENCE: (YES, NO),
    QType.COUNTING: (0, 1, 2, 3),
    QType.SPATIAL: (YES, NO),
}
SPLITS = ("train", "eval", "test")
P_PRESENT = 0.65  # EXISTENCE asks about a class that is in the bin this often
P_RELATED = 0.6  # SPATIAL asks about a truly related pair this often


class EpisodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    n_series: int = 100
    questions_per_type: int = 10
    split: tuple[int, int, int] | None = None  # None: 80/10/10 proportions of n_series
    difficulty: str = "mixed"  # easy | hard | mixed (alternating by series)
    seed: int = 0

    def __post_init__(self):
        if self.split is None:
            n_eval = self.n_series // 10
            object.__setattr__(self, "split", (self.n_series - 2 * n_eval, n_eval, n_eval))
        object.__setattr__(self, "split", tuple(int(v) for v in self.split))
        if sum(self.split) != self.n_series or len(self.split) != 3:
            raise ValueError(f"split {self.split} must have three parts summing to n_series={self.n_series}")
        if self.difficulty not in ("easy", "hard", "mixed"):
            raise ValueError(f"unknown difficulty mix {self.difficulty!r}")
        if self.n_series < 1 or self.questions_per_type < 1:
            raise ValueError("n_series and questions_per_type must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def series_difficulty(self, series: int) -> str:
        if self.difficulty == "mixed":
            return "easy" if series % 2 == 0 else "hard"
        return self.difficulty

    def scene_seed(self, series: int) -> int:
        return self.seed * 1_000_003 + series

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class QARecord:
    series: int
    index: int
    question: Question
    answer: object

    def to_dict(self) -> dict:
        d = {"series": self.series, "index": self.index}
        d.update(self.question.to_dict())
        d["answer"] = self.answer
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QARecord":
        return cls(d["series"], d["index"], Question.from_dict(d), d["answer"])


@dataclass
class Dataset:
    config: DatasetConfig
    scenes: dict[int, Scene]
    questions: list[QARecord]
    splits: dict[str, list[int]]

    def records(self, split: str | None = None) -> list[QARecord]:
        if split is None:
            return list(self.questions)
        keep = set(self.splits[split])
        return [r for r in self.questions if r.series in keep]


def _sample_questions(scene: Scene, n: int, rng: np.random.Generator) -> list[Question]:
    present = sorted({o.class_id for o in scene.objects})
    absent = sorted(set(range(N_CLASSES)) - set(present))
    out = []
    for _ in range(n):
        if present and (not absent or rng.random() < P_PRESENT):
            c = int(rng.choice(present))
        else:
            c = int(rng.choice(absent))
        out.append(parse_question(existence_text(c)))
    by_count: dict[int, list[int]] = {}
    for c in range(N_CLASSES):
        by_count.setdefault(min(MAX_COUNT, len(scene.of_class(c))), []).append(c)
    counts = sorted(by_count)
    for _ in range(n):
        # answers 0..3 roughly equally likely, as far as the scene allows
        k = counts[int(rng.integers(len(counts)))]
        out.append(parse_question(counting_text(int(rng.choice(by_count[k])))))

    related = []
    for i, a in enumerate(scene.objects):
        for b in scene.objects[i + 1:]:
            if a.class_id != b.class_id:
                rel = box_relation(a.box, b.box)
                if rel is not Relation.NONE:
                    related.append((a, b, rel))
    for _ in range(n):
        if related and rng.random() < P_RELATED:
            a, b, rel = related[int(rng.integers(len(related)))]
            if rel is Relation.NEARBY:
                if rng.random() < 0.5:
                    a, b = b, a
                text = spatial_text(a.class_id, b.class_id, "near")
            else:
                top, bottom = (a, b) if a.z > b.z else (b, a)
                if rng.random() < 0.5:
                    text = spatial_text(top.class_id, bottom.class_id, "above")
                else:
                    text = spatial_text(bottom.class_id, top.class_id, "below")
        else:
            pool = present if len(present) >= 2 else list(range(N_CLASSES))
            a, b = (int(v) for v in rng.choice(pool, size=2, replace=False))
            word = ("above", "below", "near")[int(rng.integers(3))]
            text = spatial_text(a, b, word)
        out.append(parse_question(text))
    return out


def build_dataset(config: DatasetConfig) -> Dataset:
    scenes, questions = {}, []
    for s in range(config.n_series):
        scene = generate_scene(config.scene_seed(s), config.series_difficulty(s))
        scenes[s] = scene
        rng = np.random.default_rng([config.seed, s, 7])
        for i, q in enumerate(_sample_questions(scene, config.questions_per_type, rng)):
            questions.append(QARecord(s, i, q, ground_truth_answer(scene, q)))
    order = np.random.default_rng([config.seed, 11]).permutation(config.n_series)
    n_train, n_eval, _ = config.split
    splits = {
        "train": sorted(int(v) for v in order[:n_train]),
        "eval": sorted(int(v) for v in order[n_train:n_train + n_eval]),
        "test": sorted(int(v) for v in order[n_train + n_eval:]),
    }
    return Dataset(config, scenes, questions, splits)


def generate_dataset(config: DatasetConfig, out_dir) -> Dataset:
    """Write manifest.json, scenes.jsonl and questions.jsonl under ``out_dir``."""
    ds = build_dataset(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scenes.jsonl", "w") as fh:
        for s, scene in ds.scenes.items():
            fh.write(json.dumps({"series": s, **scene.to_dict()}, sort_keys=True) + "\n")
    with open(out / "questions.jsonl", "w") as fh:
        for r in ds.questions:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    counts = {t.value: sum(1 for r in ds.questions if r.question.qtype is t) for t in QType}
    manifest = {
        "config": {**asdict(config), "split": list(config.split)},
        "splits": ds.splits,
        "split_sizes": {k: len(v) for k, v in ds.splits.items()},
        "question_counts": counts,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ds


def load_dataset(path) -> Dataset:
    p = Path(path)
    manifest = json.loads((p / "manifest.json").read_text())
    config = DatasetConfig.from_dict(manifest["config"])
    scenes = {}
    with open(p / "scenes.jsonl") as fh:
        for line in fh:
            d = json.loads(line)
            scenes[d["series"]] = Scene.from_dict(d)
    with open(p / "questions.jsonl") as fh:
        questions = [QARecord.from_dict(json.loads(line)) for line in fh if line.strip()]
    return Dataset(config, scenes, questions, {k: list(v) for k, v in manifest["splits"].items()})


class StopPolicy:
    """Never explores; the zero-manipulation baseline."""

    name = "stop"

    def reset(self, scene, q):
        pass

    def act(self, scene, obs):
        return STOP_ACTION


@dataclass
class EpisodeResult:
    question: Question
    predicted: object
    truth: object
    T: int
    trajectory: Trajectory
    graphs: list[SceneGraph]
    final_graph: SceneGraph
    final_scene: Scene = field(repr=False)

    @property
    def correct(self) -> bool:
        return self.predicted == self.truth

    def to_dict(self) -> dict:
        return {
            "question": self.question.to_dict(),
            "predicted": self.predicted,
            "truth": self.truth,
            "T": self.T,
            "actions": [a.to_list() for a in self.trajectory.actions],
        }


def run_episode(scene: Scene, q: Question, policy, max_steps: int = MAX_STEPS,
                truth=None) -> EpisodeResult:
    """Observe, update the dynamic graph, act; answer once STOP or max_steps is reached."""
    if max_steps < 0:
        raise ValueError("max_steps must be >= 0")
    if truth is None:
        truth = ground_truth_answer(scene, q)
    policy.reset(scene, q)
    dsg = DynamicSceneGraph()
    traj = Trajectory(scene_seed=scene.seed)
    pushes = 0
    for t in range(max_steps + 1):
        obs = observe(scene, t)
        dsg.update(build_graph(obs))
        if t == max_steps:
            action = STOP_ACTION
        else:
            action = policy.act(scene, obs)
            if not isinstance(action, DiscreteAction):
                raise EpisodeError(f"policy {getattr(policy, 'name', policy)!r} returned {action!r} at t={t}")
        traj.steps.append(Step(obs, q, action))
        if action.is_stop:
            break
        scene, _ = apply_push(scene, continuize(action))
        pushes += 1
    final = dsg.fused()
    return EpisodeResult(q, answer(final, q), truth, pushes, traj, dsg.frames, final, scene)


def run_split(ds: Dataset, split: str, policy, max_steps: int = MAX_STEPS) -> list[EpisodeResult]:
    return [run_episode(ds.scenes[r.series], r.question, policy, max_steps, r.answer)
            for r in ds.records(split)]


def demonstrations(ds: Dataset, split: str, max_steps: int = MAX_STEPS, limit: int | None = None,
                   seed: int = 0):
    """(demo index, series, question index, Trajectory) for the questions of a split.

    With ``limit``, a seeded subset spread over the whole split is used (kept in
    record order) rather than the first few series.
    """
    records = ds.records(split)
    if limit is not None and limit < len(records):
        pick = np.sort(np.random.default_rng([seed, 13]).choice(len(records), limit, replace=False))
        records = [records[i] for i in pick]
    out = []
    for r in records:
        traj, _ = demonstrate(ds.scenes[r.series], r.question, max_steps)
        out.append((len(out), r.series, r.index, traj))
    return out


def replay_observations(scene: Scene, actions: list[DiscreteAction]):
    """Observations seen before each action when ``actions`` are executed from ``scene``."""
    obs = []
    for t, a in enumerate(actions):
        obs.append(observe(scene, t))
        if not a.is_stop:
            scene, _ = apply_push(scene, continuize(a))
    return obs


def imitation_error(pred: PushAction | None, imitated: PushAction | None) -> tuple[float, float]:
    """(position error / 224, direction error / 180 deg) between two pushes' segment midpoints."""
    if pred is None or imitated is None:
        raise ValueError("imitation error is undefined for STOP")
    (xo, yo), (xi, yi) = pred.midpoint, imitated.midpoint
    dis_e = math.hypot(xo - xi, yo - yi) / BIN_SIZE
    u, v = direction_vector(pred.direction_class), direction_vector(imitated.direction_class)
    cos = max(-1.0, min(1.0, u[0] * v[0] + u[1] * v[1]))
    return dis_e, math.degrees(math.acos(cos)) / 180.0


@dataclass
class TypeMetrics:
    precision: float
    recall: float
    accuracy: float
    n: int


@dataclass
class MetricsReport:
    per_type: dict[str, TypeMetrics]
    dis_e: float | None = None
    a_e: float | None = None

    def rows(self) -> list[dict]:
        out = [{"qtype": k, **asdict(v)} for k, v in self.per_type.items()]
        if self.dis_e is not None:
            out.append({"qtype": "IMITATION", "dis_e": self.dis_e, "a_e": self.a_e})
        return out

    def write_csv(self, path) -> None:
        cols = ["qtype", "precision", "recall", "accuracy", "n", "dis_e", "a_e"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, cols, lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def macro_precision_recall(preds: list, truths: list) -> tuple[float, float]:
    """One-vs-rest precision/recall averaged over labels seen in either list; 0/0 counts as 0."""
    labels = sorted(set(preds) | set(truths), key=str)
    ps, rs = [], []
    for lab in labels:
        tp = sum(1 for p, t in zip(preds, truths) if p == lab and t == lab)
        n_pred = sum(1 for p in preds if p == lab)
        n_true = sum(1 for t in truths if t == lab)
        ps.append(tp / n_pred if n_pred else 0.0)
        rs.append(tp / n_true if n_true else 0.0)
    return float(np.mean(ps)), float(np.mean(rs))


def qa_metrics(qtypes: list, predictions: list, truths: list) -> MetricsReport:
    if not (len(qtypes) == len(predictions) == len(truths)):
        raise ValueError("qtypes, predictions and truths must have equal length")
    per = {}
    for t in QType:
        idx = [i for i, q in enumerate(qtypes) if QType(q) is t]
        if not idx:
            continue
        p = [predictions[i] for i in idx]
        y = [truths[i] for i in idx]
        prec, rec = macro_precision_recall(p, y)
        acc = sum(1 for a, b in zip(p, y) if a == b) / len(idx)
        per[t.value] = TypeMetrics(prec, rec, acc, len(idx))
    return MetricsReport(per)


def episode_metrics(results: list[EpisodeResult]) -> MetricsReport:
    return qa_metrics([r.question.qtype for r in results], [r.predicted for r in results],
                      [r.truth for r in results])


def accuracy(results: list[EpisodeResult]) -> float:
    return sum(r.correct for r in results) / len(results) if results else float("nan")


def ablate_max_steps(ds: Dataset, split: str, policy, steps=(0, 1, 5)) -> dict[int, list[EpisodeResult]]:
    return {k: run_split(ds, split, policy, k) for k in steps}


def write_ablation_csv(sweep: dict[int, list[EpisodeResult]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["max_steps"] + [t.value for t in QType] + ["overall", "n"])
        for k, res in sweep.items():
            row = [k]
            for t in QType:
                sub = [r for r in res if r.question.qtype is t]
                row.append(f"{accuracy(sub):.6f}")
            row += [f"{accuracy(res):.6f}", len(res)]
            w.writerow(row)


__all__ = [
    "DatasetConfig", "Dataset", "QARecord", "EpisodeResult", "EpisodeError", "MetricsReport",
    "StopPolicy", "OraclePolicy", "ground_truth_answer", "run_episode", "run_split", "build_dataset",
    "generate_dataset", "load_dataset", "demonstrations", "imitation_error", "qa_metrics",
    "episode_metrics", "ablate_max_steps",
]
