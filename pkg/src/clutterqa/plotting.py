"""Figures for training curves, ablations, metrics and episode frames.

Everything is drawn with the Agg backend and saved with fixed metadata so
that re-running a command rewrites byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import FancyArrow, Rectangle  # noqa: E402

from .actions import continuize, direction_vector  # noqa: E402
from .graph import Relation, center  # noqa: E402
from .world import BIN_SIZE, CLASS_NAMES, N_CLASSES, apply_push  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "svg.hashsalt": "clutterqa",
    "svg.fonttype": "none",
    "path.simplify": False,
}
HEAD_COLORS = {"total": "black", "loss_x": "tab:blue", "loss_y": "tab:orange", "loss_o": "tab:green",
               "loss_joint": "tab:red"}


def _save(fig, path) -> Path:
    path = Path(path)
    fmt = path.suffix.lstrip(".") or "png"
    meta = {"Date": None} if fmt == "svg" else {"Software": None} if fmt == "png" else {}
    fig.savefig(path, format=fmt, metadata=meta)
    plt.close(fig)
    return path


def class_color(c: int):
    return plt.get_cmap("tab20")(c % N_CLASSES)


def plot_loss_curves(curves: dict, path) -> Path:
    """``curves``: label -> LossCurve. Total loss on the left, per-head losses on the right."""
    with plt.rc_context(STYLE):
        fig, (ax_t, ax_h) = plt.subplots(1, 2, figsize=(8, 3.2))
        for label, curve in curves.items():
            epochs = curve.column("epoch")
            ax_t.plot(epochs, curve.column("total"), label=label)
            for key in curve.rows[0]:
                if key.startswith("loss_"):
                    ax_h.plot(epochs, curve.column(key), color=HEAD_COLORS.get(key),
                              label=f"{label} {key[5:]}", lw=1)
        for ax, title in ((ax_t, "total loss"), (ax_h, "per-head loss")):
            ax.set_xlabel("epoch")
            ax.set_yscale("log")
            ax.set_title(title)
            ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_ablation(table: dict, path) -> Path:
    """``table``: max_steps -> {question type or "overall": accuracy}."""
    steps = sorted(table)
    keys = list(table[steps[0]])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for k in keys:
            style = dict(color="black", lw=2) if k == "overall" else dict(lw=1)
            ax.plot(range(len(steps)), [table[s][k] for s in steps], marker="o", label=k, **style)
        ax.set_xticks(range(len(steps)), [str(s) for s in steps])
        ax.set_xlabel("max steps")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        return _save(fig, path)


def plot_metrics(report, path) -> Path:
    """Grouped precision / recall / accuracy bars per question type."""
    types = list(report.per_type)
    fields = ("precision", "recall", "accuracy")
    width = 0.8 / len(fields)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for i, f in enumerate(fields):
            xs = [j + (i - 1) * width for j in range(len(types))]
            ax.bar(xs, [getattr(report.per_type[t], f) for t in types], width, label=f)
        ax.set_xticks(range(len(types)), types)
        ax.set_ylim(0, 1.05)
        ax.legend(frameon=False, ncol=3, loc="upper center", bbox_to_anchor=(0.5, 1.15))
        fig.tight_layout()
        return _save(fig, path)


def draw_scene(ax, scene, graph=None, push=None, title: str = "") -> None:
    """Boxes in stacking order (lowest first), optional graph overlay and push arrow."""
    for o in sorted(scene.objects, key=lambda o: o.z):
        x0, y0, x1, y1 = o.box
        ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, facecolor=class_color(o.class_id),
                               edgecolor="black", lw=0.5, alpha=0.9))
        ax.text(x0 + 1, y0 + 7, CLASS_NAMES[o.class_id], fontsize=5)
    if graph is not None:
        pos = {n.id: center(n.box) for n in graph.nodes}
        for e in graph.edges:
            (px, py), (qx, qy) = pos[e.a], pos[e.b]
            ls = "-" if e.rel is Relation.ABOVE_BELOW else ":"
            ax.plot([px, qx], [py, qy], ls, color="dimgray", lw=0.8)
        for n, (cx, cy) in pos.items():
            ax.plot(cx, cy, "o", ms=2.5, color="black")
    if push is not None:
        dx, dy = direction_vector(push.direction_class)
        ax.add_patch(FancyArrow(push.start[0], push.start[1], dx * push.distance, dy * push.distance,
                                width=1.5, head_width=7, length_includes_head=True, color="crimson"))
    ax.set_xlim(0, BIN_SIZE)
    ax.set_ylim(BIN_SIZE, 0)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    for side in ax.spines.values():
        side.set_visible(True)
    ax.set_title(title)


def render_episode(scene, result, out_dir) -> list[Path]:
    """One SVG per step: the true scene, that step's scene graph and the chosen push."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, step in enumerate(result.trajectory.steps):
        push = continuize(step.action)
        label = "STOP" if push is None else f"push o={step.action.o_class}"
        with plt.rc_context(STYLE):
            fig, ax = plt.subplots(figsize=(4, 4.3))
            draw_scene(ax, scene, result.graphs[t] if t < len(result.graphs) else None, push,
                       f"t={t}: {label}")
            if t == len(result.trajectory.steps) - 1:
                fig.text(0.5, 0.02, f"{result.question.text}  answer: {result.predicted}"
                         f" (truth {result.truth})", ha="center", fontsize=7)
            paths.append(_save(fig, out_dir / f"frame_{t:02d}.svg"))
        if push is not None:
            scene, _ = apply_push(scene, push)
    return paths
