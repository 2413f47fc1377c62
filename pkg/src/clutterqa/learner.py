"""GRU encoder + linear decoder trained by imitation, written against numpy.

Two decoders share the recurrent core: the decoupled one with x (28),
y (28) and o (8 directions + STOP) heads, and a joint 28*28*9 softmax kept
as the control for action-space comparisons. Gradients are exact (manual
backpropagation through time) and float64 throughout.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actions import N_BINS, N_DIRECTIONS, N_O_CLASSES, STOP, STOP_ACTION, DiscreteAction, continuize
from .graph import Relation
from .qa import QType, Question
from .world import BIN_SIZE, GRID_SIZE, N_CLASSES, Observation

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "clutterqa-gru"
CHECKPOINT_VERSION = 1
DEFAULT_GRID = 7
DEFAULT_HIDDEN = 64
QUESTION_DIM = 3 + N_CLASSES + N_CLASSES + 2
ACTION_DIM = N_BINS + N_BINS + N_O_CLASSES

HEAD_WEIGHTS = {"x": 0.25, "y": 0.25, "o": 0.5}
HEAD_SIZES = {
    "decoupled": {"x": N_BINS, "y": N_BINS, "o": N_O_CLASSES},
    "joint": {"joint": N_BINS * N_BINS * N_O_CLASSES},
}
GATES = ("z", "r", "n")
_QTYPES = (QType.EXISTENCE, QType.COUNTING, QType.SPATIAL)
_RELATIONS = (Relation.ABOVE_BELOW, Relation.NEARBY)


def state_dim(grid: int = DEFAULT_GRID) -> int:
    return grid * grid * N_CLASSES + QUESTION_DIM + ACTION_DIM


def _overlap_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) integer overlaps, measured on a common axis of length src * dst."""
    m = np.zeros((dst, src), dtype=np.int64)
    for i in range(dst):
        for j in range(src):
            m[i, j] = max(0, min((i + 1) * src, (j + 1) * dst) - max(i * src, j * dst))
    return m


def downsample(grid: np.ndarray, size: int) -> np.ndarray:
    """Area-weighted average of a (S, S, C) coverage grid onto (size, size, C)."""
    src = grid.shape[0]
    m = _overlap_matrix(src, size)
    # one division at the end keeps fully covered cells at exactly 1.0
    return np.einsum("ia,abc,jb->ijc", m, grid, m) / float(src * src)


def encode_state(obs: Observation, q: Question, last: DiscreteAction | None,
                 grid: int = DEFAULT_GRID) -> np.ndarray:
    """[visual (grid, grid, class) row-major | qtype | class_a | class_b | relation | last x | last y | last o]"""
    visual = downsample(obs.class_grid, grid).ravel() if grid != GRID_SIZE else obs.class_grid.ravel()
    qv = np.zeros(QUESTION_DIM)
    qv[_QTYPES.index(q.qtype)] = 1.0
    qv[3 + q.class_a] = 1.0
    if q.class_b is not None:
        qv[3 + N_CLASSES + q.class_b] = 1.0
        qv[3 + 2 * N_CLASSES + _RELATIONS.index(q.relation)] = 1.0
    av = np.zeros(ACTION_DIM)
    if last is not None:
        av[last.x_bin] = 1.0
        av[N_BINS + last.y_bin] = 1.0
        av[2 * N_BINS + last.o_class] = 1.0
    return np.concatenate([visual, qv, av])


def encode_trajectory(traj, grid: int = DEFAULT_GRID) -> tuple[np.ndarray, list[DiscreteAction]]:
    states, targets, last = [], [], None
    for step in traj.steps:
        states.append(encode_state(step.observation, step.question, last, grid))
        targets.append(step.action)
        last = step.action
    return np.stack(states), targets


@dataclass
class GruParams:
    arrays: dict[str, np.ndarray]
    D: int
    H: int
    G: int = DEFAULT_GRID
    kind: str = "decoupled"

    @property
    def heads(self) -> dict[str, int]:
        return HEAD_SIZES[self.kind]

    def copy(self) -> "GruParams":
        return GruParams({k: v.copy() for k, v in self.arrays.items()}, self.D, self.H, self.G, self.kind)


def init_params(D: int, H: int = DEFAULT_HIDDEN, seed: int = 0, kind: str = "decoupled",
                G: int = DEFAULT_GRID) -> GruParams:
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(H)
    arrays = {}
    for g in GATES:
        arrays[f"W_{g}"] = rng.uniform(-k, k, (H, D))
        arrays[f"U_{g}"] = rng.uniform(-k, k, (H, H))
        arrays[f"b_{g}"] = rng.uniform(-k, k, H)
    for name, size in HEAD_SIZES[kind].items():
        arrays[f"V_{name}"] = rng.uniform(-k, k, (size, H))
        arrays[f"c_{name}"] = rng.uniform(-k, k, size)
    return GruParams(arrays, D, H, G, kind)


def zeros_like(params: GruParams) -> GruParams:
    return GruParams({k: np.zeros_like(v) for k, v in params.arrays.items()},
                     params.D, params.H, params.G, params.kind)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def gru_step(params: GruParams, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """h' = (1 - z) * h + z * n with z, r sigmoid gates and n = tanh(W x + U (r * h) + b)."""
    p = params.arrays
    if x.shape != (params.D,) or h.shape != (params.H,):
        raise ValueError(f"expected x {(params.D,)} and h {(params.H,)}, got {x.shape} and {h.shape}")
    z = _sigmoid(p["W_z"] @ x + p["U_z"] @ h + p["b_z"])
    r = _sigmoid(p["W_r"] @ x + p["U_r"] @ h + p["b_r"])
    n = np.tanh(p["W_n"] @ x + p["U_n"] @ (r * h) + p["b_n"])
    return (1.0 - z) * h + z * n


def _run(params: GruParams, X: np.ndarray):
    p = params.arrays
    T = X.shape[0]
    if X.ndim != 2 or X.shape[1] != params.D or T == 0:
        raise ValueError(f"expected a non-empty (T, {params.D}) state sequence, got {X.shape}")
    xz, xr, xn = X @ p["W_z"].T + p["b_z"], X @ p["W_r"].T + p["b_r"], X @ p["W_n"].T + p["b_n"]
    hs = np.zeros((T + 1, params.H))
    zs, rs, ns = (np.empty((T, params.H)) for _ in range(3))
    for t in range(T):
        h = hs[t]
        z = _sigmoid(xz[t] + p["U_z"] @ h)
        r = _sigmoid(xr[t] + p["U_r"] @ h)
        n = np.tanh(xn[t] + p["U_n"] @ (r * h))
        hs[t + 1] = (1.0 - z) * h + z * n
        zs[t], rs[t], ns[t] = z, r, n
    logits = {name: hs[1:] @ p[f"V_{name}"].T + p[f"c_{name}"] for name in params.heads}
    return logits, (hs, zs, rs, ns)


def forward(params: GruParams, X: np.ndarray) -> dict[str, np.ndarray]:
    """Per-head (T, K) logits; row t depends on states 0..t only."""
    return _run(params, X)[0]


def _log_softmax(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=-1, keepdims=True)
    return a - m - np.log(np.exp(a - m).sum(axis=-1, keepdims=True))


def joint_index(a: DiscreteAction) -> int:
    return (a.x_bin * N_BINS + a.y_bin) * N_O_CLASSES + a.o_class


def _stop_mask() -> np.ndarray:
    m = np.zeros(N_BINS * N_BINS * N_O_CLASSES, dtype=bool)
    m[STOP::N_O_CLASSES] = True
    return m


_JOINT_STOP = _stop_mask()


def _head_terms(params: GruParams, logits, targets):
    """Per head: (loss, dlogits before weighting), both averaged over timesteps."""
    T = len(targets)
    out = {}
    if params.kind == "decoupled":
        idx = {
            "x": np.array([a.x_bin for a in targets]),
            "y": np.array([a.y_bin for a in targets]),
            "o": np.array([a.o_class for a in targets]),
        }
        live = np.array([not a.is_stop for a in targets], dtype=float)
        for name in params.heads:
            lsm = _log_softmax(logits[name])
            mask = live if name in ("x", "y") else np.ones(T)
            nll = -lsm[np.arange(T), idx[name]]
            grad = np.exp(lsm)
            grad[np.arange(T), idx[name]] -= 1.0
            out[name] = (float((mask * nll).sum() / T), grad * (mask / T)[:, None])
    else:
        lsm = _log_softmax(logits["joint"])
        nll = np.empty(T)
        grad = np.exp(lsm)
        for t, a in enumerate(targets):
            if a.is_stop:
                # STOP leaves x and y free: marginalize over every STOP cell
                group = lsm[t, _JOINT_STOP]
                lg = np.logaddexp.reduce(group)
                nll[t] = -lg
                grad[t, _JOINT_STOP] -= np.exp(group - lg)
            else:
                j = joint_index(a)
                nll[t] = -lsm[t, j]
                grad[t, j] -= 1.0
        out["joint"] = (float(nll.sum() / T), grad / T)
    return out


def head_weights(kind: str) -> dict[str, float]:
    return HEAD_WEIGHTS if kind == "decoupled" else {"joint": 1.0}


def loss(params: GruParams, logits, targets) -> tuple[float, dict[str, float]]:
    """Weighted cross-entropy: 0.25 x + 0.25 y + 0.5 o (x, y masked on STOP steps)."""
    if len(targets) != next(iter(logits.values())).shape[0]:
        raise ValueError("logits and targets differ in length")
    terms = _head_terms(params, logits, targets)
    w = head_weights(params.kind)
    per = {k: v[0] for k, v in terms.items()}
    return sum(w[k] * per[k] for k in per), per


def loss_and_grad(params: GruParams, X: np.ndarray, targets) -> tuple[float, dict[str, float], GruParams]:
    if len(targets) != X.shape[0]:
        raise ValueError("states and targets differ in length")
    p = params.arrays
    logits, (hs, zs, rs, ns) = _run(params, X)
    terms = _head_terms(params, logits, targets)
    w = head_weights(params.kind)
    per = {k: v[0] for k, v in terms.items()}
    total = sum(w[k] * per[k] for k in per)

    g = zeros_like(params).arrays
    dH = np.zeros((X.shape[0], params.H))
    for name, (_, dlog) in terms.items():
        dlog = w[name] * dlog
        g[f"V_{name}"] = dlog.T @ hs[1:]
        g[f"c_{name}"] = dlog.sum(axis=0)
        dH += dlog @ p[f"V_{name}"]

    T = X.shape[0]
    daz, dar, dan = (np.zeros((T, params.H)) for _ in range(3))
    dh_next = np.zeros(params.H)
    for t in reversed(range(T)):
        h_prev, z, r, n = hs[t], zs[t], rs[t], ns[t]
        dh = dH[t] + dh_next
        dz = dh * (n - h_prev)
        dn = dh * z
        dh_prev = dh * (1.0 - z)
        da_n = dn * (1.0 - n * n)
        g["U_n"] += np.outer(da_n, r * h_prev)
        drh = p["U_n"].T @ da_n
        dr = drh * h_prev
        dh_prev += drh * r
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        g["U_z"] += np.outer(da_z, h_prev)
        g["U_r"] += np.outer(da_r, h_prev)
        dh_prev += p["U_z"].T @ da_z + p["U_r"].T @ da_r
        daz[t], dar[t], dan[t] = da_z, da_r, da_n
        dh_next = dh_prev
    for gate, da in zip(GATES, (daz, dar, dan)):
        g[f"W_{gate}"] = da.T @ X
        g[f"b_{gate}"] = da.sum(axis=0)
    return total, per, GruParams(g, params.D, params.H, params.G, params.kind)


def decode_last(params: GruParams, logits) -> DiscreteAction:
    """Argmax per head at the last timestep (lowest index wins ties); o = 8 means STOP."""
    if params.kind == "joint":
        j = int(np.argmax(logits["joint"][-1]))
        xy, o = divmod(j, N_O_CLASSES)
        x, y = divmod(xy, N_BINS)
        return STOP_ACTION if o == STOP else DiscreteAction(x, y, o)
    o = int(np.argmax(logits["o"][-1]))
    if o == STOP:
        return STOP_ACTION
    return DiscreteAction(int(np.argmax(logits["x"][-1])), int(np.argmax(logits["y"][-1])), o)


def predict(params: GruParams, states) -> DiscreteAction:
    X = np.atleast_2d(np.asarray(states, dtype=float))
    return decode_last(params, forward(params, X))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    seed: int = 0
    hidden: int = DEFAULT_HIDDEN
    grid: int = DEFAULT_GRID
    kind: str = "decoupled"

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class LossCurve:
    kind: str
    rows: list[dict] = field(default_factory=list)  # epoch, total and one entry per head

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])

    def write_csv(self, path) -> None:
        heads = ["loss_x", "loss_y", "loss_o"] if self.kind == "decoupled" else ["loss_joint"]
        with open(path, "w") as fh:
            fh.write(",".join(["epoch", "total"] + heads) + "\n")
            for r in self.rows:
                fh.write(",".join([str(r["epoch"])] + [repr(float(r[k])) for k in ["total"] + heads]) + "\n")


def train(demos, config: TrainConfig = TrainConfig()) -> tuple[GruParams, LossCurve]:
    """Momentum gradient descent, one update per demonstration, shuffled each epoch.

    ``demos`` are trajectories or pre-encoded (states, targets) pairs.
    """
    data = [d if isinstance(d, tuple) else encode_trajectory(d, config.grid) for d in demos]
    if not data:
        raise ValueError("no demonstrations to train on")
    D = data[0][0].shape[1]
    params = init_params(D, config.hidden, config.seed, config.kind, config.grid)
    velocity = zeros_like(params).arrays
    rng = np.random.default_rng([config.seed, 1])
    curve = LossCurve(config.kind)
    for epoch in range(1, config.epochs + 1):
        sums: dict[str, float] = {}
        for i in rng.permutation(len(data)):
            X, targets = data[i]
            total, per, grads = loss_and_grad(params, X, targets)
            if not np.isfinite(total):
                raise FloatingPointError(f"non-finite loss {total} at epoch {epoch}, demo {i}")
            sums["total"] = sums.get("total", 0.0) + total
            for k, v in per.items():
                sums[f"loss_{k}"] = sums.get(f"loss_{k}", 0.0) + v
            for k, gk in grads.arrays.items():
                velocity[k] = config.momentum * velocity[k] - config.lr * gk
                params.arrays[k] += velocity[k]
        row = {"epoch": epoch, **{k: v / len(data) for k, v in sums.items()}}
        curve.rows.append(row)
        log.debug("epoch %d total %.4f", epoch, row["total"])
    return params, curve


def evaluate_loss(params: GruParams, demos) -> dict[str, float]:
    data = [d if isinstance(d, tuple) else encode_trajectory(d, params.G) for d in demos]
    sums: dict[str, float] = {}
    for X, targets in data:
        total, per = loss(params, forward(params, X), targets)
        sums["total"] = sums.get("total", 0.0) + total
        for k, v in per.items():
            sums[f"loss_{k}"] = sums.get(f"loss_{k}", 0.0) + v
    return {k: v / len(data) for k, v in sums.items()}


def marginal_logits(params: GruParams, logits) -> dict[str, np.ndarray]:
    """Per-head log-probabilities; for the joint head, the x, y and o marginals."""
    if params.kind == "decoupled":
        return {k: _log_softmax(v) for k, v in logits.items()}
    lj = _log_softmax(logits["joint"]).reshape(-1, N_BINS, N_BINS, N_O_CLASSES)
    return {
        "x": np.logaddexp.reduce(np.logaddexp.reduce(lj, axis=3), axis=2),
        "y": np.logaddexp.reduce(np.logaddexp.reduce(lj, axis=3), axis=1),
        "o": np.logaddexp.reduce(np.logaddexp.reduce(lj, axis=2), axis=1),
    }


def weighted_loss(params: GruParams, demos) -> float:
    """Mean 0.25/0.25/0.5 loss over demos for either decoder, on a common scale."""
    view = GruParams({}, params.D, params.H, params.G, "decoupled")
    totals = []
    for d in demos:
        X, targets = d if isinstance(d, tuple) else encode_trajectory(d, params.G)
        totals.append(loss(view, marginal_logits(params, forward(params, X)), targets)[0])
    return float(np.mean(totals))


def push_predictions(params: GruParams, X: np.ndarray) -> list[DiscreteAction]:
    """Teacher-forced per-step push guesses, with the direction restricted to the 8 pushes."""
    logits = forward(params, X)
    out = []
    for t in range(X.shape[0]):
        if params.kind == "joint":
            row = logits["joint"][t].reshape(N_BINS, N_BINS, N_O_CLASSES)[:, :, :N_DIRECTIONS]
            x, y, o = np.unravel_index(int(np.argmax(row)), row.shape)
        else:
            x = np.argmax(logits["x"][t])
            y = np.argmax(logits["y"][t])
            o = np.argmax(logits["o"][t][:N_DIRECTIONS])
        out.append(DiscreteAction(int(x), int(y), int(o)))
    return out


def imitation_scores(params: GruParams, demos) -> tuple[float, float]:
    """Mean (dis_e, a_e) over every demonstrated push, teacher-forced."""
    from .bench import imitation_error

    errs = []
    for d in demos:
        X, targets = d if isinstance(d, tuple) else encode_trajectory(d, params.G)
        for pred, tgt in zip(push_predictions(params, X), targets):
            if not tgt.is_stop:
                errs.append(imitation_error(continuize(pred), continuize(tgt)))
    arr = np.array(errs)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def uniform_imitation_scores(demos, grid: int = DEFAULT_GRID) -> tuple[float, float]:
    """Expected (dis_e, a_e) of a push drawn uniformly from all 28*28*8 actions.

    Exact expectation over the action set rather than a sampled baseline.
    """
    from .bench import imitation_error

    pushes = [continuize(DiscreteAction(x, y, o))
              for x in range(N_BINS) for y in range(N_BINS) for o in range(N_DIRECTIONS)]
    mids = np.array([p.midpoint for p in pushes])
    dirs = np.array([p.direction_class for p in pushes])
    # angle error depends on the direction pair only
    ang = np.array([[imitation_error(continuize(DiscreteAction(0, 0, i)),
                                     continuize(DiscreteAction(0, 0, j)))[1]
                     for j in range(N_DIRECTIONS)] for i in range(N_DIRECTIONS)])
    dis, a_e = [], []
    for d in demos:
        _, targets = d if isinstance(d, tuple) else encode_trajectory(d, grid)
        for tgt in targets:
            if not tgt.is_stop:
                push = continuize(tgt)
                dis.append(np.hypot(*(mids - push.midpoint).T).mean() / BIN_SIZE)
                a_e.append(ang[dirs, push.direction_class].mean())
    return float(np.mean(dis)), float(np.mean(a_e))


class LearnedPolicy:
    """Runs the trained network online, feeding back its own last action."""

    name = "learned"

    def __init__(self, params: GruParams):
        self.params = params

    def reset(self, scene, q: Question) -> None:
        self.q = q
        self.h = np.zeros(self.params.H)
        self.last = None

    def act(self, scene, obs: Observation) -> DiscreteAction:
        x = encode_state(obs, self.q, self.last, self.params.G)
        self.h = gru_step(self.params, x, self.h)
        logits = {name: (self.params.arrays[f"V_{name}"] @ self.h + self.params.arrays[f"c_{name}"])[None, :]
                  for name in self.params.heads}
        action = decode_last(self.params, logits)
        self.last = action
        return action


def save_checkpoint(params: GruParams, path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "D": params.D, "H": params.H, "G": params.G, "kind": params.kind,
        "arrays": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in sorted(params.arrays.items())},
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_checkpoint(path) -> GruParams:
    d = json.loads(Path(path).read_text())
    if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version {CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} checkpoint")
    arrays = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["arrays"].items()}
    return GruParams(arrays, d["D"], d["H"], d["G"], d["kind"])
