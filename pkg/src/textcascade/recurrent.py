"""The fast first stage: recurrent scorers over word-vector sequences.

The GRU follows the matrices-only parameterization (six recurrence matrices
plus an output matrix, no bias terms): for step j with input v_j,

    z_j  = sigmoid(Uz v_j + Wz h_{j-1})
    r_j  = sigmoid(Ur v_j + Wr h_{j-1})
    h'_j = tanh(Uh v_j + Wh (h_{j-1} * r_j))
    h_j  = (1 - z_j) * h'_j + z_j * h_{j-1}

with h_0 = 0 and class probabilities y = softmax(O h_m). The LSTM is the
standard forget-gate formulation with zero-initialized hidden and cell
state, kept bias-free to match the GRU's parameter layout.

Training is plain per-sample gradient descent on cross-entropy with full
backpropagation through time. Word vectors are frozen inputs, never
fine-tuned, so the out-of-vocabulary policy stays consistent with the slow
stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .embeddings import WordVectorTable

INIT_SCALE = 0.08  # parameters start uniform in [-INIT_SCALE, INIT_SCALE]

GRU_MATRIX_FIELDS = ("uz", "ur", "uh", "wz", "wr", "wh", "out")
LSTM_MATRIX_FIELDS = ("ui", "uf", "uo", "ug", "wi", "wf", "wo", "wg", "out")

_CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, learning_rate: float):
        super().__init__(
            f"non-finite loss at epoch {epoch} with learning rate {learning_rate}"
        )
        self.epoch = epoch
        self.learning_rate = learning_rate


def _check_dims(name: str, mat: np.ndarray, shape: tuple[int, int]) -> None:
    if mat.shape != shape:
        raise ValueError(f"{name} has shape {mat.shape}, expected {shape}")


@dataclass(frozen=True)
class GruParams:
    uz: np.ndarray
    ur: np.ndarray
    uh: np.ndarray
    wz: np.ndarray
    wr: np.ndarray
    wh: np.ndarray
    out: np.ndarray
    labels: tuple[str, ...]
    seed: int | None = None

    def __post_init__(self) -> None:
        h, d = self.uz.shape
        for name in ("uz", "ur", "uh"):
            _check_dims(name, getattr(self, name), (h, d))
        for name in ("wz", "wr", "wh"):
            _check_dims(name, getattr(self, name), (h, h))
        _check_dims("out", self.out, (len(self.labels), h))

    @property
    def input_dim(self) -> int:
        return self.uz.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.uz.shape[0]

    @property
    def class_count(self) -> int:
        return len(self.labels)

    matrix_fields = GRU_MATRIX_FIELDS
    cell_kind = "gru"


@dataclass(frozen=True)
class LstmParams:
    ui: np.ndarray
    uf: np.ndarray
    uo: np.ndarray
    ug: np.ndarray
    wi: np.ndarray
    wf: np.ndarray
    wo: np.ndarray
    wg: np.ndarray
    out: np.ndarray
    labels: tuple[str, ...]
    seed: int | None = None

    def __post_init__(self) -> None:
        h, d = self.ui.shape
        for name in ("ui", "uf", "uo", "ug"):
            _check_dims(name, getattr(self, name), (h, d))
        for name in ("wi", "wf", "wo", "wg"):
            _check_dims(name, getattr(self, name), (h, h))
        _check_dims("out", self.out, (len(self.labels), h))

    @property
    def input_dim(self) -> int:
        return self.ui.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.ui.shape[0]

    @property
    def class_count(self) -> int:
        return len(self.labels)

    matrix_fields = LSTM_MATRIX_FIELDS
    cell_kind = "lstm"


RecurrentParams = GruParams | LstmParams


@dataclass(frozen=True)
class ClassDistribution:
    """Softmax output over the class catalog."""

    probs: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.probs.shape != (len(self.labels),):
            raise ValueError(
                f"got {self.probs.shape[0] if self.probs.ndim else 0} probabilities "
                f"for {len(self.labels)} labels"
            )
        if np.any(self.probs < 0.0):
            raise ValueError("probabilities must be non-negative")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {total}, expected 1 within 1e-6")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # evaluate via the positive branch to avoid overflow in exp
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    ex = np.exp(shifted)
    return ex / ex.sum()


def _as_inputs(inputs: Sequence[np.ndarray] | np.ndarray, dim: int) -> np.ndarray:
    mat = np.asarray(inputs, dtype=float)
    if mat.ndim == 1:
        mat = mat.reshape(1, -1)
    if mat.ndim != 2 or mat.shape[1] != dim:
        raise ValueError(f"inputs must be (m, {dim}), got shape {mat.shape}")
    if mat.shape[0] < 1:
        raise ValueError("input sequence must contain at least one vector")
    return mat


def gru_forward(
    params: GruParams, inputs: Sequence[np.ndarray] | np.ndarray
) -> tuple[np.ndarray, ClassDistribution]:
    """Run the GRU recurrence; returns all hidden states and the softmax output."""
    vs = _as_inputs(inputs, params.input_dim)
    m = vs.shape[0]
    h = np.zeros(params.hidden_dim)
    hiddens = np.empty((m, params.hidden_dim))
    for j in range(m):
        v = vs[j]
        z = _sigmoid(params.uz @ v + params.wz @ h)
        r = _sigmoid(params.ur @ v + params.wr @ h)
        hc = np.tanh(params.uh @ v + params.wh @ (h * r))
        h = (1.0 - z) * hc + z * h
        hiddens[j] = h
    probs = softmax(params.out @ h)
    return hiddens, ClassDistribution(probs=probs, labels=params.labels)


def lstm_forward(
    params: LstmParams, inputs: Sequence[np.ndarray] | np.ndarray
) -> tuple[np.ndarray, ClassDistribution]:
    """Run the LSTM recurrence; returns all hidden states and the softmax output."""
    vs = _as_inputs(inputs, params.input_dim)
    m = vs.shape[0]
    h = np.zeros(params.hidden_dim)
    c = np.zeros(params.hidden_dim)
    hiddens = np.empty((m, params.hidden_dim))
    for j in range(m):
        v = vs[j]
        i = _sigmoid(params.ui @ v + params.wi @ h)
        f = _sigmoid(params.uf @ v + params.wf @ h)
        o = _sigmoid(params.uo @ v + params.wo @ h)
        g = np.tanh(params.ug @ v + params.wg @ h)
        c = f * c + i * g
        h = o * np.tanh(c)
        hiddens[j] = h
    probs = softmax(params.out @ h)
    return hiddens, ClassDistribution(probs=probs, labels=params.labels)


def forward(
    params: RecurrentParams, inputs: Sequence[np.ndarray] | np.ndarray
) -> tuple[np.ndarray, ClassDistribution]:
    """Dispatch to the forward pass matching the parameter kind."""
    if isinstance(params, GruParams):
        return gru_forward(params, inputs)
    return lstm_forward(params, inputs)


def top_t(dist: ClassDistribution, t: int) -> list[str]:
    """Labels of the t largest probabilities, ties toward the smaller label.

    The deterministic tie-break makes top_t(d, t1) a prefix of top_t(d, t2)
    whenever t1 <= t2, so growing the candidate count can only add classes.
    """
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    labels = np.asarray(dist.labels)
    order = np.lexsort((labels, -dist.probs))
    take = min(t, len(dist.labels))
    return [dist.labels[i] for i in order[:take]]


def gru_loss_and_grads(
    params: GruParams, inputs: np.ndarray, target: int
) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy loss and analytic gradients via backprop through time."""
    vs = _as_inputs(inputs, params.input_dim)
    m = vs.shape[0]
    hdim = params.hidden_dim
    hs = np.zeros((m + 1, hdim))  # hs[0] is h_0 = 0
    zs = np.empty((m, hdim))
    rs = np.empty((m, hdim))
    hcs = np.empty((m, hdim))
    for j in range(m):
        v = vs[j]
        h_prev = hs[j]
        zs[j] = _sigmoid(params.uz @ v + params.wz @ h_prev)
        rs[j] = _sigmoid(params.ur @ v + params.wr @ h_prev)
        hcs[j] = np.tanh(params.uh @ v + params.wh @ (h_prev * rs[j]))
        hs[j + 1] = (1.0 - zs[j]) * hcs[j] + zs[j] * h_prev

    probs = softmax(params.out @ hs[m])
    loss = -float(np.log(max(probs[target], 1e-300)))
    dy = probs.copy()
    dy[target] -= 1.0

    grads = {name: np.zeros_like(getattr(params, name)) for name in GRU_MATRIX_FIELDS}
    grads["out"] = np.outer(dy, hs[m])
    dh = params.out.T @ dy
    for j in range(m - 1, -1, -1):
        v = vs[j]
        h_prev = hs[j]
        z, r, hc = zs[j], rs[j], hcs[j]
        dz = dh * (h_prev - hc)
        dhc = dh * (1.0 - z)
        dh_prev = dh * z
        dah = dhc * (1.0 - hc * hc)
        grads["uh"] += np.outer(dah, v)
        grads["wh"] += np.outer(dah, h_prev * r)
        dhr = params.wh.T @ dah
        dr = dhr * h_prev
        dh_prev = dh_prev + dhr * r
        daz = dz * z * (1.0 - z)
        grads["uz"] += np.outer(daz, v)
        grads["wz"] += np.outer(daz, h_prev)
        dh_prev = dh_prev + params.wz.T @ daz
        dar = dr * r * (1.0 - r)
        grads["ur"] += np.outer(dar, v)
        grads["wr"] += np.outer(dar, h_prev)
        dh_prev = dh_prev + params.wr.T @ dar
        dh = dh_prev
    return loss, grads


def lstm_loss_and_grads(
    params: LstmParams, inputs: np.ndarray, target: int
) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy loss and analytic gradients via backprop through time."""
    vs = _as_inputs(inputs, params.input_dim)
    m = vs.shape[0]
    hdim = params.hidden_dim
    hs = np.zeros((m + 1, hdim))
    cs = np.zeros((m + 1, hdim))
    gates = np.empty((m, 4, hdim))  # i, f, o, g per step
    for j in range(m):
        v = vs[j]
        h_prev = hs[j]
        i = _sigmoid(params.ui @ v + params.wi @ h_prev)
        f = _sigmoid(params.uf @ v + params.wf @ h_prev)
        o = _sigmoid(params.uo @ v + params.wo @ h_prev)
        g = np.tanh(params.ug @ v + params.wg @ h_prev)
        gates[j, 0], gates[j, 1], gates[j, 2], gates[j, 3] = i, f, o, g
        cs[j + 1] = f * cs[j] + i * g
        hs[j + 1] = o * np.tanh(cs[j + 1])

    probs = softmax(params.out @ hs[m])
    loss = -float(np.log(max(probs[target], 1e-300)))
    dy = probs.copy()
    dy[target] -= 1.0

    grads = {name: np.zeros_like(getattr(params, name)) for name in LSTM_MATRIX_FIELDS}
    grads["out"] = np.outer(dy, hs[m])
    dh = params.out.T @ dy
    dc = np.zeros(hdim)
    for j in range(m - 1, -1, -1):
        v = vs[j]
        h_prev, c_prev = hs[j], cs[j]
        i, f, o, g = gates[j]
        tc = np.tanh(cs[j + 1])
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_prev = dc * f
        dai = di * i * (1.0 - i)
        daf = df * f * (1.0 - f)
        dao = do * o * (1.0 - o)
        dag = dg * (1.0 - g * g)
        grads["ui"] += np.outer(dai, v)
        grads["uf"] += np.outer(daf, v)
        grads["uo"] += np.outer(dao, v)
        grads["ug"] += np.outer(dag, v)
        grads["wi"] += np.outer(dai, h_prev)
        grads["wf"] += np.outer(daf, h_prev)
        grads["wo"] += np.outer(dao, h_prev)
        grads["wg"] += np.outer(dag, h_prev)
        dh = (
            params.wi.T @ dai
            + params.wf.T @ daf
            + params.wo.T @ dao
            + params.wg.T @ dag
        )
        dc = dc_prev
    return loss, grads


def loss_and_grads(
    params: RecurrentParams, inputs: np.ndarray, target: int
) -> tuple[float, dict[str, np.ndarray]]:
    if isinstance(params, GruParams):
        return gru_loss_and_grads(params, inputs, target)
    return lstm_loss_and_grads(params, inputs, target)


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int
    epochs: int
    learning_rate: float
    seed: int
    cell: str = "gru"  # "gru" or "lstm"

    def __post_init__(self) -> None:
        if self.cell not in ("gru", "lstm"):
            raise ValueError(f"cell must be 'gru' or 'lstm', got {self.cell!r}")
        if self.hidden_dim < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("need hidden_dim >= 1, epochs >= 0, learning_rate > 0")


def init_params(
    cell: str, input_dim: int, hidden_dim: int, labels: tuple[str, ...], seed: int
) -> RecurrentParams:
    """Seeded uniform [-0.08, 0.08] initialization, matrices drawn in field order."""
    rng = np.random.default_rng(seed)
    cls = GruParams if cell == "gru" else LstmParams
    shapes = {"out": (len(labels), hidden_dim)}
    for name in cls.matrix_fields:
        if name.startswith("u"):
            shapes[name] = (hidden_dim, input_dim)
        elif name.startswith("w"):
            shapes[name] = (hidden_dim, hidden_dim)
    mats = {
        name: rng.uniform(-INIT_SCALE, INIT_SCALE, shapes[name])
        for name in cls.matrix_fields
    }
    return cls(**mats, labels=labels, seed=seed)


def train(
    corpus: Sequence[tuple[Sequence[str], str]],
    table: WordVectorTable,
    config: TrainConfig,
) -> RecurrentParams:
    """Fit a recurrent scorer on (token sequence, class label) pairs.

    Per-sample gradient descent in a fixed pass order keeps the result a
    pure function of (corpus, table, config). With epochs == 0 the seeded
    initialization is returned unchanged.

    Raises:
        DivergenceError: a non-finite loss appeared (reports epoch and rate).
    """
    if not corpus:
        raise ValueError("training corpus must be nonempty")
    labels = tuple(sorted({label for _, label in corpus}))
    label_index = {label: i for i, label in enumerate(labels)}
    prepared = []
    for tokens, label in corpus:
        if len(tokens) == 0:
            raise ValueError("training sequences must be nonempty")
        prepared.append((table.lookup_all(tokens), label_index[label]))

    params = init_params(config.cell, table.dim, config.hidden_dim, labels, config.seed)
    mats = {name: getattr(params, name).copy() for name in params.matrix_fields}
    working = replace(params, **mats)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        for inputs, target in prepared:
            loss, grads = loss_and_grads(working, inputs, target)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, lr)
            for name, grad in grads.items():
                mats[name] -= lr * grad
    for mat in mats.values():
        mat.setflags(write=False)
    return replace(params, **mats)


def save_params(params: RecurrentParams, path) -> None:
    """Write a lossless .npz checkpoint (dims, cell kind, seed, matrices)."""
    payload = {name: getattr(params, name) for name in params.matrix_fields}
    np.savez(
        path,
        format_version=np.array(_CHECKPOINT_VERSION),
        cell=np.array(params.cell_kind),
        seed=np.array(-1 if params.seed is None else params.seed),
        labels=np.array(params.labels),
        **payload,
    )


def load_params(path) -> RecurrentParams:
    """Load a checkpoint written by :func:`save_params`."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        cell = str(data["cell"])
        cls = GruParams if cell == "gru" else LstmParams
        seed = int(data["seed"])
        mats = {name: data[name] for name in cls.matrix_fields}
        labels = tuple(str(w) for w in data["labels"])
    for mat in mats.values():
        mat.setflags(write=False)
    return cls(**mats, labels=labels, seed=None if seed < 0 else seed)
