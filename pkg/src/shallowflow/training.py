"""Datasets, losses, Adam with cyclic cosine-annealed learning rate, the
training loop, and the fast-gradient-sign attack.

Every stage is a pure function of its inputs and seed; rerunning with the
same configuration reproduces histories bitwise.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nets as netsmod
from .errors import DivergenceError, FlowOverflowError, ParseError, PreconditionError

REGRESSION = "regression"
CLASSIFICATION = "classification"

#: Seed of the fixed 1000-point held-out set for the sine task.
SINE_TEST_SEED = 987654321
SINE_TEST_SIZE = 1000


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (N, m)
    targets: np.ndarray  # (N, n) regression targets or (N,) integer labels
    task: str
    split: str = "train"

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise PreconditionError("inputs and targets must have equal lengths")
        if not np.isfinite(self.inputs).all():
            raise PreconditionError("dataset inputs must be finite")

    def __len__(self):
        return self.inputs.shape[0]


def sine_target(x):
    return np.sin(10.0 * x) + x


def gen_sine(n, seed, split="train"):
    """n points uniform on [0, 1] with targets sin(10 x) + x."""
    if n < 1:
        raise PreconditionError("need at least one sample")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, 1))
    return Dataset(inputs=x, targets=sine_target(x), task=REGRESSION, split=split)


def sine_test_set():
    return gen_sine(SINE_TEST_SIZE, SINE_TEST_SEED, split="test")


def gen_two_moons(n, noise=0.1, seed=0, split="train"):
    """Two interleaved half circles: class 0 at (cos t, sin t), class 1 at
    (1 - cos t, 0.5 - sin t), t uniform on [0, pi], plus isotropic noise."""
    if n < 2:
        raise PreconditionError("need at least two samples")
    rng = np.random.default_rng(seed)
    n0 = (n + 1) // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, size=n0)
    t1 = rng.uniform(0.0, np.pi, size=n1)
    pts0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    pts1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    X = np.concatenate([pts0, pts1], axis=0)
    if noise > 0.0:
        X = X + rng.normal(0.0, noise, size=X.shape)
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(n)
    return Dataset(inputs=X[order], targets=y[order], task=CLASSIFICATION, split=split)


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_be32(raw, offset, path):
    if offset + 4 > len(raw):
        raise ParseError(f"{path}: truncated at byte {offset}")
    return struct.unpack(">i", raw[offset : offset + 4])[0], offset + 4


def load_idx_images(path):
    """Big-endian IDX image file; pixels scaled to [0, 1], one row per image."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, off = _read_be32(raw, 0, path)
    if magic != IDX_IMAGES_MAGIC:
        raise ParseError(f"{path}: bad image magic {magic:#010x} at byte 0")
    count, off = _read_be32(raw, off, path)
    rows, off = _read_be32(raw, off, path)
    cols, off = _read_be32(raw, off, path)
    need = count * rows * cols
    if len(raw) - off < need:
        raise ParseError(f"{path}: truncated at byte {len(raw)} (need {off + need})")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=need, offset=off)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def load_idx_labels(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, off = _read_be32(raw, 0, path)
    if magic != IDX_LABELS_MAGIC:
        raise ParseError(f"{path}: bad label magic {magic:#010x} at byte 0")
    count, off = _read_be32(raw, off, path)
    if len(raw) - off < count:
        raise ParseError(f"{path}: truncated at byte {len(raw)} (need {off + count})")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=off).astype(np.int64)


def load_idx(images_path, labels_path=None, split="train"):
    """Dataset from an IDX image file and its label file.

    When ``labels_path`` is omitted it is derived by the conventional naming
    (images -> labels, idx3 -> idx1).
    """
    if labels_path is None:
        guess = str(images_path).replace("images", "labels").replace("idx3", "idx1")
        if guess == str(images_path):
            raise PreconditionError(
                "cannot derive the labels path; pass labels_path explicitly"
            )
        labels_path = guess
    X = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if X.shape[0] != y.shape[0]:
        raise ParseError(
            f"{images_path}: {X.shape[0]} images but {y.shape[0]} labels"
        )
    return Dataset(inputs=X, targets=y, task=CLASSIFICATION, split=split)


def write_csv(path, ds):
    """Header x1..xm then y1..yn (regression) or label (classification)."""
    m = ds.inputs.shape[1]
    cols = [f"x{i + 1}" for i in range(m)]
    if ds.task == CLASSIFICATION:
        cols.append("label")
        body = np.column_stack([ds.inputs, ds.targets.astype(np.float64)])
    else:
        cols.extend(f"y{i + 1}" for i in range(ds.targets.shape[1]))
        body = np.column_stack([ds.inputs, ds.targets])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in body:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_csv(path, split="train"):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    xcols = [i for i, c in enumerate(header) if c.startswith("x")]
    label_col = [i for i, c in enumerate(header) if c == "label"]
    ycols = [i for i, c in enumerate(header) if c.startswith("y")]
    if not xcols or (not label_col and not ycols):
        raise ParseError(f"{path}: header must name x1.. and y1../label columns (line 1)")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ParseError(f"{path}: expected {len(header)} cells at line {ln}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric cell at line {ln}") from exc
    data = np.asarray(rows)
    X = data[:, xcols]
    if label_col:
        y = data[:, label_col[0]].astype(np.int64)
        return Dataset(inputs=X, targets=y, task=CLASSIFICATION, split=split)
    return Dataset(inputs=X, targets=data[:, ycols], task=REGRESSION, split=split)


def mse(pred, target):
    """Mean over all entries of the squared error."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise PreconditionError("prediction and target shapes differ")
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target):
    return 2.0 * (np.asarray(pred) - np.asarray(target)) / np.asarray(pred).size


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy_logits(logits, labels):
    """Mean negative log-likelihood, stabilized by max subtraction."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise PreconditionError("label out of range")
    ls = _log_softmax(logits)
    return float(-np.mean(ls[np.arange(len(labels)), labels]))


def cross_entropy_grad(logits, labels):
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    p = np.exp(_log_softmax(logits))
    p[np.arange(len(labels)), labels] -= 1.0
    return p / len(labels)


def predictions(logits):
    return np.argmax(np.atleast_2d(logits), axis=1)


def accuracy(net, data):
    logits = netsmod.forward(net, data.inputs)
    return float(np.mean(predictions(logits) == data.targets))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch: int = 0  # 0 = full batch
    lr_max: float = 1e-2
    lr_min: float = 1e-4
    cycle_len: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    constraint: netsmod.NormConstraint | None = None
    freeze_ode: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise PreconditionError("epochs must be >= 0")
        if self.lr_min > self.lr_max:
            raise PreconditionError("lr_min must be <= lr_max")
        if self.cycle_len < 1:
            raise PreconditionError("cycle_len must be >= 1")


def cosine_cyclic_lr(epoch, config):
    """lr_min + (lr_max - lr_min) (1 + cos(pi (e mod cycle)/cycle)) / 2."""
    phase = (epoch % config.cycle_len) / config.cycle_len
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (
        1.0 + np.cos(np.pi * phase)
    )


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(state, tensors, grads, lr, config):
    """One bias-corrected Adam update; returns the new tensor dict."""
    state.t += 1
    out = {}
    for name, value in tensors.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        state.m[name] = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        state.v[name] = config.beta2 * state.v[name] + (1.0 - config.beta2) * g * g
        mhat = state.m[name] / (1.0 - config.beta1**state.t)
        vhat = state.v[name] / (1.0 - config.beta2**state.t)
        out[name] = value - lr * mhat / (np.sqrt(vhat) + config.eps)
    return out


def _loss_and_upstream(net, X, targets, task):
    pred, cache = netsmod.forward_cached(net, X)
    if task == REGRESSION:
        return mse(pred, targets), mse_grad(pred, targets), cache
    return (
        cross_entropy_logits(pred, targets),
        cross_entropy_grad(pred, targets),
        cache,
    )


def evaluate_loss(net, data):
    pred = netsmod.forward(net, data.inputs)
    if data.task == REGRESSION:
        return mse(pred, data.targets)
    return cross_entropy_logits(pred, data.targets)


def train(net, data, config, test_data=None):
    """Train with Adam and the cyclic learning rate; returns (net, history).

    History rows are (epoch, lr, train_loss, test_loss); losses are evaluated
    after the epoch's updates. The norm constraint is re-projected after every
    step; frozen ODE tensors receive zero gradients and never move.
    """
    if config.constraint is not None and not isinstance(net, netsmod.ShallowFlowNet):
        raise PreconditionError("norm-constrained training needs a flow net")
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    history = []
    n = len(data)
    batch = config.batch if config.batch and config.batch < n else n
    for epoch in range(config.epochs):
        lr = cosine_cyclic_lr(epoch, config)
        order = rng.permutation(n) if batch < n else None
        epoch_loss = 0.0
        for start in range(0, n, batch):
            if order is None:
                X, targets = data.inputs, data.targets
            else:
                idx = order[start : start + batch]
                X, targets = data.inputs[idx], data.targets[idx]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, upstream, cache = _loss_and_upstream(
                        net, X, targets, data.task
                    )
            except FlowOverflowError as exc:
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}", {"epoch": epoch}
                ) from exc
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}", {"epoch": epoch}
                )
            epoch_loss += loss * len(X)
            grads = netsmod.backward(net, cache, upstream).tensors
            if config.freeze_ode:
                for name in ("A", "b"):
                    if name in grads:
                        grads[name] = np.zeros_like(grads[name])
            tensors = adam_step(state, params_of(net), grads, lr, config)
            net = netsmod.with_params(net, tensors)
            if config.constraint is not None:
                net = netsmod.project_norms(net, config.constraint)
        train_loss = epoch_loss / n
        test_loss = evaluate_loss(net, test_data) if test_data is not None else np.nan
        history.append((epoch, float(lr), float(train_loss), float(test_loss)))
    return net, history


def params_of(net):
    return netsmod.params(net)


def history_csv_lines(history):
    lines = ["epoch,lr,train_loss,test_loss"]
    for epoch, lr, tr, te in history:
        lines.append(f"{epoch},{lr:.17g},{tr:.17g},{te:.17g}")
    return lines


@dataclass(frozen=True)
class AttackReport:
    etas: list
    accuracies: list


def fgsm(net, x, label, eta):
    """x + eta * sign(grad_x loss); sign(0) = 0 leaves coordinates untouched."""
    if eta < 0.0:
        raise PreconditionError("eta must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    pred, cache = netsmod.forward_cached(net, x)
    logits = np.atleast_2d(pred)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    upstream = cross_entropy_grad(logits, labels)
    if x.ndim == 1:
        upstream = upstream[0]
    grads = netsmod.backward(net, cache, upstream)
    return x + eta * np.sign(grads.d_input)


def attack_curve(net, data, etas):
    """Accuracy under the sign attack for each perturbation magnitude."""
    if data.task != CLASSIFICATION:
        raise PreconditionError("the attack needs a classification dataset")
    accs = []
    for eta in etas:
        X_adv = fgsm(net, data.inputs, data.targets, eta)
        logits = netsmod.forward(net, X_adv)
        accs.append(float(np.mean(predictions(logits) == data.targets)))
    return AttackReport(etas=list(etas), accuracies=accs)
