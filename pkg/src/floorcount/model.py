"""Desk-scale trainable network: a small perceptron encoder feeding the floor head.

The encoder stands in for an image backbone. It maps fixed-length feature
vectors to the head's raw scores; the head math in :mod:`floorcount.head`
does not depend on it.
"""
import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyDataset, InvalidValue, MalformedDocument, NonFiniteLoss
from .head import N_CLASSES, HeadConfig, head_forward, head_loss, head_predict

log = logging.getLogger(__name__)

MODEL_FORMAT = "floorcount-model/1"

# images per floor count 1..18 in the Munich benchmark
MUNICH_FLOOR_COUNTS = (835, 1535, 1126, 1594, 784, 441, 103, 70, 66, 48, 48, 33, 33, 18, 30, 24, 12, 27)


@dataclass
class ModelConfig:
    variant: str = "hyb+httc"
    cuts: tuple | None = None
    mtl_roof: bool = False
    feature_dim: int = 64
    hidden: tuple = (64,)
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    readout: str = "floor"

    def __post_init__(self):
        self.head  # validates variant and cuts
        if self.feature_dim < 1 or any(h < 1 for h in self.hidden):
            raise InvalidValue("hidden", self.hidden, "layer widths must be positive")
        if not self.lr > 0 or self.epochs < 1 or self.batch_size < 1:
            raise InvalidValue("optimizer", (self.lr, self.epochs, self.batch_size))

    @property
    def head(self):
        return HeadConfig(self.variant, self.cuts, self.mtl_roof, self.readout)

    def to_dict(self):
        d = asdict(self)
        d["variant"] = self.head.variant
        d["cuts"] = list(self.head.cuts)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("cuts") is not None:
            d["cuts"] = tuple(d["cuts"])
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class FloorDataset:
    X: np.ndarray
    y: np.ndarray  # floor class, 0..17
    roof: np.ndarray | None = None  # 1 = flat, 0 = non-flat

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise InvalidValue("dataset", self.X.shape, "features must be (n, d) with one label per row")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= N_CLASSES):
            raise InvalidValue("label", (int(self.y.min()), int(self.y.max())), "outside [0, 17]")
        if self.roof is not None:
            self.roof = np.asarray(self.roof, dtype=float)

    def __len__(self):
        return len(self.y)

    def subset(self, idx):
        return FloorDataset(self.X[idx], self.y[idx], None if self.roof is None else self.roof[idx])


def split_dataset(ds, seed, val_frac=0.1, test_frac=0.1):
    """Shuffle and split into train/val/test (default 80/10/10)."""
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_frac * n))
    n_val = int(round(val_frac * n))
    test, val, train = perm[:n_test], perm[n_test:n_test + n_val], perm[n_test + n_val:]
    return ds.subset(train), ds.subset(val), ds.subset(test)


class FloorNet:
    """ReLU perceptron encoder with a linear output layer producing head scores."""

    def __init__(self, config, layers=None):
        self.config = config
        if layers is None:
            rng = np.random.default_rng(config.seed)
            sizes = [config.feature_dim, *config.hidden, config.head.n_scores]
            layers = []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                W = rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out))
                layers.append([W, np.zeros(fan_out)])
            # small output layer keeps the initial PMF close to uniform
            layers[-1][0] *= 0.1
        self.layers = layers

    def forward(self, X):
        acts = [np.asarray(X, dtype=float)]
        h = acts[0]
        for i, (W, b) in enumerate(self.layers):
            h = h @ W + b
            if i < len(self.layers) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, dscores):
        grads = [None] * len(self.layers)
        g = dscores
        for i in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[i]
            grads[i] = (acts[i].T @ g, g.sum(axis=0))
            if i > 0:
                g = (g @ W.T) * (acts[i] > 0)
        return grads

    def loss_and_grads(self, X, y, roof=None):
        scores, acts = self.forward(X)
        total, terms, dscores = head_loss(scores, y, self.config.head, roof)
        return total, terms, self.backward(acts, dscores)

    def outputs(self, X):
        scores, _ = self.forward(X)
        return head_forward(scores, self.config.head)

    def predict(self, X):
        """``(classes, F)`` for a feature matrix."""
        out = self.outputs(X)
        return head_predict(out, self.config.head), out["F"]

    def copy(self):
        return FloorNet(self.config, [[W.copy(), b.copy()] for W, b in self.layers])

    def to_json(self):
        doc = {
            "format": MODEL_FORMAT,
            "config": self.config.to_dict(),
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers],
        }
        return json.dumps(doc, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"model file is not valid JSON: {exc}") from exc
        if doc.get("format") != MODEL_FORMAT:
            raise MalformedDocument(f"unsupported model format {doc.get('format')!r}")
        config = ModelConfig.from_dict(doc["config"])
        layers = [[np.asarray(l["W"], dtype=float), np.asarray(l["b"], dtype=float)] for l in doc["layers"]]
        return cls(config, layers)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [[np.zeros_like(p) for p in layer] for layer in params]
        self.v = [[np.zeros_like(p) for p in layer] for layer in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for layer, glayer, mlayer, vlayer in zip(self.params, grads, self.m, self.v):
            for p, g, m, v in zip(layer, glayer, mlayer, vlayer):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    model: FloorNet
    log: list = field(default_factory=list)
    best_epoch: int = 0


LOG_COLUMNS = ("epoch", "loss_total", "loss_htt", "loss_ce", "loss_reg", "loss_roof",
               "val_accuracy", "val_mae")


def train(config, train_set, val_set=None):
    """Fit a :class:`FloorNet` with Adam; keep the epoch with the best validation accuracy.

    Without a validation set the training set doubles as one. Raises
    :class:`EmptyDataset` for an empty training set and
    :class:`NonFiniteLoss` (carrying the log so far) if a loss blows up.
    """
    if len(train_set) == 0:
        raise EmptyDataset("training set is empty")
    if train_set.X.shape[1] != config.feature_dim:
        raise InvalidValue("feature_dim", train_set.X.shape[1], f"config expects {config.feature_dim}")
    if config.mtl_roof and train_set.roof is None:
        raise InvalidValue("roof", None, "MTL training needs roof labels")
    val_set = val_set if val_set is not None and len(val_set) else train_set

    rng = np.random.default_rng(config.seed + 1)
    model = FloorNet(config)
    opt = Adam(model.layers, lr=config.lr)
    n = len(train_set)
    best_acc, best_model, best_epoch = -1.0, model.copy(), 0
    history = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        sums = dict.fromkeys(("total", "htt", "ce", "reg", "roof"), 0.0)
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            roof = None if train_set.roof is None else train_set.roof[idx]
            total, terms, grads = model.loss_and_grads(train_set.X[idx], train_set.y[idx], roof)
            if not math.isfinite(total):
                raise NonFiniteLoss(epoch, history)
            opt.step(grads)
            sums["total"] += total * len(idx)
            for k, v in terms.items():
                sums[k] += v * len(idx)
        pred, _ = model.predict(val_set.X)
        acc = float(np.mean(pred == val_set.y))
        mae = float(np.mean(np.abs(pred - val_set.y)))
        row = {
            "epoch": epoch,
            "loss_total": sums["total"] / n,
            "loss_htt": sums["htt"] / n,
            "loss_ce": sums["ce"] / n,
            "loss_reg": sums["reg"] / n,
            "loss_roof": sums["roof"] / n,
            "val_accuracy": acc,
            "val_mae": mae,
        }
        history.append(row)
        log.debug("epoch %d loss %.4f val_acc %.4f", epoch, row["loss_total"], acc)
        if acc > best_acc:
            best_acc, best_model, best_epoch = acc, model.copy(), epoch
    return TrainResult(best_model, history, best_epoch)


def epoch_log_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in history:
        w.writerow([row["epoch"]] + [f"{row[c]:.6f}" for c in LOG_COLUMNS[1:]])
    return buf.getvalue()


def read_dataset_csv(text):
    """Dataset CSV: feature columns (any names) plus ``label`` (floor class 0..17) and optional ``roof``.

    ``roof`` accepts flat/nonflat or 1/0. A ``floors`` column (1..18) may
    stand in for ``label``.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise EmptyDataset("dataset CSV is empty")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise EmptyDataset("dataset CSV has no rows")
    if "label" in header:
        label_col, offset = header.index("label"), 0
    elif "floors" in header:
        label_col, offset = header.index("floors"), 1
    else:
        label_col, offset = None, 0
    roof_col = header.index("roof") if "roof" in header else None
    feat_cols = [i for i, h in enumerate(header) if i not in (label_col, roof_col) and h != "id"]
    try:
        X = np.array([[float(r[i]) for i in feat_cols] for r in body])
        y = None if label_col is None else np.array([int(r[label_col]) - offset for r in body])
        roof = None
        if roof_col is not None:
            roof = np.array([1.0 if r[roof_col].strip().lower() in ("flat", "1", "1.0") else 0.0 for r in body])
    except (ValueError, IndexError) as exc:
        raise MalformedDocument(f"bad dataset row: {exc}") from None
    if y is None:
        y = np.zeros(len(X), dtype=int)
        return FloorDataset(X, y, roof), False
    return FloorDataset(X, y, roof), True


def dataset_csv(ds):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = ds.X.shape[1]
    w.writerow([f"f{i}" for i in range(d)] + ["label"] + (["roof"] if ds.roof is not None else []))
    for i in range(len(ds)):
        row = [repr(float(v)) for v in ds.X[i]] + [int(ds.y[i])]
        if ds.roof is not None:
            row.append("flat" if ds.roof[i] == 1.0 else "nonflat")
        w.writerow(row)
    return buf.getvalue()


def synthetic_long_tail(n=None, feature_dim=64, seed=0, label_noise=0.3, feature_noise=0.5,
                        counts=MUNICH_FLOOR_COUNTS):
    """Synthetic feature vectors whose class frequencies follow ``counts``.

    Each sample has a latent storey position ``z = c + N(0, label_noise)``;
    features are a fixed random nonlinear embedding of ``z`` plus isotropic
    noise, so neighbouring classes overlap the way adjacent floor counts do.
    Roof labels are flat with probability rising with the floor class.
    ``n=None`` reproduces the counts exactly; otherwise they are rescaled.
    """
    rng = np.random.default_rng(seed)
    counts = np.asarray(counts, dtype=float)
    if n is not None:
        counts = np.maximum(1, np.round(counts * n / counts.sum()))
    y = np.repeat(np.arange(len(counts)), counts.astype(int))
    rng.shuffle(y)
    z = (y + rng.normal(0.0, label_noise, len(y))) / (N_CLASSES - 1)
    freqs = rng.uniform(0.5, 4.0, 16)
    phases = rng.uniform(0, 2 * np.pi, 16)
    basis = np.concatenate([z[:, None], z[:, None] ** 2, np.sin(z[:, None] * freqs * np.pi + phases)], axis=1)
    mix = rng.normal(0.0, 1.0, (basis.shape[1], feature_dim)) / math.sqrt(basis.shape[1])
    roof = (rng.random(len(y)) < 1.0 / (1.0 + np.exp(-(y - 4.0) / 1.5))).astype(float)
    roof_dir = rng.normal(0.0, 1.0, feature_dim) / math.sqrt(feature_dim)
    X = basis @ mix + 0.3 * (roof - 0.5)[:, None] * roof_dir + rng.normal(0.0, feature_noise, (len(y), feature_dim))
    return FloorDataset(X, y, roof)
