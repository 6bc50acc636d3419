"""Linear probes (softmax regression trained with AdamW) and the dimension-masking sweep."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from fxprobe.errors import (
    DataError,
    DimensionError,
    DivergenceError,
    FxProbeError,
    ValidationError,
)
from fxprobe.represent import apply_norm, fit_norm
from fxprobe.rng import derive_rng, derive_seed


@dataclass(frozen=True)
class ProbeConfig:
    lr: float = 3e-4
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not (self.lr > 0 and self.batch_size > 0 and self.max_epochs > 0 and self.patience > 0):
            raise ValidationError("lr, batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValidationError("patience must not exceed max_epochs")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0 and self.weight_decay >= 0):
            raise ValidationError("invalid AdamW constants")

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeConfig":
        return cls(**d)


MASK_EPOCHS = 100


def parameter_count(dims: int, classes: int) -> int:
    return classes * dims + classes


def format_count(n: int) -> str:
    """Thousands with one decimal, halves rounded up (163850 -> '163.9 k')."""
    k = (Decimal(int(n)) / 1000).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return f"{k} k"


@dataclass
class ProbeModel:
    weights: np.ndarray
    bias: np.ndarray
    best_val_acc: float = 0.0
    best_epoch: int = 0
    history: list[dict] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    @property
    def parameter_count(self) -> int:
        return self.weights.size + self.bias.size

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DimensionError(f"probe expects {self.n_features} features, got shape {x.shape}")
        return x @ self.weights.T + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_loss_grad(weights, bias, x, y):
    """Mean cross-entropy and its gradients with respect to (weights, bias)."""
    logp = _log_softmax(x @ weights.T + bias)
    n = x.shape[0]
    loss = -logp[np.arange(n), y].mean()
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return float(loss), delta.T @ x, delta.sum(axis=0)


def softmax_loss(weights, bias, x, y) -> float:
    logp = _log_softmax(x @ weights.T + bias)
    return float(-logp[np.arange(x.shape[0]), y].mean())


def _accuracy(weights, bias, x, y) -> float:
    if len(y) == 0:
        return 0.0
    return float(np.mean(np.argmax(x @ weights.T + bias, axis=1) == y))


class _AdamW:
    def __init__(self, params, cfg: ProbeConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            p *= 1.0 - c.lr * c.weight_decay
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def train_probe(features_train, labels, features_val, labels_val, config: ProbeConfig = ProbeConfig(),
                n_classes: int | None = None) -> ProbeModel:
    """Fit a softmax linear probe; returns the snapshot with the best validation accuracy.

    Ties keep the earliest epoch. Training stops once validation accuracy has
    not improved for ``config.patience`` epochs.
    """
    x = np.asarray(features_train, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    xv = np.asarray(features_val, dtype=np.float64)
    yv = np.asarray(labels_val, dtype=np.int64)
    if x.ndim != 2 or xv.ndim != 2 or x.shape[1] != xv.shape[1]:
        raise DimensionError("train and validation features must be 2-D with equal width")
    if x.shape[0] != y.size or xv.shape[0] != yv.size:
        raise DimensionError("one label per feature row is required")
    if n_classes is None:
        n_classes = int(max(y.max(initial=0), yv.max(initial=0))) + 1
    for name, lab in (("train", y), ("val", yv)):
        missing = set(range(n_classes)) - set(np.unique(lab).tolist())
        if missing:
            raise DataError(f"{name} split has no samples for classes {sorted(missing)}")

    w = np.zeros((n_classes, x.shape[1]))
    b = np.zeros(n_classes)
    opt = _AdamW([w, b], config)
    rng = derive_rng(config.seed, "probe-shuffle")
    best = (-1.0, 0, w.copy(), b.copy())
    since = 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(x.shape[0])
        for s in range(0, order.size, config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, gw, gb = softmax_loss_grad(w, b, x[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            opt.step([w, b], [gw, gb])
        train_loss = softmax_loss(w, b, x, y)
        if not np.isfinite(train_loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        val_acc = _accuracy(w, b, xv, yv)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_acc": val_acc})
        if val_acc > best[0]:
            best = (val_acc, epoch, w.copy(), b.copy())
            since = 0
        else:
            since += 1
            if since >= config.patience:
                break
    return ProbeModel(best[2], best[3], best[0], best[1], history)


# --------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    per_class_recall: dict[str, float]
    overall_accuracy: float
    macro_recall: float
    confusion: np.ndarray
    class_names: list[str]

    def row(self) -> dict[str, float]:
        """Per-class recalls in class order, then AVG (macro) and AVG_overall."""
        out = {c: self.per_class_recall[c] for c in self.class_names}
        out["AVG"] = self.macro_recall
        out["AVG_overall"] = self.overall_accuracy
        return out

    def to_dict(self) -> dict:
        return {"class_names": self.class_names, "per_class_recall": self.per_class_recall,
                "overall_accuracy": self.overall_accuracy, "macro_recall": self.macro_recall,
                "confusion": self.confusion.tolist()}


def report_from_predictions(pred, labels, class_names: list[str]) -> EvalReport:
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    k = len(class_names)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    support = confusion.sum(axis=1)
    recall = {}
    for i, name in enumerate(class_names):
        recall[name] = 100.0 * confusion[i, i] / support[i] if support[i] else float("nan")
    present = [v for v in recall.values() if not np.isnan(v)]
    macro = float(np.mean(present)) if present else float("nan")
    overall = 100.0 * np.trace(confusion) / max(1, confusion.sum())
    return EvalReport(recall, float(overall), macro, confusion, list(class_names))


def evaluate(model: ProbeModel, features_test, labels, class_names: list[str] | None = None) -> EvalReport:
    if class_names is None:
        class_names = [str(i) for i in range(model.n_classes)]
    if len(class_names) != model.n_classes:
        raise DimensionError("class_names must match the probe's class count")
    return report_from_predictions(model.predict(features_test), labels, class_names)


# ------------------------------------------------------------------ masking


def mask_dimension(features, d: int) -> np.ndarray:
    """Copy of ``features`` with column ``d`` zeroed (the training mean after z-scoring)."""
    x = np.array(features, dtype=np.float64)
    if not 0 <= d < x.shape[1]:
        raise IndexError(f"dimension {d} out of range for width {x.shape[1]}")
    x[:, d] = 0.0
    return x


@dataclass
class BinaryDataset:
    """Effect-vs-clean features, already split; label 1 means the effect is present."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


@dataclass
class MaskMatrix:
    effects: list[str]
    delta_pp: np.ndarray
    baseline_acc: dict[str, float]
    masked_acc: np.ndarray

    @property
    def dims(self) -> int:
        return self.delta_pp.shape[1]


def _masked_accuracy(task):
    effect, data, d, cfg, raw = task
    try:
        return _train_masked(data, d, cfg, raw)
    except FxProbeError as exc:
        raise type(exc)(f"effect={effect} dim={d}: {exc}") from exc


def _train_masked(data, d, cfg, raw):
    parts = [data.x_train, data.x_val, data.x_test]
    if d is not None:
        if raw is not None:
            # mask raw values, then normalise with stats fitted after masking
            masked = [mask_dimension(p, d) for p in raw]
            stats = fit_norm(masked[0])
            parts = [apply_norm(stats, p) for p in masked]
        else:
            parts = [mask_dimension(p, d) for p in parts]
    model = train_probe(parts[0], data.y_train, parts[1], data.y_val, cfg, n_classes=2)
    return 100.0 * float(np.mean(model.predict(parts[2]) == data.y_test))


def mask_sweep(datasets: dict[str, BinaryDataset], config: ProbeConfig = ProbeConfig(),
               jobs: int = 1, raw: dict[str, tuple] | None = None) -> MaskMatrix:
    """Train an unmasked baseline plus one probe per masked dimension for every effect.

    Every training for a given effect uses the same derived seed, so a delta
    reflects the masked column rather than a different shuffle order.
    ``raw`` optionally supplies un-normalised (train, val, test) features per
    effect to mask before normalising.
    """
    cfg = replace(config, max_epochs=MASK_EPOCHS, patience=MASK_EPOCHS)
    effects = list(datasets)
    widths = {d.x_train.shape[1] for d in datasets.values()}
    if len(widths) != 1:
        raise DimensionError("all effect datasets must share a feature width")
    width = widths.pop()
    tasks, keys = [], []
    for e in effects:
        ecfg = replace(cfg, seed=derive_seed(config.seed, f"mask-{e}"))
        r = raw.get(e) if raw else None
        for d in [None, *range(width)]:
            tasks.append((e, datasets[e], d, ecfg, r))
            keys.append((e, d))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_masked_accuracy, tasks, chunksize=8))
    else:
        results = [_masked_accuracy(t) for t in tasks]
    acc = dict(zip(keys, results))
    baseline = {e: acc[(e, None)] for e in effects}
    masked = np.array([[acc[(e, d)] for d in range(width)] for e in effects])
    delta = np.array([baseline[e] for e in effects])[:, None] - masked
    return MaskMatrix(effects, delta, baseline, masked)
