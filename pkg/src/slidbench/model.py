"""The CNN baseline (conv feature extractor + dense classifier) and its
training protocol: Adam, fixed batch size, best-epoch selection on
validation macro-F1, and the conv-dropout grid search.
"""

from __future__ import annotations

import dataclasses
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import evaluation, nn, registry
from ._io import atomic_write_text
from .dsp import MfccSequence, read_features
from .errors import ConfigError, DataError, NumericError

DROPOUT_GRID = (0.0, 0.4, 0.6)


@dataclass(frozen=True)
class BaselineConfig:
    n_coeffs_k: int = 13
    conv_specs: tuple[tuple[int, int], ...] = ((64, 16), (128, 32), (256, 48))
    conv_dropout_p: float = 0.0
    classifier_dims: tuple[int, ...] = (256, 256, 256, 16)
    classifier_dropout_p: float = 0.4
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    dtype: str = "float32"

    def __post_init__(self):
        if self.classifier_dims[-1] != registry.N_LANGUAGES:
            raise ConfigError(f"classifier must end in {registry.N_LANGUAGES} outputs")
        if self.classifier_dims[0] != self.conv_specs[-1][0]:
            raise ConfigError("classifier input must equal the last conv filter count")
        for p in (self.conv_dropout_p, self.classifier_dropout_p):
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"dropout probability {p} outside [0, 1)")
        if self.batch_size < 1 or self.epochs < 1 or self.n_coeffs_k < 1:
            raise ConfigError("batch_size, epochs and n_coeffs_k must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def embedding_dim(self) -> int:
        return self.conv_specs[-1][0]

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "conv_specs":
                v = ",".join(f"{n}x{w}" for n, w in v)
            elif f.name == "classifier_dims":
                v = ",".join(map(str, v))
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BaselineConfig":
        values = {}
        for line in text.splitlines():
            if line.strip():
                key, _, val = line.partition("=")
                values[key.strip()] = val.strip()
        return cls.from_strings(values)

    @classmethod
    def from_strings(cls, values: dict[str, str], base: "BaselineConfig | None" = None) -> "BaselineConfig":
        base = cls() if base is None else base
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown training config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, raw in values.items():
            try:
                if key == "conv_specs":
                    kwargs[key] = tuple(tuple(int(x) for x in spec.split("x")) for spec in raw.split(","))
                elif key == "classifier_dims":
                    kwargs[key] = tuple(int(x) for x in raw.split(","))
                elif key == "dtype":
                    kwargs[key] = raw
                else:
                    kwargs[key] = type(getattr(base, key))(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return dataclasses.replace(base, **kwargs)


def closed_form_parameter_count(config: BaselineConfig) -> tuple[int, int]:
    """(extractor, classifier) trainable parameter counts from the architecture."""
    f = 0
    c_in = config.n_coeffs_k
    for filters, width in config.conv_specs:
        f += filters * c_in * width + filters + 2 * filters
        c_in = filters
    dims = config.classifier_dims
    g = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
    return f, g


class BaselineModel:
    def __init__(self, config: BaselineConfig = BaselineConfig(), rng: np.random.Generator | None = None):
        self.config = config
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.convs, self.norms, self.conv_relus, self.conv_drops = [], [], [], []
        c_in = config.n_coeffs_k
        for filters, width in config.conv_specs:
            self.convs.append(nn.Conv1d(c_in, filters, width, rng=rng, dtype=dtype))
            self.norms.append(nn.BatchNorm1d(filters, eps=config.bn_eps, momentum=config.bn_momentum, dtype=dtype))
            self.conv_relus.append(nn.ReLU())
            self.conv_drops.append(nn.Dropout(config.conv_dropout_p))
            c_in = filters
        self.pool = nn.MaskedAvgPool()
        dims = config.classifier_dims
        self.dense = [nn.Dense(dims[i], dims[i + 1], rng=rng, dtype=dtype) for i in range(len(dims) - 1)]
        self.dense_relus = [nn.ReLU() for _ in self.dense[:-1]]
        self.dense_drops = [nn.Dropout(config.classifier_dropout_p) for _ in self.dense[:-1]]
        self.dropout_rng = np.random.default_rng([config.seed, 1])

    # -- parameters -------------------------------------------------------

    def _named_layers(self):
        for i, (conv, bn) in enumerate(zip(self.convs, self.norms)):
            yield f"conv{i}", conv
            yield f"bn{i}", bn
        for i, d in enumerate(self.dense):
            yield f"dense{i}", d

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(
            (f"{lname}.{pname}", arr) for lname, layer in self._named_layers() for pname, arr in layer.params.items()
        )

    def gradients(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(
            (f"{lname}.{pname}", arr) for lname, layer in self._named_layers() for pname, arr in layer.grads.items()
        )

    def parameter_count(self) -> tuple[int, int]:
        f = sum(a.size for n, a in self.parameters().items() if not n.startswith("dense"))
        g = sum(a.size for n, a in self.parameters().items() if n.startswith("dense"))
        return f, g

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, a.copy()) for n, a in self.parameters().items())
        for i, bn in enumerate(self.norms):
            state[f"bn{i}.running_mean"] = bn.running_mean.copy()
            state[f"bn{i}.running_var"] = bn.running_var.copy()
        return state

    def load_state_dict(self, state):
        params = self.parameters()
        for name, arr in params.items():
            if name not in state or state[name].shape != arr.shape:
                raise DataError(f"checkpoint tensor {name} missing or mis-shaped")
            arr[...] = state[name]
        for i, bn in enumerate(self.norms):
            bn.running_mean = np.asarray(state[f"bn{i}.running_mean"], dtype=bn.running_mean.dtype).copy()
            bn.running_var = np.asarray(state[f"bn{i}.running_var"], dtype=bn.running_var.dtype).copy()

    def save(self, path):
        nn.save_checkpoint(path, self.state_dict(), self.config.to_text())

    @classmethod
    def load(cls, path) -> "BaselineModel":
        tensors, text = nn.load_checkpoint(path)
        model = cls(BaselineConfig.from_text(text))
        model.load_state_dict(tensors)
        return model

    # -- forward / backward ----------------------------------------------

    def feature_extractor_forward(self, x, mask, training=False):
        """``x``: (B, T, k) zero-padded MFCC frames, ``mask``: (B, T) -> u: (B, d)."""
        if x.shape[2] != self.config.n_coeffs_k:
            raise DataError(f"model expects k={self.config.n_coeffs_k} coefficients, got {x.shape[2]}")
        h = np.ascontiguousarray(x.transpose(0, 2, 1), dtype=self.config.dtype)
        for i, (conv, bn, act, drop) in enumerate(zip(self.convs, self.norms, self.conv_relus, self.conv_drops)):
            h = conv.forward(h, mask, need_input_grad=i > 0)
            h = bn.forward(h, mask, training=training)
            h = act.forward(h)
            h = drop.forward(h, training=training, rng=self.dropout_rng)
        return self.pool.forward(h, mask)

    def classifier_forward(self, u, training=False):
        h = u
        for d, act, drop in zip(self.dense[:-1], self.dense_relus, self.dense_drops):
            h = drop.forward(act.forward(d.forward(h)), training=training, rng=self.dropout_rng)
        return self.dense[-1].forward(h)

    def forward(self, x, mask, training=False):
        return self.classifier_forward(self.feature_extractor_forward(x, mask, training), training)

    def backward(self, grad_logits):
        g = self.dense[-1].backward(grad_logits)
        for d, act, drop in zip(reversed(self.dense[:-1]), reversed(self.dense_relus), reversed(self.dense_drops)):
            g = d.backward(act.backward(drop.backward(g)))
        g = self.pool.backward(g)
        for conv, bn, act, drop in zip(
            reversed(self.convs), reversed(self.norms), reversed(self.conv_relus), reversed(self.conv_drops)
        ):
            g = conv.backward(bn.backward(act.backward(drop.backward(g))))
        return g

    def logits(self, sequences: Sequence[np.ndarray], batch_size=256) -> np.ndarray:
        out = []
        for start in range(0, len(sequences), batch_size):
            x, mask = pad_batch(sequences[start : start + batch_size], self.config.dtype)
            out.append(self.forward(x, mask, training=False))
        return np.concatenate(out) if out else np.zeros((0, registry.N_LANGUAGES))


def pad_batch(sequences: Sequence[np.ndarray], dtype="float32"):
    """Stack (T_i, k) arrays into (B, T_max, k) zeros plus a (B, T_max) mask."""
    lengths = [len(s) for s in sequences]
    k = sequences[0].shape[1]
    x = np.zeros((len(sequences), max(lengths), k), dtype=dtype)
    mask = np.zeros((len(sequences), max(lengths)), dtype=bool)
    for i, s in enumerate(sequences):
        x[i, : len(s)] = s
        mask[i, : len(s)] = True
    return x, mask


def predict(model: BaselineModel, sequences: Sequence[np.ndarray], batch_size=256):
    """Returns (ISO codes, (B, 16) probabilities). Ties go to the earlier
    registry language."""
    probs = nn.softmax(model.logits(sequences, batch_size).astype(np.float64))
    return [registry.LANGUAGES[i] for i in np.argmax(probs, axis=1)], probs


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class FeatureSet:
    ids: list[str]
    sequences: list[np.ndarray]
    labels: np.ndarray  # registry indices

    def __len__(self):
        return len(self.ids)


def load_feature_set(records, root=None) -> FeatureSet:
    """Read the MFC1 feature file of every manifest record."""
    ids, seqs, labels = [], [], []
    for r in records:
        path = Path(r.path) if root is None or Path(r.path).is_absolute() else Path(root) / r.path
        try:
            seq = read_features(path)
        except DataError as exc:
            raise DataError(f"record {r.id}: {exc}") from exc
        ids.append(r.id)
        seqs.append(seq.frames)
        labels.append(registry.INDEX[r.language])
    return FeatureSet(ids, seqs, np.asarray(labels, dtype=np.int64))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_macro_f1: float
    valid_macro_f1: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def to_tsv(self) -> str:
        rows = ["epoch\ttrain_loss\ttrain_macro_f1\tvalid_macro_f1\tseconds"]
        for e in self.epochs:
            rows.append(
                f"{e.epoch}\t{e.train_loss:.6f}\t{e.train_macro_f1:.6f}\t{e.valid_macro_f1:.6f}\t{e.seconds:.6f}"
            )
        return "\n".join(rows) + "\n"


def evaluate_macro_f1(model: BaselineModel, data: FeatureSet, batch_size=256) -> float:
    pred = np.argmax(model.logits(data.sequences, batch_size), axis=1)
    return evaluation.macro_f1_from_indices(data.labels, pred)


def train(
    config: BaselineConfig,
    train_set: FeatureSet,
    valid_set: FeatureSet,
    run_dir=None,
    progress: Callable[[EpochRecord], None] | None = None,
) -> tuple[BaselineModel, TrainHistory]:
    """Train from scratch; returns the model holding the best-epoch weights.

    ``train_macro_f1`` in the history is computed from the training-mode
    predictions made while the epoch ran (no extra pass).
    """
    if len(train_set) == 0 or len(valid_set) == 0:
        raise DataError("training and validation sets must be non-empty")
    model = BaselineModel(config)
    opt = nn.Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    shuffle_rng = np.random.default_rng([config.seed, 2])
    history = TrainHistory()
    best_state, best_score = None, -np.inf
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        atomic_write_text(run_dir / "config.txt", config.to_text())

    n = len(train_set)
    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        train_pred = np.empty(n, dtype=np.int64)
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            x, mask = pad_batch([train_set.sequences[i] for i in idx], config.dtype)
            logits = model.forward(x, mask, training=True)
            try:
                loss, grad = nn.softmax_cross_entropy(logits.astype(np.float64), train_set.labels[idx])
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {b}: {exc}") from exc
            if not np.isfinite(loss):
                raise NumericError(f"epoch {epoch} batch {b}: non-finite loss")
            model.backward(grad.astype(config.dtype))
            try:
                opt.step(model.parameters(), model.gradients())
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {b}: {exc}") from exc
            total_loss += loss * len(idx)
            train_pred[idx] = np.argmax(logits, axis=1)
        valid_f1 = evaluate_macro_f1(model, valid_set, config.batch_size)
        record = EpochRecord(
            epoch,
            total_loss / n,
            evaluation.macro_f1_from_indices(train_set.labels, train_pred),
            valid_f1,
            time.perf_counter() - start,
        )
        history.epochs.append(record)
        if valid_f1 > best_score:
            best_score, best_state = valid_f1, model.state_dict()
            history.best_epoch = epoch
            if run_dir is not None:
                model.save(run_dir / "best.ckpt")
        if run_dir is not None:
            model.save(run_dir / "last.ckpt")
            atomic_write_text(run_dir / "history.tsv", history.to_tsv())
        if progress is not None:
            progress(record)

    model.load_state_dict(best_state)
    return model, history


def select_dropout(scores: dict[float, float]) -> float:
    """Highest validation score; ties go to the smaller probability."""
    if not scores:
        raise ConfigError("dropout grid is empty")
    return min(scores, key=lambda p: (-scores[p], p))


def tune_dropout(
    config: BaselineConfig,
    train_set: FeatureSet,
    valid_set: FeatureSet,
    grid: Sequence[float] = DROPOUT_GRID,
    run_dir=None,
    trainer=train,
    progress=None,
):
    """Train once per conv-dropout value (same seed) and keep the best.

    Returns ``(best_config, best_model, results)`` where ``results`` maps
    each p to ``(best valid macro-F1, history)``.
    """
    if not grid:
        raise ConfigError("dropout grid is empty")
    results = {}
    models = {}
    for p in grid:
        cfg = dataclasses.replace(config, conv_dropout_p=float(p))
        sub = None if run_dir is None else Path(run_dir) / f"dropout_{p:g}"
        model, history = trainer(cfg, train_set, valid_set, run_dir=sub, progress=progress)
        results[float(p)] = (history.epochs[history.best_epoch].valid_macro_f1, history)
        models[float(p)] = model
    best = select_dropout({p: r[0] for p, r in results.items()})
    if run_dir is not None:
        rows = ["conv_dropout_p\tbest_epoch\tvalid_macro_f1\tselected"]
        for p, (score, history) in results.items():
            rows.append(f"{p:g}\t{history.best_epoch}\t{score:.6f}\t{int(p == best)}")
        atomic_write_text(Path(run_dir) / "selection.tsv", "\n".join(rows) + "\n")
    return dataclasses.replace(config, conv_dropout_p=best), models[best], results
