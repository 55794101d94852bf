"""Mini-batch SGD over the encoder, classifier head and centerline bank.

The reference path is single-threaded and fully deterministic given the
seed: encoder init, centerline init and every epoch's permutation all flow
from one generator.  Divergence (non-finite values, centerline norm
blow-up, or centerline collapse onto a single direction / toward zero) is
detected every epoch and aborts training with the last healthy snapshot
attached to the raised error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from .data import Dataset
from .losses import (
    CenterlineBank,
    LabeledBatch,
    LinearClassifier,
    LossConfig,
    loss_report,
)
from .retrieval import evaluate_run, pool_descriptors, rank

__all__ = [
    "Checkpoint",
    "DivergenceError",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "iterate_batches",
    "load_checkpoint",
    "lr_at",
    "save_checkpoint",
    "sgd_step",
    "train",
]

CENTERLINE_INIT_STD = 0.01

CHECKPOINT_FORMAT_VERSION = 1

HISTORY_FIELDS = ("epoch", "lr", "cluster", "ortho", "softmax", "center", "total", "map")


class DivergenceError(RuntimeError):
    """Training left the healthy regime; carries a diagnostic + last-good state."""

    def __init__(self, message: str, signal: str, epoch: int, last_good: "TrainResult | None", history):
        super().__init__(message)
        self.signal = signal
        self.epoch = epoch
        self.last_good = last_good
        self.history = list(history)


@dataclass
class TrainConfig:
    """Optimization schedule plus the encoder and loss wiring.

    The learning rate starts at ``lr0`` and is divided once by
    ``lr_drop_factor`` at ``lr_drop_epoch``.  Centerlines follow the same
    schedule unless ``centerline_lr`` pins a constant rate; they never
    receive weight decay (decay would shrink them against the pull term).
    """

    batch_size: int = 100
    epochs: int = 30
    lr0: float = 0.01
    lr_drop_epoch: int = 20
    lr_drop_factor: float = 5.0
    momentum: float = 0.0
    weight_decay: float = 2e-4
    centerline_lr: float | None = None  # None -> follow the lr schedule
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    # encoder
    hidden_dims: tuple[int, ...] = (32,)
    embedding_dim: int = 16
    final_activation: str = "identity"
    init_std: float = 0.01
    num_classes: int | None = None  # None -> inferred from the dataset
    # divergence detector (see _detect_divergence for the signal semantics)
    centerline_norm_limit: float = 25.0
    centerline_collapse_cosine: float = 0.95
    collapse_check_epoch: int = 6
    stall_check_epoch: int = 12
    centerline_growth_ratio: float = 3.0
    # optional evaluation cadence (0 = never during training)
    eval_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.lr0 <= 0 or self.lr_drop_factor <= 0 or self.lr_drop_epoch < 1:
            raise ValueError("learning-rate schedule fields must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight_decay must be non-negative")
        if self.centerline_lr is not None and self.centerline_lr <= 0:
            raise ValueError("centerline_lr must be positive when set")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Schedule value: lr0, divided once by the drop factor at the drop epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} out of range [0, {cfg.epochs})")
    if epoch >= cfg.lr_drop_epoch:
        return cfg.lr0 / cfg.lr_drop_factor
    return cfg.lr0


def sgd_step(param: np.ndarray, velocity: np.ndarray, grad: np.ndarray,
             lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> None:
    """In-place momentum update: v <- mom*v - lr*(g + wd*p); p <- p + v."""
    if not np.isfinite(grad).all():
        raise ValueError("non-finite gradient")
    velocity *= momentum
    velocity -= lr * (grad + weight_decay * param)
    param += velocity


@dataclass
class OptimizerState:
    """Momentum velocity buffers, mirrored into checkpoints."""

    weight_vel: list[np.ndarray]
    bias_vel: list[np.ndarray]
    bank_vel: np.ndarray
    clf_weight_vel: np.ndarray | None = None
    clf_bias_vel: np.ndarray | None = None

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            [v.copy() for v in self.weight_vel],
            [v.copy() for v in self.bias_vel],
            self.bank_vel.copy(),
            None if self.clf_weight_vel is None else self.clf_weight_vel.copy(),
            None if self.clf_bias_vel is None else self.clf_bias_vel.copy(),
        )


@dataclass
class TrainState:
    params: enc.MlpParams
    bank: CenterlineBank
    classifier: LinearClassifier | None
    velocities: OptimizerState
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    def snapshot(self) -> "TrainResult":
        clf = None
        if self.classifier is not None:
            clf = LinearClassifier(self.classifier.weights.copy(), self.classifier.bias.copy())
        return TrainResult(
            params=self.params.copy(),
            bank=CenterlineBank(self.bank.centers.copy()),
            classifier=clf,
            optimizer=self.velocities.copy(),
            history=[dict(h) for h in self.history],
            epochs_run=self.epoch,
        )


@dataclass
class TrainResult:
    params: enc.MlpParams
    bank: CenterlineBank
    classifier: LinearClassifier | None
    optimizer: OptimizerState
    history: list[dict]
    epochs_run: int


def iterate_batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    """One epoch's batches: a fresh permutation cut into consecutive slices."""
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _detect_divergence(state: TrainState, cfg: TrainConfig, init_norm: float) -> tuple[str, str] | None:
    """Epoch-end health check on the centerline bank.

    Signals (each threshold is a config field):

    * ``non_finite``       - NaN/Inf anywhere in parameters or centerlines;
    * ``centerline_blowup`` - a centerline norm exceeded the hard limit;
    * ``centerline_collapse`` - the bank grew but its directions merged onto
      one line (max pairwise cosine above the collapse threshold); this is
      the pull-only failure mode, so it is checked when the pull term is on;
    * ``centerline_stall`` - a push-only bank (push enabled, no pull) never
      grew beyond its initialization scale: nothing maintains the
      centerlines, they are effectively abandoned.
    """
    centers = state.bank.centers
    epoch = state.epoch
    if not np.isfinite(centers).all() or any(
        not np.isfinite(w).all() for w in state.params.weights
    ):
        return "non_finite", "non-finite parameter values"
    norms = np.linalg.norm(centers, axis=1)
    if norms.max() > cfg.centerline_norm_limit:
        return (
            "centerline_blowup",
            f"max centerline norm {norms.max():.3g} exceeds limit {cfg.centerline_norm_limit:.3g}",
        )
    grown = norms.max() > cfg.centerline_growth_ratio * init_norm
    if cfg.loss.use_cluster and epoch >= cfg.collapse_check_epoch and grown:
        units = centers / np.maximum(norms, 1e-300)[:, None]
        off = (units @ units.T)[~np.eye(len(centers), dtype=bool)]
        if off.max() > cfg.centerline_collapse_cosine:
            return (
                "centerline_collapse",
                f"centerlines collapsed onto one direction "
                f"(max pairwise cosine {off.max():.5f})",
            )
    push_only = (
        cfg.loss.use_ortho
        and cfg.loss.ortho_variant == "centerline"
        and not (cfg.loss.use_cluster or cfg.loss.use_center)
    )
    if push_only and epoch >= cfg.stall_check_epoch and not grown:
        return (
            "centerline_stall",
            f"push-only centerlines never grew past {cfg.centerline_growth_ratio:.3g}x "
            f"their initialization scale (max norm {norms.max():.3g})",
        )
    return None


def _evaluate_map(params: enc.MlpParams, dataset: Dataset) -> float:
    tags = dataset.view_split_tags()
    mask = tags == "test" if (tags == "test").any() else np.ones(dataset.num_views, bool)
    feats, _ = enc.forward_batch(params, dataset.inputs[mask])
    descs, labels, _ = pool_descriptors(feats, dataset.object_ids[mask], dataset.labels[mask])
    return evaluate_run(rank(descs, labels)).micro.map


def train(dataset: Dataset, cfg: TrainConfig) -> TrainResult:
    """Run the full schedule; returns the trained state plus epoch history.

    Raises DivergenceError when the detector fires; the error carries the
    last healthy snapshot so callers can still persist a checkpoint.
    """
    tags = dataset.view_split_tags()
    train_mask = tags == "train"
    if not train_mask.any():
        raise ValueError("dataset has no training rows")
    inputs = dataset.inputs[train_mask]
    labels = dataset.labels[train_mask]
    n = inputs.shape[0]

    num_classes = cfg.num_classes or int(dataset.labels.max())
    if labels.max() > num_classes:
        raise ValueError("num_classes is smaller than the largest label present")

    rng = np.random.default_rng(cfg.seed)
    spec = enc.MlpSpec.from_dims(
        (dataset.input_dim, *cfg.hidden_dims, cfg.embedding_dim),
        final=cfg.final_activation,
    )
    params = enc.init_params(spec, rng, cfg.init_std)
    bank = CenterlineBank.init_gaussian(num_classes, cfg.embedding_dim, CENTERLINE_INIT_STD, rng)
    classifier = (
        LinearClassifier.zeros(num_classes, cfg.embedding_dim) if cfg.loss.use_softmax else None
    )
    state = TrainState(
        params=params,
        bank=bank,
        classifier=classifier,
        velocities=OptimizerState(
            weight_vel=[np.zeros_like(w) for w in params.weights],
            bias_vel=[np.zeros_like(b) for b in params.biases],
            bank_vel=np.zeros_like(bank.centers),
            clf_weight_vel=np.zeros_like(classifier.weights) if classifier else None,
            clf_bias_vel=np.zeros_like(classifier.bias) if classifier else None,
        ),
    )
    init_norm = float(np.linalg.norm(bank.centers, axis=1).mean())
    last_good = state.snapshot()

    for epoch in range(cfg.epochs):
        state.epoch = epoch
        lr = lr_at(epoch, cfg)
        center_lr = cfg.centerline_lr if cfg.centerline_lr is not None else lr
        term_sums = {"cluster": 0.0, "ortho": 0.0, "softmax": 0.0, "center": 0.0}
        total_sum = 0.0
        batches = iterate_batches(n, cfg.batch_size, rng)

        for batch_idx in batches:
            feats, cache = enc.forward_batch(state.params, inputs[batch_idx])
            if not np.isfinite(feats).all():
                raise DivergenceError(
                    f"non-finite embeddings at epoch {epoch}",
                    "non_finite", epoch, last_good, state.history,
                )
            batch = LabeledBatch(feats, labels[batch_idx])
            report = loss_report(batch, state.bank, cfg.loss, state.classifier)
            if not np.isfinite(report.total):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}",
                    "non_finite", epoch, last_good, state.history,
                )
            grads, _ = enc.backward_batch(state.params, cache, report.feature_grads)
            vel = state.velocities
            try:
                for w, v, g in zip(state.params.weights, vel.weight_vel, grads.weights):
                    sgd_step(w, v, g, lr, cfg.momentum, cfg.weight_decay)
                for b, v, g in zip(state.params.biases, vel.bias_vel, grads.biases):
                    sgd_step(b, v, g, lr, cfg.momentum, cfg.weight_decay)
                if report.classifier_grads is not None:
                    gw, gb = report.classifier_grads
                    sgd_step(state.classifier.weights, vel.clf_weight_vel, gw,
                             lr, cfg.momentum, cfg.weight_decay)
                    sgd_step(state.classifier.bias, vel.clf_bias_vel, gb,
                             lr, cfg.momentum, cfg.weight_decay)
                sgd_step(state.bank.centers, vel.bank_vel, report.center_grads,
                         center_lr, cfg.momentum, 0.0)
            except ValueError as e:
                raise DivergenceError(
                    f"aborting epoch {epoch}: {e}", "non_finite", epoch, last_good, state.history
                ) from None
            for name in term_sums:
                term_sums[name] += report.per_term[name]
            total_sum += report.total

        row = {"epoch": epoch, "lr": lr, "total": total_sum / len(batches)}
        for name in term_sums:
            row[name] = term_sums[name] / len(batches)
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            row["map"] = _evaluate_map(state.params, dataset)
        state.history.append(row)

        verdict = _detect_divergence(state, cfg, init_norm)
        if verdict is not None:
            signal, detail = verdict
            raise DivergenceError(
                f"divergence detected at epoch {epoch}: {detail}",
                signal, epoch, last_good, state.history,
            )
        state.epoch = epoch + 1
        last_good = state.snapshot()

    return last_good


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: enc.MlpParams
    bank: CenterlineBank
    classifier: LinearClassifier | None
    optimizer: OptimizerState | None
    meta: dict


def save_checkpoint(result: TrainResult, path, meta: dict | None = None) -> None:
    opt = result.optimizer
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "encoder": enc.params_to_dict(result.params),
        "centerlines": result.bank.centers.tolist(),
        "classifier": (
            {
                "weights": result.classifier.weights.tolist(),
                "bias": result.classifier.bias.tolist(),
            }
            if result.classifier is not None
            else None
        ),
        "optimizer": (
            {
                "weight_vel": [v.tolist() for v in opt.weight_vel],
                "bias_vel": [v.tolist() for v in opt.bias_vel],
                "bank_vel": opt.bank_vel.tolist(),
                "clf_weight_vel": None if opt.clf_weight_vel is None else opt.clf_weight_vel.tolist(),
                "clf_bias_vel": None if opt.clf_bias_vel is None else opt.clf_bias_vel.tolist(),
            }
            if opt is not None
            else None
        ),
        "meta": {"epochs_run": result.epochs_run, **(meta or {})},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> Checkpoint:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {doc.get('format_version')}")
    clf = None
    if doc.get("classifier") is not None:
        clf = LinearClassifier(
            np.asarray(doc["classifier"]["weights"], dtype=np.float64),
            np.asarray(doc["classifier"]["bias"], dtype=np.float64),
        )
    opt = None
    if doc.get("optimizer") is not None:
        raw = doc["optimizer"]
        opt = OptimizerState(
            weight_vel=[np.asarray(v, dtype=np.float64) for v in raw["weight_vel"]],
            bias_vel=[np.asarray(v, dtype=np.float64) for v in raw["bias_vel"]],
            bank_vel=np.asarray(raw["bank_vel"], dtype=np.float64),
            clf_weight_vel=(None if raw["clf_weight_vel"] is None
                            else np.asarray(raw["clf_weight_vel"], dtype=np.float64)),
            clf_bias_vel=(None if raw["clf_bias_vel"] is None
                          else np.asarray(raw["clf_bias_vel"], dtype=np.float64)),
        )
    return Checkpoint(
        params=enc.params_from_dict(doc["encoder"]),
        bank=CenterlineBank(np.asarray(doc["centerlines"], dtype=np.float64)),
        classifier=clf,
        optimizer=opt,
        meta=doc.get("meta", {}),
    )


def history_to_csv(history: list[dict], path) -> None:
    """Write epoch history with stable columns (blank map when not evaluated)."""
    lines = [",".join(HISTORY_FIELDS)]
    for row in history:
        cells = []
        for name in HISTORY_FIELDS:
            v = row.get(name, "")
            cells.append(format(v, ".17g") if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
