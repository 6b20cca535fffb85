"""Optimization protocol: SGD with cosine-decayed learning rate and warm
restarts, per-epoch validation monitoring with best-checkpoint retention, and
five-fold cross-validation orchestration with TTA ensembling.

Run directory layout:
    runs/<name>/fold<i>/checkpoints/best.pt (+ best.json sidecar)
    runs/<name>/fold<i>/lr_trace.csv
    runs/<name>/fold<i>/metrics.csv   (epoch,train_loss,val_metric)
    runs/<name>/fold<i>/config.json
"""

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from . import data as data_mod
from . import metrics as metrics_mod
from . import models as models_mod
from .losses import HierLossWeights, HierTarget, hier_loss_batch, seg_loss


@dataclass
class ScheduleConfig:
    lr_init: float = 0.01
    lr_final: float = 1e-8
    epochs_per_cycle: int = 10
    cycles: int = 5
    batch_size: int = 8
    momentum: float = 0.9
    weight_decay: float = 0.0
    clip_grad_norm: float = None
    image_size: tuple = data_mod.DEFAULT_SIZE

    def __post_init__(self):
        if not self.lr_init > self.lr_final > 0:
            raise ValueError("need lr_init > lr_final > 0")
        if self.epochs_per_cycle < 1 or self.cycles < 1:
            raise ValueError("epochs_per_cycle and cycles must be >= 1")
        if self.clip_grad_norm is not None and self.clip_grad_norm <= 0:
            raise ValueError("clip_grad_norm must be positive")

    @classmethod
    def classification(cls, **overrides):
        return cls(**{**dict(epochs_per_cycle=10, cycles=5, batch_size=8), **overrides})

    @classmethod
    def segmentation(cls, **overrides):
        return cls(**{**dict(epochs_per_cycle=50, cycles=20, batch_size=4), **overrides})

    @property
    def total_epochs(self):
        return self.epochs_per_cycle * self.cycles


def lr_at(t, cfg: ScheduleConfig):
    """Cosine-decayed learning rate at position t in [0, epochs_per_cycle] of a
    cycle; t=0 gives lr_init, t=n gives lr_final."""
    n = cfg.epochs_per_cycle
    if not 0 <= t <= n:
        raise ValueError(f"t={t} outside [0, {n}]")
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1 + math.cos(math.pi * t / n))


def lr_trace(cfg: ScheduleConfig):
    """Per-epoch learning rates over the whole run; restarts at each cycle."""
    return [lr_at(e % cfg.epochs_per_cycle, cfg) for e in range(cfg.total_epochs)]


@dataclass
class RunState:
    seed: int
    epoch: int = -1
    cycle: int = 0
    best_metric: float = -math.inf
    best_epoch: int = -1
    best_checkpoint: str = None
    train_loss_trace: list = field(default_factory=list)
    val_metric_trace: list = field(default_factory=list)
    lr_trace: list = field(default_factory=list)


def config_hash(cfg) -> str:
    doc = json.dumps(asdict(cfg) if not isinstance(cfg, dict) else cfg,
                     sort_keys=True, default=str)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _epoch_seed(seed, epoch):
    return (seed * 1_000_003 + epoch) % (2**31)


def _save_checkpoint(model, path, sidecar):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    torch.save(model.state_dict(), path)
    with open(path.replace(".pt", ".json"), "w") as f:
        json.dump(sidecar, f, indent=2)


def _write_traces(run_dir, state, cfg):
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "lr_trace.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "lr"])
        for e, lr in enumerate(state.lr_trace):
            w.writerow([e, lr])
    with open(os.path.join(run_dir, "metrics.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_metric"])
        for e, (tl, vm) in enumerate(zip(state.train_loss_trace, state.val_metric_trace)):
            w.writerow([e, tl, vm])
    with open(os.path.join(run_dir, "config.json"), "w") as f:
        json.dump(asdict(cfg), f, indent=2, default=str)


def _check_finite(loss, epoch, batch_idx, paths):
    if not torch.isfinite(loss):
        raise RuntimeError(
            f"non-finite loss at epoch {epoch}, batch {batch_idx}; "
            f"batch files: {paths}"
        )


def _load_class_batch(manifest, idxs, cfg, rng, do_augment):
    xs, targets, paths = [], [], []
    h = manifest.hierarchy
    for i in idxs:
        path, finding = manifest.records[i]
        x = data_mod.preprocess(path, size=cfg.image_size)
        if do_augment:
            x = data_mod.augment(x, rng=rng)
        xs.append(x)
        targets.append(HierTarget.from_finding(h.finding_index(finding), h))
        paths.append(path)
    return torch.stack(xs), targets, paths


def _load_seg_batch(pairs, idxs, cfg, rng, do_augment):
    xs, ms, paths = [], [], []
    for i in idxs:
        pair = pairs[i]
        x, m = data_mod.preprocess(pair.image_path, pair.mask_path, size=cfg.image_size)
        if do_augment:
            x, m = data_mod.augment(x, m, rng=rng)
        xs.append(x)
        ms.append(m)
        paths.append(pair.image_path)
    return torch.stack(xs), torch.stack(ms), paths


@torch.no_grad()
def _eval_classifier(model, manifest, idxs, cfg):
    model.eval()
    h = manifest.hierarchy
    y_true, y_pred = [], []
    for start in range(0, len(idxs), cfg.batch_size):
        batch_idx = idxs[start:start + cfg.batch_size]
        x, targets, _ = _load_class_batch(manifest, batch_idx, cfg, None, False)
        logits = model(x)
        y_pred.extend(logits.argmax(dim=-1).tolist())
        y_true.extend(t.y_find for t in targets)
    cm = metrics_mod.ConfusionMatrix.from_predictions(y_true, y_pred, h.n_find)
    return metrics_mod.mcc(cm)


@torch.no_grad()
def _eval_segmenter(model, pairs, idxs, cfg):
    model.eval()
    scored = []
    for i in idxs:
        pair = pairs[i]
        x, m = data_mod.preprocess(pair.image_path, pair.mask_path, size=cfg.image_size)
        out = model(x.unsqueeze(0))
        if isinstance(out, tuple):
            out = out[-1]
        pred = (torch.sigmoid(out)[0, 0] > 0.5).numpy().astype(np.uint8)
        scored.append((pred, m[0].numpy().astype(np.uint8)))
    report = metrics_mod.dataset_seg_report(scored)
    return report.f1  # mean Dice


def _train(model, cfg, seed, run_dir, epoch_indices_fn, batch_fn, loss_fn, eval_fn,
           augment_train=True):
    torch.manual_seed(seed)
    opt = torch.optim.SGD(model.parameters(), lr=cfg.lr_init,
                          momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    state = RunState(seed=seed)
    ckpt_path = os.path.join(run_dir, "checkpoints", "best.pt")

    for epoch in range(cfg.total_epochs):
        state.epoch = epoch
        state.cycle = epoch // cfg.epochs_per_cycle
        lr = lr_at(epoch % cfg.epochs_per_cycle, cfg)
        for g in opt.param_groups:
            g["lr"] = lr
        state.lr_trace.append(lr)

        order = epoch_indices_fn(epoch)
        rng = np.random.default_rng(_epoch_seed(seed, epoch))
        model.train()
        losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idxs = order[start:start + cfg.batch_size]
            batch = batch_fn(idxs, rng, augment_train)
            try:
                loss = loss_fn(model, batch)
            except ValueError as e:
                if "finite" in str(e):
                    raise RuntimeError(
                        f"non-finite model output at epoch {epoch}, batch {b}; "
                        f"batch files: {batch[-1]}"
                    ) from e
                raise
            _check_finite(loss, epoch, b, batch[-1])
            opt.zero_grad()
            loss.backward()
            if cfg.clip_grad_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(),
                                               cfg.clip_grad_norm)
            opt.step()
            losses.append(loss.item())
        state.train_loss_trace.append(float(np.mean(losses)))

        val_metric = eval_fn(model)
        state.val_metric_trace.append(val_metric)
        if val_metric > state.best_metric:
            state.best_metric = val_metric
            state.best_epoch = epoch
            state.best_checkpoint = ckpt_path
            _save_checkpoint(model, ckpt_path, {
                "epoch": epoch,
                "metric": val_metric,
                "config_hash": config_hash(cfg),
            })

    _write_traces(run_dir, state, cfg)
    return state


def train_classifier(manifest, train_idx, val_idx, model, cfg: ScheduleConfig,
                     seed=0, run_dir="runs/classify/fold0", weights=None,
                     augment_train=True):
    """Train a classifier with the hierarchical loss, monitoring validation MCC."""
    h = manifest.hierarchy
    if weights is None:
        weights = HierLossWeights.from_hierarchy(h)
    labels = np.asarray(manifest.labels())
    train_idx = np.asarray(train_idx)
    val_idx = np.asarray(val_idx)
    if set(train_idx) & set(val_idx):
        raise ValueError("train and validation indices overlap")

    def epoch_indices(epoch):
        return data_mod.oversample_epoch(labels, seed=_epoch_seed(seed, epoch),
                                         indices=train_idx)

    def batch(idxs, rng, do_augment):
        return _load_class_batch(manifest, idxs, cfg, rng, do_augment)

    def loss(model, b):
        x, targets, _ = b
        return hier_loss_batch(model(x), targets, weights, h)

    def evaluate(model):
        return _eval_classifier(model, manifest, val_idx, cfg)

    state = _train(model, cfg, seed, run_dir, epoch_indices, batch, loss, evaluate,
                   augment_train)
    # record hierarchy hash in the retained checkpoint sidecar
    sidecar_path = os.path.join(run_dir, "checkpoints", "best.json")
    with open(sidecar_path) as f:
        sidecar = json.load(f)
    sidecar["hierarchy_hash"] = h.content_hash()
    with open(sidecar_path, "w") as f:
        json.dump(sidecar, f, indent=2)
    return state


def train_segmenter(pairs, train_idx, val_idx, model, cfg: ScheduleConfig,
                    seed=0, run_dir="runs/segment/fold0", augment_train=True):
    """Train a dual-supervised segmenter, monitoring validation mean Dice."""
    train_idx = np.asarray(train_idx)
    val_idx = np.asarray(val_idx)
    if set(train_idx) & set(val_idx):
        raise ValueError("train and validation indices overlap")

    def epoch_indices(epoch):
        rng = np.random.default_rng(_epoch_seed(seed, epoch))
        return rng.permutation(train_idx)

    def batch(idxs, rng, do_augment):
        return _load_seg_batch(pairs, idxs, cfg, rng, do_augment)

    def loss(model, b):
        x, m, _ = b
        logits_1, logits_2 = model(x)
        return seg_loss(logits_1, logits_2, m)

    def evaluate(model):
        return _eval_segmenter(model, pairs, val_idx, cfg)

    return _train(model, cfg, seed, run_dir, epoch_indices, batch, loss, evaluate,
                  augment_train)


@dataclass
class CVResult:
    fold_states: list
    fold_metrics: list
    mean_metric: float
    test_predictions: object = None
    test_report: object = None


def run_cv(dataset, model_factory, cfg: ScheduleConfig, task="classify", k=5,
           seed=0, run_dir="runs/cv", test_set=None, use_tta=True):
    """Five-fold cross-validation: train one model per fold, report the mean of
    the per-fold validation metrics, and (optionally) produce TTA-ensembled
    predictions on an external test set."""
    if task == "classify":
        labels = np.asarray(dataset.labels())
    elif task == "segment":
        labels = np.zeros(len(dataset), dtype=np.int64)
    else:
        raise ValueError(f"unknown task {task!r}")

    plan = data_mod.build_folds(labels, k=k, seed=seed)
    states, fold_models = [], []
    for fold in range(k):
        fold_dir = os.path.join(run_dir, f"fold{fold}")
        model = model_factory()
        try:
            if task == "classify":
                st = train_classifier(dataset, plan.train_indices(fold),
                                      plan.fold_indices(fold), model, cfg,
                                      seed=seed + fold, run_dir=fold_dir)
            else:
                st = train_segmenter(dataset, plan.train_indices(fold),
                                     plan.fold_indices(fold), model, cfg,
                                     seed=seed + fold, run_dir=fold_dir)
        except Exception as e:
            raise RuntimeError(f"fold {fold} failed: {e}") from e
        # reload the retained best weights for ensembling
        model.load_state_dict(torch.load(st.best_checkpoint, weights_only=True))
        model.eval()
        states.append(st)
        fold_models.append(model)

    fold_metrics = [s.best_metric for s in states]
    result = CVResult(states, fold_metrics, float(np.mean(fold_metrics)))

    if test_set is not None:
        result.test_predictions = predict_ensemble(
            fold_models, test_set, cfg, task=task, use_tta=use_tta)
    return result


def predict_ensemble(models, inputs, cfg, task="classify", use_tta=True):
    """TTA predictions from each model, averaged across models.

    inputs: preprocessed tensors (classification) or (image, mask) tensors /
    image tensors (segmentation). Returns one averaged prediction per input.
    """
    out = []
    for x in inputs:
        member_preds = []
        for model in models:
            model.eval()
            if task == "classify":
                if use_tta:
                    p = models_mod.tta_classify(model, x)
                else:
                    with torch.no_grad():
                        p = torch.softmax(model(x.unsqueeze(0))[0], dim=-1)
                member_preds.append(p.numpy())
            else:
                if use_tta:
                    p = models_mod.tta_segment(model, x)
                else:
                    with torch.no_grad():
                        o = model(x.unsqueeze(0))
                        if isinstance(o, tuple):
                            o = o[-1]
                        p = torch.sigmoid(o)[0]
                member_preds.append(p.numpy())
        out.append(models_mod.ensemble(member_preds))
    return out
