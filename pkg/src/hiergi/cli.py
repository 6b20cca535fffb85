"""Command-line entry points: train, eval, predict, cv, make-synthetic.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. Relative
manifest paths are resolved against $HIERGI_DATA_DIR when set, else against
the manifest's directory.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, asdict, field

import numpy as np
import torch

from . import data as data_mod
from . import metrics as metrics_mod
from . import models as models_mod
from . import synthetic
from . import training
from .hierarchy import load_hierarchy, default_hierarchy, TaxonomyError


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    task: str = "classify"                 # classify | segment
    manifest: str = None
    hierarchy: str = None                  # path; None -> bundled taxonomy
    model: str = None                      # None -> task default
    seed: int = 0
    tta: bool = True
    val_fraction: float = 0.2
    out_dir: str = "runs/run"
    folds: int = 5
    augment: bool = True
    schedule: dict = field(default_factory=dict)  # ScheduleConfig overrides

    def materialize(self):
        """Fill every default so the persisted config is fully concrete."""
        if self.task not in ("classify", "segment"):
            raise UsageError(f"unknown task {self.task!r}")
        if self.model is None:
            self.model = "tiny_cnn" if self.task == "classify" else "tiny_double_unet"
        base = (training.ScheduleConfig.classification() if self.task == "classify"
                else training.ScheduleConfig.segmentation())
        sched = asdict(base)
        unknown = set(self.schedule) - set(sched)
        if unknown:
            raise UsageError(f"unknown schedule keys: {sorted(unknown)}")
        sched.update(self.schedule)
        sched["image_size"] = tuple(sched["image_size"])
        self.schedule = sched
        return self

    def schedule_config(self):
        return training.ScheduleConfig(**self.schedule)

    @classmethod
    def from_file(cls, path, **overrides):
        try:
            with open(path) as f:
                doc = json.load(f)
        except OSError as e:
            raise UsageError(f"cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise UsageError(f"config {path} is not valid JSON: {e}")
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown config keys in {path}: {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc).materialize()


def _data_root():
    return os.environ.get("HIERGI_DATA_DIR") or None


def _load_hierarchy(cfg_or_path):
    path = cfg_or_path.hierarchy if isinstance(cfg_or_path, ExperimentConfig) else cfg_or_path
    if path is None:
        return default_hierarchy()
    if not os.path.exists(path):
        raise UsageError(f"hierarchy file not found: {path}")
    return load_hierarchy(path)


def _load_dataset(cfg, h):
    if cfg.manifest is None or not os.path.exists(cfg.manifest):
        raise UsageError(f"manifest not found: {cfg.manifest}")
    if cfg.task == "classify":
        return data_mod.load_class_manifest(cfg.manifest, h, root=_data_root())
    return data_mod.load_seg_manifest(cfg.manifest, root=_data_root())


def _holdout_split(cfg, dataset):
    if cfg.task == "classify":
        labels = np.asarray(dataset.labels())
    else:
        labels = np.zeros(len(dataset), dtype=np.int64)
    k = max(2, round(1.0 / cfg.val_fraction))
    plan = data_mod.build_folds(labels, k=k, seed=cfg.seed)
    return plan.train_indices(0), plan.fold_indices(0)


def _build_model(cfg, h):
    n = h.n_find if cfg.task == "classify" else None
    return models_mod.build_model(cfg.model, n_classes=n)


def cmd_train(args):
    cfg = ExperimentConfig.from_file(args.config, task=args.task)
    if args.dry_run:
        print(json.dumps(asdict(cfg), indent=2, default=str))
        return 0
    h = _load_hierarchy(cfg)
    dataset = _load_dataset(cfg, h)
    train_idx, val_idx = _holdout_split(cfg, dataset)
    model = _build_model(cfg, h)
    sched = cfg.schedule_config()
    run_dir = os.path.join(cfg.out_dir, "fold0")
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "experiment.json"), "w") as f:
        json.dump(asdict(cfg), f, indent=2, default=str)
    if cfg.task == "classify":
        state = training.train_classifier(dataset, train_idx, val_idx, model, sched,
                                          seed=cfg.seed, run_dir=run_dir,
                                          augment_train=cfg.augment)
    else:
        state = training.train_segmenter(dataset, train_idx, val_idx, model, sched,
                                         seed=cfg.seed, run_dir=run_dir,
                                         augment_train=cfg.augment)
    print(f"best val metric {state.best_metric:.4f} at epoch {state.best_epoch}; "
          f"run dir: {run_dir}")
    return 0


def _load_checkpoint_models(args, cfg, h):
    models = []
    for ckpt in args.checkpoint:
        if not os.path.exists(ckpt):
            raise UsageError(f"checkpoint not found: {ckpt}")
        sidecar_path = os.path.splitext(ckpt)[0] + ".json"
        if os.path.exists(sidecar_path):
            with open(sidecar_path) as f:
                sidecar = json.load(f)
            want = sidecar.get("hierarchy_hash")
            if want is not None and want != h.content_hash():
                raise UsageError(
                    f"hierarchy hash mismatch for {ckpt}: checkpoint was trained "
                    f"against {want}, loaded taxonomy is {h.content_hash()}"
                )
        model = _build_model(cfg, h)
        model.load_state_dict(torch.load(ckpt, weights_only=True))
        model.eval()
        models.append(model)
    return models


def cmd_eval(args):
    cfg = ExperimentConfig(task=args.task, manifest=args.manifest,
                           hierarchy=args.hierarchy, model=args.model).materialize()
    h = _load_hierarchy(cfg)
    models = _load_checkpoint_models(args, cfg, h)
    dataset = _load_dataset(cfg, h)
    sched = cfg.schedule_config()
    use_tta = not args.no_tta

    if cfg.task == "classify":
        xs = [data_mod.preprocess(p, size=sched.image_size)
              for p, _ in dataset.records]
        preds = training.predict_ensemble(models, xs, sched, task="classify",
                                          use_tta=use_tta)
        y_true = dataset.labels()
        y_pred = [int(np.argmax(p)) for p in preds]
        report = metrics_mod.classification_report(y_true, y_pred, h.n_find)
    else:
        pairs = []
        for pair in dataset:
            x, m = data_mod.preprocess(pair.image_path, pair.mask_path,
                                       size=sched.image_size)
            pairs.append((x, m))
        preds = training.predict_ensemble(models, [x for x, _ in pairs], sched,
                                          task="segment", use_tta=use_tta)
        scored = [((p[0] > 0.5).astype(np.uint8), m[0].numpy().astype(np.uint8))
                  for p, (_, m) in zip(preds, pairs)]
        report = metrics_mod.dataset_seg_report(scored, aggregation=args.aggregation)

    doc = json.loads(report.to_json())
    doc["ensemble"] = len(models) > 1
    doc["members"] = len(models)
    doc["tta"] = use_tta
    out = args.output or "report.json"
    with open(out, "w") as f:
        json.dump(doc, f, indent=2)
    print(json.dumps(doc, indent=2))
    return 0


def cmd_predict(args):
    cfg = ExperimentConfig(task=args.task, manifest=args.manifest,
                           hierarchy=args.hierarchy, model=args.model).materialize()
    h = _load_hierarchy(cfg)
    models = _load_checkpoint_models(args, cfg, h)
    dataset = _load_dataset(cfg, h)
    sched = cfg.schedule_config()
    os.makedirs(args.output, exist_ok=True)

    if cfg.task == "classify":
        xs = [data_mod.preprocess(p, size=sched.image_size)
              for p, _ in dataset.records]
        preds = training.predict_ensemble(models, xs, sched, task="classify",
                                          use_tta=not args.no_tta)
        rows = [
            {"path": p, "probs": pred.tolist(),
             "finding": h.findings[int(np.argmax(pred))]}
            for (p, _), pred in zip(dataset.records, preds)
        ]
        out = os.path.join(args.output, "predictions.json")
        with open(out, "w") as f:
            json.dump(rows, f, indent=2)
        print(f"wrote {out}")
    else:
        from PIL import Image
        xs = [data_mod.preprocess(pair.image_path, size=sched.image_size)
              for pair in dataset]
        preds = training.predict_ensemble(models, xs, sched, task="segment",
                                          use_tta=not args.no_tta)
        for pair, pred in zip(dataset, preds):
            mask = ((pred[0] > 0.5) * 255).astype(np.uint8)
            name = os.path.splitext(os.path.basename(pair.image_path))[0] + "_pred.png"
            Image.fromarray(mask).save(os.path.join(args.output, name))
        print(f"wrote {len(preds)} masks to {args.output}")
    return 0


def cmd_cv(args):
    cfg = ExperimentConfig.from_file(args.config, task=args.task)
    if args.dry_run:
        print(json.dumps(asdict(cfg), indent=2, default=str))
        return 0
    h = _load_hierarchy(cfg)
    dataset = _load_dataset(cfg, h)
    sched = cfg.schedule_config()
    model_factory = lambda: _build_model(cfg, h)
    result = training.run_cv(dataset, model_factory, sched, task=cfg.task,
                             k=cfg.folds, seed=cfg.seed, run_dir=cfg.out_dir)
    doc = {
        "fold_metrics": result.fold_metrics,
        "mean_metric": result.mean_metric,
        "folds": cfg.folds,
    }
    with open(os.path.join(cfg.out_dir, "cv_report.json"), "w") as f:
        json.dump(doc, f, indent=2)
    print(json.dumps(doc, indent=2))
    return 0


def cmd_make_synthetic(args):
    h = _load_hierarchy(args.hierarchy)
    if args.task == "classify":
        if args.n < h.n_find:
            raise UsageError(f"need n >= {h.n_find} for one sample per finding")
        manifest = synthetic.make_classification(args.out_dir, args.n, h,
                                                 seed=args.seed)
    else:
        manifest = synthetic.make_segmentation(args.out_dir, args.n, seed=args.seed)
    print(f"wrote {manifest}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hiergi")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model with a holdout validation split")
    t.add_argument("--config", required=True, help="experiment config JSON")
    t.add_argument("--task", choices=["classify", "segment"])
    t.add_argument("--dry-run", action="store_true",
                   help="print the materialized config and exit")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate checkpoint(s); several trigger TTA+ensembling")
    e.add_argument("--task", choices=["classify", "segment"], required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint", nargs="+", required=True)
    e.add_argument("--hierarchy")
    e.add_argument("--model")
    e.add_argument("--no-tta", action="store_true")
    e.add_argument("--aggregation", choices=["per-image-mean", "pooled"],
                   default="per-image-mean")
    e.add_argument("--output")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write ensembled predictions")
    pr.add_argument("--task", choices=["classify", "segment"], required=True)
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--checkpoint", nargs="+", required=True)
    pr.add_argument("--hierarchy")
    pr.add_argument("--model")
    pr.add_argument("--no-tta", action="store_true")
    pr.add_argument("--output", required=True)
    pr.set_defaults(func=cmd_predict)

    c = sub.add_parser("cv", help="k-fold cross-validation with per-fold checkpoints")
    c.add_argument("--config", required=True)
    c.add_argument("--task", choices=["classify", "segment"])
    c.add_argument("--dry-run", action="store_true")
    c.set_defaults(func=cmd_cv)

    m = sub.add_parser("make-synthetic", help="generate a desk-scale dataset")
    m.add_argument("--task", choices=["classify", "segment"], required=True)
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out-dir", required=True)
    m.add_argument("--hierarchy")
    m.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, TaxonomyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
