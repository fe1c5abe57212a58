"""Command-line entry point: train, eval, decompose, export-adjacency, synth.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import Config, ConfigError, load_config, save_config
from .dataio import DataError, Dataset, load_dataset, synth_band_dataset, write_dataset, zscore_rows
from .decomposer import decompose, init_decomposer
from .model import AdaFCN
from .trainer import accuracy, auroc, model_config_for, run_cv, write_cv_summary, write_metrics

logger = logging.getLogger("adafcn")

USAGE_ERRORS = (ConfigError, DataError, CheckpointError)

SYNTH_KEYS = {"n": "synth_n", "N": "synth_roi", "T": "synth_t", "c": "synth_classes",
              "seed": "synth_seed", "noise": "synth_noise"}


class UsageError(Exception):
    pass


def _synthetic_overrides(desc: str) -> list[str]:
    out = ["data.manifest=none"]
    for item in filter(None, desc.split(",")):
        key, _, value = item.partition("=")
        if key.strip() not in SYNTH_KEYS:
            raise UsageError(f"unknown --synthetic key {key!r} (expected one of {sorted(SYNTH_KEYS)})")
        out.append(f"data.{SYNTH_KEYS[key.strip()]}={value.strip()}")
    return out


def _resolve_config(args) -> Config:
    overrides = []
    if getattr(args, "synthetic", None) is not None:
        overrides += _synthetic_overrides(args.synthetic)
    if getattr(args, "manifest", None):
        overrides.append(f"data.manifest={args.manifest}")
    if getattr(args, "folds", None) is not None:
        overrides.append(f"train.folds={args.folds}")
    if getattr(args, "max_epochs", None) is not None:
        overrides.append(f"train.max_epochs={args.max_epochs}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    overrides += getattr(args, "set", None) or []
    for item in getattr(args, "set", None) or []:
        logger.info("override %s", item)
    return load_config(getattr(args, "config", None), overrides)


def _dataset_for(cfg: Config, args) -> Dataset:
    if cfg.data.manifest:
        return load_dataset(cfg.data.manifest)
    if getattr(args, "synthetic", None) is None and getattr(args, "config", None) is None:
        raise UsageError("provide --manifest, --synthetic or --config")
    d = cfg.data
    ds, _ = synth_band_dataset(d.synth_n, d.synth_roi, d.synth_t, d.synth_classes,
                               seed=d.synth_seed, noise=d.synth_noise)
    return ds


def _workers(requested: int) -> int:
    cap = os.environ.get("AFCN_THREADS")
    n = max(1, requested)
    return min(n, max(1, int(cap))) if cap else n


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    dataset = _dataset_for(cfg, args)
    model_config_for(dataset, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "resolved_config.json")
    logger.info("resolved config: %s", json.dumps(cfg.to_flat(), sort_keys=True))

    folds = [args.fold] if args.fold is not None else None
    if cfg.train.split == "all":
        folds = [0]
    summary = run_cv(dataset, cfg, workers=_workers(args.workers), folds=folds)
    for r in summary["folds"]:
        fold_dir = out / f"fold_{r.fold:02d}"
        fold_dir.mkdir(exist_ok=True)
        write_metrics(fold_dir / "metrics.csv", r.log)
        save_checkpoint(fold_dir / "checkpoint.afcn", r.state, cfg.model)
    write_cv_summary(out / "cv_summary.csv", summary)
    auc = "n/a" if summary["auroc_mean"] is None else f"{summary['auroc_mean']:.2f}±{summary['auroc_std']:.2f}"
    print(f"accuracy {summary['acc_mean']:.2f}±{summary['acc_std']:.2f}  AUROC {auc}")
    return 0


def _load_model(checkpoint: str, config_path=None, dataset: Dataset = None) -> AdaFCN:
    state, mcfg = load_checkpoint(checkpoint)
    if config_path is not None:
        cfg = load_config(config_path)
        expected = cfg.model
        if dataset is not None:
            expected.n_roi, expected.t_len, expected.n_classes = mcfg.n_roi, mcfg.t_len, mcfg.n_classes
        if expected.digest() != mcfg.digest():
            raise CheckpointError(f"checkpoint {checkpoint} was not trained with config {config_path}")
    if dataset is not None and (dataset.atlas_size, dataset.t_len) != (mcfg.n_roi, mcfg.t_len):
        raise CheckpointError(f"checkpoint expects N={mcfg.n_roi}, T={mcfg.t_len}; dataset has "
                              f"N={dataset.atlas_size}, T={dataset.t_len}")
    model = AdaFCN(mcfg)
    model.load_state_dict(state)
    return model


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    dataset = _dataset_for(cfg, args)
    model = _load_model(args.checkpoint, None, dataset)
    probs = model.predict_proba(dataset.stack())
    auc = auroc(probs, dataset.labels)
    auc_txt = "n/a" if auc is None else f"{auc:.2f}"
    print(f"accuracy {accuracy(probs, dataset.labels):.2f}  AUROC {auc_txt}")
    return 0


def _read_matrix(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def cmd_decompose(args) -> int:
    x = _read_matrix(args.input)
    if not args.raw:
        x = zscore_rows(x)
    if args.init_only:
        params = init_decomposer(args.K, args.w_low, args.w_high, seed=args.seed, noise=args.init_noise)
        K = args.K
    else:
        if not args.params:
            raise UsageError("decompose needs --params CHECKPOINT or --init-only")
        model = _load_model(args.params)
        if model.decomposer is None:
            raise UsageError("checkpoint has no decomposer (K=0)")
        if x.shape[1] != model.cfg.t_len:
            raise UsageError(f"input has T={x.shape[1]}, checkpoint expects T={model.cfg.t_len}")
        params, K = model.decomposer, model.cfg.K
    bands = decompose(x, params).data
    np.savetxt(args.out, bands.reshape(2 * K * x.shape[0], x.shape[1]), delimiter=",", fmt="%.17g")
    return 0


def cmd_export_adjacency(args) -> int:
    cfg = _resolve_config(args)
    dataset = _dataset_for(cfg, args)
    model = _load_model(args.checkpoint, args.config, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x, labels = dataset.stack(), dataset.labels
    groups = {f"label{c}": np.flatnonzero(labels == c) for c in np.unique(labels)} \
        if args.group_by_label else {"all": np.arange(len(labels))}
    N, P = dataset.atlas_size, model.n_bands
    for name, idx in groups.items():
        sums = {"unified": 0.0, "intra": 0.0, "cross": 0.0}
        for start in range(0, len(idx), 64):
            res = model.forward(x[idx[start:start + 64]])
            sums["unified"] = sums["unified"] + res.a_unified.data.sum(axis=0)
            sums["intra"] = sums["intra"] + res.a_intra.data.sum(axis=0)
            if res.a_cross is not None:
                sums["cross"] = sums["cross"] + res.a_cross.data.sum(axis=0)
        for kind, total in sums.items():
            mat = np.broadcast_to(np.asarray(total, dtype=float) / len(idx), (P * N, P * N))
            np.savetxt(out / f"{kind}_{name}.csv", mat, delimiter=",", fmt="%.17g")
    with open(out / "legend.csv", "w") as fh:
        fh.write("band,row_start,row_end\n")
        for k, band in enumerate(model.band_names):
            fh.write(f"{band},{k * N},{(k + 1) * N}\n")
    return 0


def cmd_synth(args) -> int:
    ds, truth = synth_band_dataset(args.n, args.roi, args.t, args.classes, seed=args.seed, noise=args.noise)
    path = write_dataset(ds, args.out, truth)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adafcn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--manifest", help="dataset manifest JSON")
        sp.add_argument("--synthetic", metavar="KEYS",
                        help="synthetic dataset, e.g. n=40,N=16,T=128,c=2[,seed=0,noise=0.3]")
        sp.add_argument("--config", help="JSON config (flat dotted keys or nested sections)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")

    t = sub.add_parser("train", help="cross-validated training")
    data_args(t)
    t.add_argument("--folds", type=int)
    t.add_argument("--fold", type=int, help="train a single fold")
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int, default=1, help="parallel folds (capped by AFCN_THREADS)")
    t.add_argument("--out", default="runs/latest")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    data_args(e)
    e.add_argument("--checkpoint", required=True)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("decompose", help="write the sub-band stack of one subject")
    d.add_argument("--input", required=True, help="subject CSV (N rows x T columns)")
    d.add_argument("--params", help="checkpoint holding trained kernels")
    d.add_argument("--init-only", action="store_true", help="use freshly initialised kernels")
    d.add_argument("--K", type=int, default=2)
    d.add_argument("--w-low", type=int, default=5)
    d.add_argument("--w-high", type=int, default=3)
    d.add_argument("--init-noise", type=float, default=0.01)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--raw", action="store_true", help="skip per-ROI z-scoring of the input")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decompose)

    x = sub.add_parser("export-adjacency", help="group-averaged adjacency matrices as CSV")
    data_args(x)
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--no-group-by-label", dest="group_by_label", action="store_false")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_adjacency)

    s = sub.add_parser("synth", help="write a synthetic band-coupled dataset")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--roi", type=int, default=16)
    s.add_argument("--t", type=int, default=256)
    s.add_argument("--classes", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
