"""Command-line entry point: simulate, emulate-bfm, train, eval, plot, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 run failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset_store, eval_metrics, model_zoo, sim_scene, train_loop
from .dataset_store import DatasetError
from .sim_scene import SceneConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUN = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_scene_config(path, preset: str, samples_seed=None) -> SceneConfig:
    base = SceneConfig() if preset == "desk" else SceneConfig.paper_scale()
    if path is None:
        overrides = {}
    else:
        overrides = json.loads(Path(path).read_text())
        if not isinstance(overrides, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
    field_names = {f.name for f in dataclasses.fields(SceneConfig)}
    unknown = sorted(set(overrides) - field_names)
    if unknown:
        raise UsageError(f"unknown scene config keys: {', '.join(unknown)}")
    merged = dataclasses.asdict(base)
    merged.update(overrides)
    if samples_seed is not None:
        merged["rng_seed"] = samples_seed
    for key in ("room_size", "ap_position", "sta_position"):
        merged[key] = tuple(merged[key])
    if merged.get("paths") is not None:
        merged["paths"] = tuple(
            (tuple(seg[0]), tuple(seg[1])) for seg in merged["paths"]
        )
    return SceneConfig(**merged)


def _parse_hw(text: str):
    try:
        h, w = text.lower().split("x")
        return (int(h), int(w))
    except ValueError as exc:
        raise UsageError(f"expected HxW (e.g. 96x96), got {text!r}") from exc


def _parse_seeds(text: str):
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError as exc:
        raise UsageError(f"seeds must be comma-separated integers, got {text!r}") from exc


def cmd_simulate(args) -> int:
    if args.samples < 1:
        raise UsageError(f"--samples must be >= 1, got {args.samples}")
    try:
        config = _load_scene_config(args.config, args.preset, args.seed)
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(str(exc))
    pairs = sim_scene.generate_dataset(config, args.samples)
    manifest = dataset_store.write_dataset(args.out, pairs, config)
    print(
        f"wrote {manifest.sample_count} samples to {args.out} "
        f"(K={manifest.k}, M={manifest.m}, N={manifest.n}, "
        f"image {manifest.image_height}x{manifest.image_width})"
    )
    return EXIT_OK


def cmd_emulate_bfm(args) -> int:
    manifest = dataset_store.materialize_bfm(args.dataset)
    print(f"bfm.bin present for {manifest.sample_count} samples in {args.dataset}")
    return EXIT_OK


def _train_config_from_args(args) -> train_loop.TrainConfig:
    return train_loop.TrainConfig(
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        learning_rate=args.lr,
        patience=args.patience,
        seeds=_parse_seeds(args.seeds),
        split_seed=args.split_seed,
        deterministic=args.deterministic,
        image_hw=_parse_hw(args.image_size),
    )


def cmd_train(args) -> int:
    try:
        config = _train_config_from_args(args)
    except ValueError as exc:
        raise UsageError(str(exc))
    bundle = dataset_store.read_dataset(args.dataset)
    data = train_loop.prepare_dataset(bundle, config)
    result = train_loop.run_protocol(
        data, [args.model], config, out_root=args.out, log=print
    )
    n_done = sum(len(v) for v in result.records.values())
    print(f"{n_done}/{len(config.seeds)} runs completed under {args.out}")
    if result.failures:
        for kind, fails in result.failures.items():
            for seed, exc in fails.items():
                print(f"FAILED {kind} seed={seed}: {exc}", file=sys.stderr)
        if any(
            isinstance(e, dataset_store.ModalityError)
            for fails in result.failures.values()
            for e in fails.values()
        ):
            return EXIT_DATA
        return EXIT_RUN
    return EXIT_OK


def _load_split(run_dir):
    split = json.loads((Path(run_dir) / "split.json").read_text())
    return (
        np.asarray(split["train"]),
        np.asarray(split["val"]),
        np.asarray(split["test"]),
    )


def _prepare_for_run(run_dir, dataset_dir):
    run_dir = Path(run_dir)
    snapshot = json.loads((run_dir / "config.json").read_text())
    tc = snapshot["train_config"]
    config = train_loop.TrainConfig(
        seeds=tuple(tc["seeds"]),
        split_seed=tc["split_seed"],
        split_ratio=tuple(tc["split_ratio"]),
        image_hw=tuple(tc["image_hw"]),
    )
    bundle = dataset_store.read_dataset(dataset_dir)
    data = train_loop.prepare_dataset(bundle, config, split=_load_split(run_dir))
    params = train_loop.load_run_params(run_dir)
    return snapshot, data, params


def cmd_eval(args) -> int:
    snapshot, data, params = _prepare_for_run(args.run, args.dataset)
    pred = train_loop.predict(params, data, data.test_idx)
    truth = data.targets[np.asarray(data.test_idx)].permute(0, 2, 3, 1).numpy()
    test_rmse = eval_metrics.rmse(pred, truth)
    out = {
        "kind": snapshot["kind"],
        "seed": snapshot["seed"],
        "test_rmse": test_rmse,
        "n_test": len(data.test_idx),
    }
    (Path(args.run) / "metrics.json").write_text(json.dumps(out, indent=2))
    print(f"{snapshot['kind']} seed={snapshot['seed']}: test RMSE {test_rmse:.6f} "
          f"over {len(data.test_idx)} samples")
    return EXIT_OK


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    snapshot, data, params = _prepare_for_run(args.run, args.dataset)
    sample = args.sample if args.sample is not None else int(data.test_idx[0])
    if not 0 <= sample < data.targets.shape[0]:
        raise DatasetError(f"sample index {sample} outside dataset of {data.targets.shape[0]}")
    manifest = dataset_store.read_manifest(args.dataset)
    pred = train_loop.predict(params, data, np.asarray([sample]))[0]
    truth = data.targets[sample].permute(1, 2, 0).numpy()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for element in args.element:
        try:
            n, m = (int(v) for v in element.split(","))
        except ValueError as exc:
            raise UsageError(f"--element expects 'n,m', got {element!r}") from exc
        rows = eval_metrics.element_series(truth, pred, (n, m), manifest.m)
        base = out_dir / f"sample{sample}_element_{n}_{m}"
        eval_metrics.write_element_series_csv(base.with_suffix(".csv"), rows)
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(rows[:, 0], rows[:, 1], label="ground truth")
        ax.plot(rows[:, 0], rows[:, 2], label=f"{snapshot['kind']} prediction", ls="--")
        ax.set_xlabel("subcarrier index")
        ax.set_ylabel("normalized amplitude")
        ax.set_title(f"element ({n}, {m}), sample {sample}")
        ax.legend()
        fig.tight_layout()
        fig.savefig(base.with_suffix(".svg"))
        plt.close(fig)
        print(f"wrote {base.with_suffix('.csv')} and {base.with_suffix('.svg')}")
    return EXIT_OK


def _collect_run_dirs(paths):
    run_dirs = []
    for path in paths:
        path = Path(path)
        if (path / "runrecord.json").exists():
            run_dirs.append(path)
        else:
            run_dirs.extend(sorted(p.parent for p in path.rglob("runrecord.json")))
    return run_dirs


def build_report(run_dirs):
    """Group completed runs by kind and summarize; returns (rows, skipped)."""
    by_kind = {}
    skipped = []
    for run_dir in run_dirs:
        record = json.loads((Path(run_dir) / "runrecord.json").read_text())
        if record.get("test_rmse") is None:
            skipped.append(str(run_dir))
            continue
        by_kind.setdefault(record["kind"], []).append(record)
    rows = []
    for kind in sorted(by_kind):
        records = by_kind[kind]
        rmses = [r["test_rmse"] for r in records]
        if len(rmses) >= 2:
            metrics = eval_metrics.summarize(rmses, kind=kind)
            rows.append(metrics.to_json_dict())
        else:
            rows.append(
                {
                    "kind": kind,
                    "per_seed_rmse": rmses,
                    "mean_rmse": rmses[0],
                    "std_rmse": None,
                    "note": "single seed, std omitted",
                }
            )
    rows.sort(key=lambda r: r["mean_rmse"])
    return rows, skipped


def cmd_report(args) -> int:
    run_dirs = _collect_run_dirs(args.runs)
    if not run_dirs:
        raise DatasetError("no run directories with runrecord.json found")
    rows, skipped = build_report(run_dirs)
    for path in skipped:
        print(f"warning: skipping incomplete run {path}", file=sys.stderr)
    if not rows:
        raise DatasetError("no completed runs to report")

    print(f"{'model':<12} {'RMSE':>10} {'± std':>12} {'seeds':>6}")
    for i, row in enumerate(rows):
        std = f"{row['std_rmse']:.6f}" if row["std_rmse"] is not None else "n/a"
        marker = "  <- best" if i == 0 else ""
        print(
            f"{row['kind']:<12} {row['mean_rmse']:>10.6f} {std:>12} "
            f"{len(row['per_seed_rmse']):>6}{marker}"
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps({"models": rows}, indent=2))
    print(f"wrote {report_path}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="csirecomp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None, help="override config rng_seed")
    p.add_argument("--config", default=None, help="JSON file with scene config keys")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("emulate-bfm", help="materialize bfm.bin for a dataset")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_emulate_bfm)

    p = sub.add_parser("train", help="train one model kind over several seeds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True, choices=model_zoo.MODEL_KINDS)
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--out", required=True)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--image-size", default="96x96")
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="recompute test metrics for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="export element frequency series (CSV + SVG)")
    p.add_argument("--run", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--sample", type=int, default=None, help="dataset sample index (default: first test sample)")
    p.add_argument("--element", action="append", default=None, help="0-based 'n,m' element, repeatable")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("report", help="summarize runs into a comparison table")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "element", None) is None and getattr(args, "command", "") == "plot":
        args.element = ["0,0"]
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except train_loop.TrainingDiverged as exc:
        print(f"run failure: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
