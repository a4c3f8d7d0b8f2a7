"""Command-line entry point.

Subcommands: dataset (gen | inspect), train, quantize, eval, dse,
complexity. Every run that writes artifacts also writes a run.json echoing
the fully resolved configuration, so any output directory can be
reproduced from that file alone. Exit codes: 0 success, 1 domain error,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .costs import CostConstants, default_constants, full_report
from .dse import (
    Constraints,
    DseGrid,
    NoFeasiblePoint,
    emit_report,
    load_accuracy_table,
    run_dse,
    select,
)
from .errors import SpikeDseError
from .events import (
    encode_dataset,
    load_dataset,
    make_synthetic_dataset,
    parse_csv,
    parse_dat,
    write_dataset,
)
from .network import build_network
from .quantize import QuantConfig, ptq
from .training import TrainConfig, evaluate, train, write_training_log


def _write_run_json(out_dir: Path, command: str, config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "config": config}
    (out_dir / "run.json").write_text(
        json.dumps(payload, indent=1, sort_keys=True) + "\n"
    )


def _load_constants(path: str | None) -> CostConstants:
    return CostConstants.from_json(path) if path else default_constants()


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

def cmd_dataset_gen(args) -> int:
    train_split, test_split = make_synthetic_dataset(
        per_class=args.per_class,
        seed=args.seed,
        test_fraction=args.test_fraction,
        classes=args.classes,
        sensor_width=args.sensor,
        sensor_height=args.sensor,
        duration_us=args.duration,
        noise_events=args.noise_events,
    )
    out = Path(args.out)
    write_dataset({"train": train_split, "test": test_split}, out)
    _write_run_json(
        out,
        "dataset gen",
        {
            "classes": args.classes,
            "per_class": args.per_class,
            "seed": args.seed,
            "test_fraction": args.test_fraction,
            "sensor": args.sensor,
            "duration": args.duration,
            "noise_events": args.noise_events,
            "out": str(out),
        },
    )
    print(f"wrote {len(train_split)} train / {len(test_split)} test samples to {out}")
    return 0


def cmd_dataset_inspect(args) -> int:
    path = Path(args.file)
    if path.suffix.lower() == ".csv":
        sample = parse_csv(path.read_text())
    else:
        sample = parse_dat(path.read_bytes())
    ev = sample.events
    summary = {
        "file": str(path),
        "events": sample.n_events,
        "sensor": [sample.sensor_width, sample.sensor_height],
        "duration_us": sample.duration_us,
        "label": sample.label,
        "t_range": [int(ev["t"].min()), int(ev["t"].max())] if sample.n_events else None,
        "positive_fraction": float(ev["p"].mean()) if sample.n_events else None,
    }
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# train / quantize / eval
# ---------------------------------------------------------------------------

def _resolve_data(data_cfg: dict, window: int, timesteps: int, workers: int):
    """Turn a config data block into encoded (frames, label) splits."""
    if "dir" in data_cfg:
        root = data_cfg["dir"]
        train_samples = load_dataset(root, "train", workers=workers)
        test_samples = load_dataset(root, "test", workers=workers)
    else:
        syn = data_cfg["synthetic"]
        train_samples, test_samples = make_synthetic_dataset(
            per_class=syn.get("per_class", 150),
            seed=syn.get("seed", 0),
            test_fraction=syn.get("test_fraction", 1.0 / 3.0),
            sensor_width=syn.get("sensor", 64),
            sensor_height=syn.get("sensor", 64),
            duration_us=syn.get("duration", 100_000),
            noise_events=syn.get("noise_events", 1024),
        )
    mode = data_cfg.get("window_mode", "per_sample")
    return (
        encode_dataset(train_samples, window, timesteps, window_mode=mode),
        encode_dataset(test_samples, window, timesteps, window_mode=mode),
    )


def cmd_train(args) -> int:
    raw = json.loads(Path(args.config).read_text())
    config = TrainConfig(
        epochs=raw["epochs"],
        batch_size=raw.get("batch_size", 20),
        learning_rate=raw.get("learning_rate", 0.1),
        momentum=raw.get("momentum", 0.9),
        seed=raw["seed"],
        timesteps=raw.get("timesteps", 10),
        window=raw.get("window", 50),
        lr_decay_epoch=raw.get("lr_decay_epoch", 120),
        lr_decay_factor=raw.get("lr_decay_factor", 0.1),
        checkpoint_every=raw.get("checkpoint_every", 0),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_data, test_data = _resolve_data(
        raw["data"], config.window, config.timesteps, args.workers
    )
    net = build_network(config.window, strict=raw.get("strict", True))
    weights, log = train(
        net,
        train_data,
        config,
        test_data=test_data,
        checkpoint_dir=out if config.checkpoint_every else None,
        workers=args.workers,
    )
    save_checkpoint(out / "weights.ckpt", net, weights, seed=config.seed)
    write_training_log(log, out / "training_log.csv")
    _write_run_json(out, "train", {**raw, "out": str(out), "workers": args.workers})
    final = log[-1].test_acc if log else float("nan")
    print(f"trained {config.epochs} epochs; final test accuracy {final:.4f}")
    return 0


def cmd_quantize(args) -> int:
    spec, weights, header = load_checkpoint(args.checkpoint)
    config = QuantConfig(bits=args.bits, rounding=args.rounding, seed=args.seed)
    quantized = ptq(weights, config)
    out = Path(args.out)
    save_checkpoint(
        out,
        spec,
        quantized,
        seed=header.get("seed"),
        precision=f"{args.bits}b-{args.rounding}",
    )
    _write_run_json(
        out.parent,
        "quantize",
        {
            "checkpoint": str(args.checkpoint),
            "bits": args.bits,
            "rounding": args.rounding,
            "seed": args.seed,
            "out": str(out),
        },
    )
    print(f"quantized to {args.bits}-bit ({args.rounding}) -> {out}")
    return 0


def cmd_eval(args) -> int:
    spec, weights, _ = load_checkpoint(args.checkpoint)
    test_samples = load_dataset(args.data, args.split, workers=args.workers)
    timesteps = args.timesteps
    data = encode_dataset(
        test_samples, spec.input_window, timesteps, window_mode=args.window_mode
    )
    accuracy = evaluate(spec, weights, data, workers=args.workers)
    print(json.dumps({"accuracy": accuracy, "samples": len(data)}))
    return 0


# ---------------------------------------------------------------------------
# dse / complexity
# ---------------------------------------------------------------------------

def cmd_dse(args) -> int:
    grid = DseGrid.from_json(args.grid) if args.grid else DseGrid()
    constants = _load_constants(args.constants)
    out = Path(args.out)

    if args.accuracy_source == "table":
        table = load_accuracy_table(args.accuracy_table)
        points = run_dse(None, None, grid, constants, accuracy_table=table)
    else:
        raw = (
            json.loads(Path(args.train_config).read_text())
            if args.train_config
            else {"epochs": 5, "seed": 0}
        )
        if args.data:
            raw["data"] = {"dir": args.data}
        if "data" not in raw:
            raise SpikeDseError("live mode needs --data or a train config with a data block")
        baselines = {}
        encoded = {}
        for w in grid.windows:
            for t in grid.timesteps:
                cfg = TrainConfig(
                    epochs=raw["epochs"],
                    batch_size=raw.get("batch_size", 20),
                    learning_rate=raw.get("learning_rate", 0.1),
                    momentum=raw.get("momentum", 0.9),
                    seed=raw["seed"],
                    timesteps=t,
                    window=w,
                )
                train_data, test_data = _resolve_data(raw["data"], w, t, args.workers)
                net = build_network(w)
                weights, _ = train(net, train_data, cfg, workers=args.workers)
                baselines[(t, w)] = weights
                encoded[(t, w)] = test_data
        points = _run_dse_preencoded(grid, constants, baselines, encoded)

    results_path, pareto_path = emit_report(points, out)
    selection = None
    if args.constraints:
        constraints = Constraints.from_json(args.constraints)
        try:
            chosen = select(points, constraints)
            selection = {
                "tag": chosen.tag,
                "accuracy": chosen.accuracy,
                "memory_bits": chosen.cost.memory_bits,
            }
        except NoFeasiblePoint:
            selection = None
        (out / "selection.json").write_text(
            json.dumps({"constraints": json.loads(args.constraints), "selected": selection},
                       indent=1, sort_keys=True) + "\n"
        )
    _write_run_json(
        out,
        "dse",
        {
            "grid": args.grid,
            "constants": args.constants,
            "accuracy_source": args.accuracy_source,
            "accuracy_table": args.accuracy_table,
            "constraints": args.constraints,
            "data": args.data,
            "train_config": args.train_config,
            "workers": args.workers,
            "out": str(out),
        },
    )
    print(f"wrote {results_path} and {pareto_path}")
    if selection:
        print(f"selected {selection['tag']}")
    return 0


def _run_dse_preencoded(grid, constants, baselines, encoded):
    """Live DSE where test splits are already encoded per (T, W)."""
    from .dse import DsePoint, enumerate_grid

    settings = enumerate_grid(grid)
    specs = {w: build_network(w) for w in grid.windows}
    points = []
    for b, t, w in settings:
        quantized = ptq(baselines[(t, w)], QuantConfig(bits=b))
        acc = evaluate(specs[w], quantized, encoded[(t, w)])
        points.append(
            DsePoint(b, t, w, acc, full_report(specs[w], b, t, w, constants), "live")
        )
    return points


def cmd_complexity(args) -> int:
    constants = _load_constants(args.constants)
    spec = build_network(args.window, strict=args.strict)
    report = full_report(spec, args.bits, args.timestep, args.window, constants)
    payload = {
        "tag": report.tag,
        "bits": report.bits,
        "timesteps": report.timesteps,
        "window": report.window,
        "memory_bits": report.memory_bits,
        "latency_units": report.latency_units,
        "energy_units": report.energy_units,
        "synaptic_ops": report.op_count.synaptic_ops,
        "neuron_ops": report.op_count.neuron_ops,
        "per_layer": [asdict(p) for p in report.op_count.per_layer],
    }
    print(json.dumps(payload, indent=1, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "complexity.json").write_text(
            json.dumps(payload, indent=1, sort_keys=True) + "\n"
        )
        _write_run_json(
            out,
            "complexity",
            {
                "window": args.window,
                "timestep": args.timestep,
                "bits": args.bits,
                "constants": args.constants,
                "out": str(out),
            },
        )
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikedse",
        description="Spiking-network training, quantization and design-space exploration",
    )
    parser.add_argument("--workers", type=int, default=1, help="worker thread cap")
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="generate or inspect event datasets")
    dataset_sub = p_dataset.add_subparsers(dest="dataset_command", required=True)

    p_gen = dataset_sub.add_parser("gen", help="write a synthetic dataset directory")
    p_gen.add_argument("--classes", type=int, default=2)
    p_gen.add_argument("--per-class", type=int, required=True, dest="per_class")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--test-fraction", type=float, default=1.0 / 3.0,
                       dest="test_fraction")
    p_gen.add_argument("--sensor", type=int, default=64)
    p_gen.add_argument("--duration", type=int, default=100_000)
    p_gen.add_argument("--noise-events", type=int, default=1024, dest="noise_events")
    p_gen.set_defaults(func=cmd_dataset_gen)

    p_inspect = dataset_sub.add_parser("inspect", help="summarize one event file")
    p_inspect.add_argument("file")
    p_inspect.set_defaults(func=cmd_dataset_inspect)

    p_train = sub.add_parser("train", help="train from a JSON config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_quant = sub.add_parser("quantize", help="post-training quantize a checkpoint")
    p_quant.add_argument("--checkpoint", required=True)
    p_quant.add_argument("--bits", type=int, required=True)
    p_quant.add_argument("--rounding", choices=["TR", "RN", "SR"], default="TR")
    p_quant.add_argument("--seed", type=int, default=0)
    p_quant.add_argument("--out", required=True)
    p_quant.set_defaults(func=cmd_quantize)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--split", default="test")
    p_eval.add_argument("--timesteps", type=int, required=True)
    p_eval.add_argument("--window-mode", default="per_sample", dest="window_mode",
                        choices=["per_sample", "center"])
    p_eval.set_defaults(func=cmd_eval)

    p_dse = sub.add_parser("dse", help="run the design-space exploration")
    p_dse.add_argument("--grid", help="grid JSON {bits, timesteps, windows}")
    p_dse.add_argument("--constants", help="cost constants JSON")
    p_dse.add_argument("--constraints", help='JSON like {"max_memory_mb": 8}')
    p_dse.add_argument("--accuracy-source", choices=["live", "table"],
                       default="table", dest="accuracy_source")
    p_dse.add_argument("--accuracy-table", dest="accuracy_table",
                       help="accuracy table JSON (defaults to bundled NCARS table)")
    p_dse.add_argument("--data", help="dataset directory for live accuracy mode")
    p_dse.add_argument("--train-config", dest="train_config",
                       help="training config for live accuracy mode")
    p_dse.add_argument("--out", required=True)
    p_dse.set_defaults(func=cmd_dse)

    p_cx = sub.add_parser("complexity", help="print the cost report for one setting")
    p_cx.add_argument("--window", type=int, required=True)
    p_cx.add_argument("--timestep", type=int, required=True)
    p_cx.add_argument("--bits", type=int, default=32)
    p_cx.add_argument("--constants")
    p_cx.add_argument("--strict", action="store_true", default=True)
    p_cx.add_argument("--out")
    p_cx.set_defaults(func=cmd_complexity)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (SpikeDseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
