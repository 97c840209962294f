"""Command-line orchestrator: theta gen|train|eval|teleop|proto-fuzz.

Reports go to stdout as JSON; logs go to stderr. Exit codes are a stable
contract: 0 ok, 2 config/argument error, 3 I/O error, 4 stream error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import handmodel as hm
from . import metrics as thetametrics
from . import net as thetanet
from .config import PipelineConfig, load_config
from .errors import ArgumentError, ConfigError, ParseError, StreamError, ThetaError
from .pipeline import load_training_data
from .synthview import generate_dataset
from .teleop import dataset_source, parse_script, run_teleop, script_source
from .wire import run_fuzz

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_STREAM = 4

log = logging.getLogger("theta")


def _load_table(config: PipelineConfig):
    if config.gesture_table is None:
        return hm.default_gesture_table()
    with open(config.gesture_table, "rb") as fh:
        return hm.parse_gesture_table(fh)


def cmd_gen(args) -> int:
    config = load_config(args.config)
    if args.frames_per_gesture <= 0:
        raise ConfigError(f"--frames-per-gesture must be >= 1, got {args.frames_per_gesture}")
    table = _load_table(config)
    manifest = generate_dataset(
        table,
        args.frames_per_gesture,
        args.out,
        rig=config.rig,
        spec=config.hand,
        scene_ranges=config.scene,
        seed=config.seed,
    )
    json.dump(
        {
            "out_dir": str(args.out),
            "gestures": len(table),
            "images": len(manifest["samples"]),
        },
        sys.stdout,
    )
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config)
    tr = dict(config.training)
    if args.epochs is not None:
        tr["epochs"] = args.epochs
    if args.freeze is not None:
        tr["freeze"] = args.freeze
    log.info("preparing training data from %s", args.data)
    data = load_training_data(args.data, config)
    log.info("training on %d triplets", len(data.labels))

    def log_epoch(record):
        json.dump(record, sys.stdout)
        sys.stdout.write("\n")
        sys.stdout.flush()

    result = thetanet.train(
        data,
        config.network,
        epochs=tr["epochs"],
        lr=tr["lr"],
        batch_size=tr["batch_size"],
        gamma=tr["gamma"],
        temperature=tr["temperature"],
        freeze=tr["freeze"],
        seed=config.seed,
        val_fraction=tr["val_fraction"],
        bf16=tr["bf16"],
        log_fn=log_epoch,
    )
    thetanet.save_checkpoint(result.best_state, args.out, spec=config.network)
    log.info("saved checkpoint %s (best val acc %.4f)", args.out, result.best_val_acc)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config)
    net = thetanet.load_checkpoint(args.checkpoint)
    data = load_training_data(args.data, config)
    if len(data.labels) == 0:
        raise ConfigError("evaluation set is empty")
    cm = thetametrics.ConfusionMatrixSet()
    batch = config.training["batch_size"]
    for start in range(0, len(data.labels), batch):
        x = thetanet.TrainingData.dequantize(data.inputs[start : start + batch])
        bins, _conf = thetanet.predict_bins(net, x, config.training["temperature"])
        thetametrics.accumulate(bins, data.labels[start : start + batch], into=cm)
    rep = thetametrics.report(cm, checkpoint_id=str(args.checkpoint))
    json.dump(rep, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_teleop(args) -> int:
    config = load_config(args.config)
    net = thetanet.load_checkpoint(args.checkpoint)
    if args.source == "script":
        table = _load_table(config)
        script = parse_script(args.script, table)
        source = script_source(script, config)
    else:
        source = dataset_source(args.source, config)
    result = run_teleop(config, net, source, sink=args.sink)
    json.dump(
        {
            "latency": result.latency.to_dict(),
            "fidelity": result.fidelity,
            "ticks": result.ticks,
            "post_settle_ticks": result.post_settle_ticks,
            "frames_processed": result.frames_processed,
            "parser_counters": result.parser_counters,
            "sync_drops": result.sync_drops,
        },
        sys.stdout,
    )
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_proto_fuzz(args) -> int:
    counters = run_fuzz(args.seed, args.n)
    json.dump(counters, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="theta", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="render a labeled synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--frames-per-gesture", type=int, default=50)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the joint-angle classifier")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--freeze", choices=[thetanet.FREEZE_NONE, thetanet.FREEZE_ALL_BUT_LAST_2], default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("teleop", help="run the live teleoperation simulation loop")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument(
        "--source",
        default="script",
        help="'script' for --script playback, or a recorded dataset directory",
    )
    p.add_argument("--script", default="Open Palm:3,Closed Fist:3,Number One:3")
    p.add_argument("--sink", default="loopback", help="'loopback' or a serial device path")
    p.set_defaults(func=cmd_teleop)

    p = sub.add_parser("proto-fuzz", help="wire-protocol robustness harness")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=10000)
    p.set_defaults(func=cmd_proto_fuzz)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ArgumentError, ParseError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except StreamError as exc:
        log.error("%s", exc)
        return EXIT_STREAM
    except (OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ThetaError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
