#!/usr/bin/env python3
import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from executer import EXIT_USAGE, execute
from settings import config_path, load_config


def check_config() -> Dict[str, Any]:
    """Merge config.json over the defaults and write the result back."""
    path = config_path()
    config = load_config(path)
    try:
        with open(path, "w") as f:
            f.write(json.dumps(config, indent=4) + "\n")
    except OSError as e:
        print(f"[WARN] could not write {path}: {e}")
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bnn-invert",
        description="Train binarized networks, compile them to CNF and query them with a SAT solver.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("train", help="train a BNN on downscaled MNIST")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--arch", required=True, help="comma-separated widths, e.g. 100,20,10")
    p.add_argument("--image-size", help="HxW of the downscaled images (default: square root of the input width)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="model.json")

    p = sub.add_parser("encode", help="compile a model file into DIMACS CNF plus a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--out-cnf", default="bnn.cnf")
    p.add_argument("--out-manifest", default="bnn.manifest.json")

    p = sub.add_parser("infer", help="classify one input through the CNF")
    p.add_argument("--cnf", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--input", required=True, help="PGM path, -1/+1 comma list or 0/1 string")

    p = sub.add_parser("invert", help="sample inputs the network maps to a label")
    p.add_argument("--cnf", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", help="model file used to re-verify every sample")
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--distinct", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--data-dir", help="MNIST directory for distance-to-training-set stats")
    p.add_argument("--out-dir", default="inverted")

    p = sub.add_parser("enumerate", help="list the full preimage of a label")
    p.add_argument("--cnf", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--cap", type=int, default=1000)
    p.add_argument("--out-dir")

    p = sub.add_parser("verify", help="check the CNF against the network")
    p.add_argument("--model", required=True)
    p.add_argument("--cnf")
    p.add_argument("--manifest")
    p.add_argument("--mode", choices=["exhaustive", "random"], default="exhaustive")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0
    if not ns.command:
        parser.print_help()
        return EXIT_USAGE

    config = check_config()
    logging.basicConfig(
        level=getattr(logging, str(config.get("log_level", "INFO")).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    args = {k: v for k, v in vars(ns).items() if k != "command"}
    return execute(ns.command, args, config)


if __name__ == "__main__":
    sys.exit(main())
