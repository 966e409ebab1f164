# actions/training.py
import math
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from errors import UsageError
from model import save_model
from settings import section
from train import TrainConfig, evaluate, load_dataset, parse_arch, train


def _image_shape(arch, image_size: Optional[str]) -> Tuple[int, int]:
    if image_size:
        parts = image_size.lower().split("x")
        try:
            h, w = (int(parts[0]), int(parts[-1]))
        except ValueError:
            raise UsageError(f"--image-size must look like 10 or 10x10, got {image_size!r}")
    else:
        side = math.isqrt(arch[0])
        if side * side != arch[0]:
            raise UsageError(f"input width {arch[0]} is not square; pass --image-size HxW")
        h = w = side
    if h * w != arch[0]:
        raise UsageError(f"image {h}x{w} does not match input width {arch[0]}")
    return h, w


def train_model(args: Dict[str, Any], config: Dict[str, Any]) -> Dict[str, Any]:
    try:
        arch = parse_arch(args.get("arch") or "")
    except ValueError as e:
        raise UsageError(str(e))
    target = _image_shape(arch, args.get("image_size"))

    train_config = TrainConfig.from_config(
        section(config, "train"),
        epochs=args.get("epochs"),
        seed=args.get("seed"),
        batch_size=args.get("batch_size"),
        learning_rate=args.get("learning_rate"),
    )

    data_dir = Path(args["data_dir"])
    train_set = load_dataset(data_dir, "train", target)
    print(f"Training {arch} on {len(train_set)} {target[0]}x{target[1]} images")
    model = train(train_set, arch, train_config)

    result = {"ok": True, "arch": arch, "train_accuracy": evaluate(model, train_set)}
    try:
        test_set = load_dataset(data_dir, "test", target)
        result["test_accuracy"] = evaluate(model, test_set)
    except FileNotFoundError:
        result["test_accuracy"] = None

    save_model(model, args["out"])
    result["model"] = str(args["out"])
    accuracy = result["test_accuracy"] if result["test_accuracy"] is not None else result["train_accuracy"]
    print(f"accuracy={accuracy:.4f}")
    return result
