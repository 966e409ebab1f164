# settings.py
import copy
import json
import os
from pathlib import Path
from typing import Any, Dict

from dotenv import load_dotenv

CONFIG_ENV = "BNN_INVERT_CONFIG"

DEFAULT_CONFIG: Dict[str, Any] = {
    "train": {
        "epochs": 25,
        "batch_size": 64,
        "learning_rate": 0.05,
        "seed": 0,
        "momentum": 0.9,
        "epsilon": 1e-5,
    },
    "solver": {
        "restart_base": 64,
        "max_conflicts": None,
        "external_command": None,
        "external_timeout": 600,
    },
    "sample": {
        "seed": 0,
        "samples": 100,
        "distinct": True,
    },
    "verify": {
        "random_inputs": 1000,
        "brute_force_limit": 25,
        "exhaustive_limit": 16,
    },
    "log_level": "INFO",
}


def config_path() -> Path:
    # .env may point somewhere else; real environment variables win
    load_dotenv()
    return Path(os.getenv(CONFIG_ENV, "config.json"))


def _merge(defaults: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: Path | None = None) -> Dict[str, Any]:
    path = Path(path) if path else config_path()
    try:
        with open(path, "r") as f:
            on_disk = json.load(f)
    except FileNotFoundError:
        on_disk = {}
    except json.JSONDecodeError as e:
        print(f"[WARN] ignoring unreadable config {path}: {e}")
        on_disk = {}

    return _merge(DEFAULT_CONFIG, on_disk)


def section(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    return _merge(DEFAULT_CONFIG.get(name, {}), config.get(name, {}))
