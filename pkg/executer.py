#!/usr/bin/env python3
import json
import logging
from typing import Any, Callable, Dict

from actions.checks import verify_model
from actions.encoding import encode_model
from actions.queries import enumerate_label, infer, invert_label
from actions.training import train_model
from errors import (
    BudgetError,
    CnfFormatError,
    DimensionError,
    EncodingError,
    IdxFormatError,
    InvalidInputError,
    ManifestMismatchError,
    ModelFormatError,
    ProtocolError,
    TrainingError,
    UsageError,
)

logger = logging.getLogger(__name__)

Handler = Callable[[Dict[str, Any], Dict[str, Any]], Dict[str, Any]]

ACTIONS: Dict[str, Handler] = {
    "train": train_model,
    "encode": encode_model,
    "infer": infer,
    "invert": invert_label,
    "enumerate": enumerate_label,
    "verify": verify_model,
}

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_BAD_FILE = 3
EXIT_FAILED = 4

# checked in order; subclasses before their bases
EXIT_CODES = [
    (ManifestMismatchError, 11),
    ((UsageError, InvalidInputError, DimensionError, BudgetError), EXIT_USAGE),
    ((FileNotFoundError, IsADirectoryError, ModelFormatError, CnfFormatError, IdxFormatError), EXIT_BAD_FILE),
    ((TrainingError, ProtocolError, EncodingError), EXIT_FAILED),
]

# bulky fields stay in the report files
_HIDDEN_FIELDS = ("inputs", "images", "verified", "min_train_hamming")


def exit_code_for(error: BaseException) -> int:
    for types, code in EXIT_CODES:
        if isinstance(error, types):
            return code
    return EXIT_UNEXPECTED


def _summary(result: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in result.items() if k not in _HIDDEN_FIELDS and k != "exit_code"}


def execute(command: str, args: Dict[str, Any], config: Dict[str, Any]) -> int:
    # 1) Resolve the handler
    if command not in ACTIONS:
        print(json.dumps({"ok": False, "error": f"Unsupported or missing command: {command}"}))
        return EXIT_USAGE

    # 2) Run it
    try:
        result = ACTIONS[command](args, config)
    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_UNEXPECTED:
            logger.exception("command %r crashed", command)
        print(json.dumps({"ok": False, "error": f"Command '{command}' failed: {e}"}))
        return code

    # 3) Normalize the result
    if not isinstance(result, dict):
        result = {"ok": False, "error": f"Command '{command}' returned a non-dict result"}
    result.setdefault("ok", True)

    print(json.dumps(_summary(result)))
    return result.get("exit_code", EXIT_OK if result["ok"] else EXIT_FAILED)
