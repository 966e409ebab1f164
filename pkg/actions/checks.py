# actions/checks.py
import json
from pathlib import Path
from typing import Any, Dict

from actions.queries import load_formula
from encode import encode_bnn
from errors import UsageError
from model import load_model
from settings import section
from verify import check_inference_equivalence, check_inversion


def verify_model(args: Dict[str, Any], config: Dict[str, Any]) -> Dict[str, Any]:
    model = load_model(args["model"])
    if args.get("cnf") and args.get("manifest"):
        formula, varmap = load_formula(args["cnf"], args["manifest"])
    elif args.get("cnf") or args.get("manifest"):
        raise UsageError("--cnf and --manifest go together")
    else:
        formula, varmap = encode_bnn(model)

    limits = section(config, "verify")
    mode = args.get("mode") or "exhaustive"
    if mode == "exhaustive":
        inputs = "exhaustive"
    elif mode == "random":
        inputs = ("random", int(args.get("samples") or limits["random_inputs"]), int(args.get("seed") or 0))
    else:
        raise UsageError(f"unknown --mode {mode!r}")

    report = check_inference_equivalence(model, formula, varmap, inputs=inputs,
                                         exhaustive_limit=limits["exhaustive_limit"])
    if mode == "exhaustive" and model.input_width <= limits["exhaustive_limit"]:
        report = report.merge(check_inversion(model, formula, varmap, limit=limits["exhaustive_limit"]))

    result = {"ok": report.passed, "mode": mode, **report.to_dict()}
    if args.get("out"):
        Path(args["out"]).write_text(json.dumps(result, indent=4) + "\n")

    print(f"checked={report.total_checked} mismatches={len(report.mismatches)} pass={report.passed}")
    if report.divergence:
        print(f"reference_divergence={report.divergence}")
    if not report.passed:
        result["error"] = f"{len(report.mismatches)} mismatches between the CNF and the network"
    return result
