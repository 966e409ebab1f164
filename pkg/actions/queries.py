# actions/queries.py
import json
import logging
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from actions.images import load_pgm, render_grid_pgm, render_pgm
from encode import CnfFormula, VariableMap, dimacs_digest, emit_dimacs, parse_dimacs, parse_manifest
from errors import DimensionError, InvalidInputError, ManifestMismatchError
from model import load_model
from sample import InversionQuery, InversionStatus, enumerate_preimage, infer_sat, invert
from settings import section
from solve import Solver, Status, external_solve
from train import load_dataset

logger = logging.getLogger(__name__)

EXIT_UNSAT_LABEL = 10
EXIT_UNKNOWN = 12
GRID_COLUMNS = 10


def load_formula(cnf_path, manifest_path) -> Tuple[CnfFormula, VariableMap]:
    dimacs = Path(cnf_path).read_text()
    varmap, expected = parse_manifest(Path(manifest_path).read_text())
    if expected is not None and expected != dimacs_digest(dimacs):
        raise ManifestMismatchError(f"{manifest_path} was not written for {cnf_path}")
    formula = parse_dimacs(dimacs)
    if formula.num_vars != varmap.num_vars:
        raise ManifestMismatchError(
            f"manifest declares {varmap.num_vars} variables, cnf has {formula.num_vars}"
        )
    logger.info("loaded %s: %d variables, %d clauses", cnf_path, formula.num_vars, len(formula.clauses))
    return formula, varmap


def parse_input(text: str, width: int) -> Tuple[int, ...]:
    """A PGM path, a comma list of -1/+1, or a string of 0/1 characters."""
    if Path(text).is_file():
        x, _, _ = load_pgm(text)
    elif "," in text:
        try:
            x = tuple(int(v) for v in text.split(","))
        except ValueError:
            raise InvalidInputError(f"--input {text!r} is not a comma list of -1/+1")
        if any(v not in (-1, 1) for v in x):
            raise InvalidInputError("--input values must be -1 or +1")
    elif text and set(text) <= {"0", "1"}:
        x = tuple(1 if ch == "1" else -1 for ch in text)
    else:
        raise InvalidInputError(f"--input {text!r} is neither a file, a -1/+1 list nor a 0/1 string")
    if len(x) != width:
        raise DimensionError(f"--input has {len(x)} pixels, the network takes {width}")
    return x


def _image_shape(varmap: VariableMap, model=None) -> Tuple[int, int]:
    shape = varmap.image_shape or (model.image_shape if model is not None else None)
    if shape:
        return shape
    # no recorded shape: render as a single row
    return 1, len(varmap.input_vars)


def _external_infer(formula: CnfFormula, varmap: VariableMap, x: Sequence[int],
                    solver_config: Dict[str, Any]) -> Dict[str, Any]:
    units = CnfFormula(num_vars=formula.num_vars,
                       clauses=formula.clauses + [[lit] for lit in varmap.input_assumptions(x)])
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "query.cnf"
        path.write_text(emit_dimacs(units))
        outcome = external_solve(path, solver_config["external_command"], solver_config["external_timeout"])
    if outcome.status is Status.UNKNOWN:
        return {"ok": False, "status": outcome.status.value, "exit_code": EXIT_UNKNOWN,
                "error": "external solver gave no verdict"}
    if outcome.status is Status.UNSAT:
        return {"ok": False, "status": outcome.status.value, "error": "inference query is Unsat"}
    labels = varmap.labels_in(outcome.model)
    if len(labels) != 1:
        return {"ok": False, "error": f"expected one true output indicator, got {labels}"}
    return {"ok": True, "status": outcome.status.value, "label": labels[0]}


def infer(args: Dict[str, Any], config: Dict[str, Any]) -> Dict[str, Any]:
    formula, varmap = load_formula(args["cnf"], args["manifest"])
    x = parse_input(args["input"], len(varmap.input_vars))
    solver_config = section(config, "solver")

    if solver_config.get("external_command"):
        result = _external_infer(formula, varmap, x, solver_config)
        if result["ok"]:
            print(f"label={result['label']}")
        return result

    solver = Solver.from_formula(formula)
    label = infer_sat(formula, varmap, x, solver=solver)
    print(f"label={label}")
    for line in solver.stats.lines():
        print(line)
    return {"ok": True, "status": Status.SAT.value, "label": label, "solver_stats": dict(solver.stats.__dict__)}


def _reference_images(data_dir: Optional[str], shape: Tuple[int, int], label: int) -> Optional[np.ndarray]:
    if not data_dir:
        return None
    dataset = load_dataset(data_dir, "train", shape)
    return dataset.images[dataset.labels == label]


def _write_images(inputs: List[Tuple[int, ...]], shape: Tuple[int, int], out_dir: Path, prefix: str) -> List[str]:
    height, width = shape
    paths = [str(render_pgm(x, width, height, out_dir / f"{prefix}_{k:03d}.pgm")) for k, x in enumerate(inputs)]
    if inputs:
        render_grid_pgm(inputs, width, height, GRID_COLUMNS, out_dir / "grid.pgm")
    return paths


def invert_label(args: Dict[str, Any], config: Dict[str, Any]) -> Dict[str, Any]:
    formula, varmap = load_formula(args["cnf"], args["manifest"])
    model = load_model(args["model"]) if args.get("model") else None
    defaults = section(config, "sample")
    solver_config = section(config, "solver")

    query = InversionQuery(
        target_label=int(args["label"]),
        num_samples=int(args.get("samples") or defaults["samples"]),
        seed=int(args["seed"] if args.get("seed") is not None else defaults["seed"]),
        distinct=defaults["distinct"] if args.get("distinct") is None else bool(args["distinct"]),
    )
    query.check(varmap.classes)
    shape = _image_shape(varmap, model)
    report = invert(
        formula, varmap, query,
        model=model,
        reference_images=_reference_images(args.get("data_dir"), shape, query.target_label),
        solver_options={"restart_base": solver_config["restart_base"],
                        "max_conflicts": solver_config["max_conflicts"]},
    )

    out_dir = Path(args["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    images = _write_images(report.inputs, shape, out_dir, "sample")
    result = {"ok": report.all_verified, **report.to_dict(), "images": images}
    (out_dir / "report.json").write_text(json.dumps(result, indent=4) + "\n")

    print(f"status={report.status.value}")
    for line in report.solver_stats.lines():
        print(line)
    print(f"samples={len(report.inputs)} distinct={report.distinct_count} "
          f"mean_pairwise_hamming={report.mean_pairwise_hamming:.2f}")
    if report.status is InversionStatus.UNSAT_LABEL:
        result["exit_code"] = EXIT_UNSAT_LABEL
    elif report.status is InversionStatus.UNKNOWN:
        result["ok"] = False
        result["exit_code"] = EXIT_UNKNOWN
        result["error"] = "solver resource limit reached"
    elif not report.all_verified:
        result["error"] = f"{report.verified.count(False)} samples failed re-verification"
    return result


def enumerate_label(args: Dict[str, Any], config: Dict[str, Any]) -> Dict[str, Any]:
    formula, varmap = load_formula(args["cnf"], args["manifest"])
    label = int(args["label"])
    enum = enumerate_preimage(formula, varmap, label, cap=int(args["cap"]))

    result = {
        "ok": True,
        "label": label,
        "count": len(enum.inputs),
        "truncated": enum.truncated,
        "inputs": [list(x) for x in enum.inputs],
    }
    if args.get("out_dir"):
        out_dir = Path(args["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        result["images"] = _write_images(enum.inputs, _image_shape(varmap), out_dir, "preimage")
        (out_dir / "report.json").write_text(json.dumps(result, indent=4) + "\n")

    print(f"label={label} count={len(enum.inputs)}{' (truncated)' if enum.truncated else ''}")
    if enum.unsat:
        result["exit_code"] = EXIT_UNSAT_LABEL
    return result
