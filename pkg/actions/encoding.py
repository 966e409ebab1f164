# actions/encoding.py
from pathlib import Path
from typing import Any, Dict

from encode import dimacs_digest, emit_dimacs, emit_manifest, encode_bnn, formula_stats
from model import load_model


def encode_model(args: Dict[str, Any], config: Dict[str, Any]) -> Dict[str, Any]:
    model = load_model(args["model"])
    formula, varmap = encode_bnn(model)

    dimacs = emit_dimacs(formula)
    Path(args["out_cnf"]).write_text(dimacs)
    Path(args["out_manifest"]).write_text(emit_manifest(varmap, dimacs_digest(dimacs)))

    stats = formula_stats(formula, varmap)
    for line in stats.lines():
        print(line)
    return {"ok": True, "cnf": str(args["out_cnf"]), "manifest": str(args["out_manifest"]), **stats.__dict__}
