# encode.py
"""
Compile a BnnModel into CNF.

Literals are DIMACS integers throughout: abs(lit) is the variable, a negative
sign means negated, and input variable true means pixel +1.

Layout of the variable space:
    1 .. n_in                 inputs X
    n_in+1 .. n_in+c          output indicators Y (one per class)
    then per inner block      hidden neurons H (contiguous), then their counter registers
    then                      comparators b_ij for i < j (contiguous), then their registers
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from errors import CnfFormatError, EncodingError, ModelFormatError
from model import (
    BnnModel,
    InnerBlock,
    OutputBlock,
    ThresholdKind,
    comparator_threshold,
    fold_neuron,
)

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "bnn-invert-manifest/1"

Clause = List[int]

# Constants used while building counter clauses; never emitted
_TRUE = object()
_FALSE = object()


class VarPool:
    """Hands out fresh variable ids in increasing order."""

    def __init__(self, next_id: int = 1):
        self.next_id = next_id

    def new(self) -> int:
        v = self.next_id
        self.next_id += 1
        return v

    def block(self, count: int) -> List[int]:
        return [self.new() for _ in range(count)]

    @property
    def top(self) -> int:
        return self.next_id - 1


@dataclass(frozen=True)
class CardConstraint:
    """at-least-`bound` of `literals`, optionally reified: reify <=> constraint."""
    literals: Tuple[int, ...]
    bound: int
    reify: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "literals", tuple(self.literals))
        if any(lit == 0 for lit in self.literals):
            raise EncodingError("literal 0 in cardinality constraint")
        if len({abs(lit) for lit in self.literals}) != len(self.literals):
            raise EncodingError("duplicate variable in cardinality constraint")
        if not 0 <= self.bound <= len(self.literals) + 1:
            raise EncodingError(f"bound {self.bound} outside 0..{len(self.literals) + 1}")

    def holds(self, assignment: Dict[int, bool]) -> bool:
        true = sum(1 for lit in self.literals if assignment[abs(lit)] == (lit > 0))
        return true >= self.bound


@dataclass
class CnfFormula:
    num_vars: int
    clauses: List[Clause] = field(default_factory=list)

    def __post_init__(self):
        for clause in self.clauses:
            for lit in clause:
                if lit == 0 or abs(lit) > self.num_vars:
                    raise EncodingError(f"literal {lit} outside 1..{self.num_vars}")


@dataclass
class VariableMap:
    input_vars: List[int]
    output_vars: List[int]
    hidden_vars: List[List[int]]
    comparator_vars: Dict[Tuple[int, int], int]
    aux_vars: List[Tuple[int, int]]  # inclusive ranges
    num_vars: int
    image_shape: Optional[Tuple[int, int]] = None  # (height, width)

    @property
    def classes(self) -> int:
        return len(self.output_vars)

    def input_assumptions(self, x: Sequence[int]) -> List[int]:
        return [v if xi > 0 else -v for v, xi in zip(self.input_vars, x)]

    def project_inputs(self, model: Sequence[int]) -> Tuple[int, ...]:
        return tuple(1 if model[v - 1] > 0 else -1 for v in self.input_vars)

    def labels_in(self, model: Sequence[int]) -> List[int]:
        return [c for c, v in enumerate(self.output_vars) if model[v - 1] > 0]


@dataclass(frozen=True)
class FormulaStats:
    num_vars: int
    num_clauses: int
    inputs: int
    outputs: int
    hidden: int
    comparators: int
    aux: int

    def lines(self) -> List[str]:
        return [f"{k}={v}" for k, v in self.__dict__.items()]


def formula_stats(formula: CnfFormula, varmap: VariableMap) -> FormulaStats:
    return FormulaStats(
        num_vars=formula.num_vars,
        num_clauses=len(formula.clauses),
        inputs=len(varmap.input_vars),
        outputs=len(varmap.output_vars),
        hidden=sum(len(h) for h in varmap.hidden_vars),
        comparators=len(varmap.comparator_vars),
        aux=sum(hi - lo + 1 for lo, hi in varmap.aux_vars),
    )


# Cardinality

def _ceil_half(value: int) -> int:
    return -((-value) // 2)


def dot_to_card(weights_row: Sequence[int], input_lits: Sequence[int], c: int,
                sense: ThresholdKind = ThresholdKind.AT_LEAST) -> CardConstraint:
    """
    Rewrite <a, x> >= C (or <= C) over bipolar x as at-least-d of literals.

    Position p contributes input_lits[p] when a_p = +1 and its negation when
    a_p = -1; with t satisfied literals <a, x> = 2t - n.
    """
    if len(weights_row) != len(input_lits):
        raise EncodingError(f"{len(weights_row)} weights for {len(input_lits)} literals")
    n = len(weights_row)
    literals = [lit if a > 0 else -lit for a, lit in zip(weights_row, input_lits)]

    if sense is ThresholdKind.AT_LEAST:
        bound = _ceil_half(c + n)
    elif sense is ThresholdKind.AT_MOST:
        literals = [-lit for lit in literals]
        bound = n - (c + n) // 2
    else:
        raise EncodingError(f"no cardinality form for {sense}")

    return CardConstraint(literals=tuple(literals), bound=max(0, min(n + 1, bound)))


def _clause(*parts) -> Optional[Clause]:
    out = []
    for p in parts:
        if p is _TRUE:
            return None
        if p is _FALSE:
            continue
        out.append(p)
    return out


def _neg(p):
    if p is _TRUE:
        return _FALSE
    if p is _FALSE:
        return _TRUE
    return -p


def _link_reify(reify: int, out: int) -> List[Clause]:
    return [[-reify, out], [reify, -out]]


def seq_counter(literals: Sequence[int], k: int, reify: Optional[int] = None,
                pool: Optional[VarPool] = None) -> Tuple[List[Clause], int]:
    """
    Sequential (unary) counter for at-least-k over `literals`.

    Register s(i, j) <=> at least j of the first i literals are true, defined
    by s(i, j) <=> s(i-1, j) or (s(i-1, j-1) and x_i) in both directions, so
    every register is a function of the literals. Only registers that can
    still reach (n, k) are built: j in [max(1, k-n+i), min(i, k)], which is
    k * (n - k + 1) registers.

    Without `reify` the constraint is asserted; with it, reify <=> constraint.
    Returns (clauses, number of fresh variables).
    """
    n = len(literals)
    if not 0 <= k <= n + 1:
        raise EncodingError(f"bound {k} outside 0..{n + 1}")
    if pool is None:
        top = max([abs(lit) for lit in literals] + [abs(reify or 0)] + [0])
        pool = VarPool(top + 1)
    start = pool.next_id

    if k == 0:
        return ([[reify]] if reify is not None else []), 0
    if k == n + 1:
        return ([[-reify]] if reify is not None else [[]]), 0

    registers: Dict[Tuple[int, int], int] = {}

    def reg(i: int, j: int):
        if j <= 0:
            return _TRUE
        if j > i:
            return _FALSE
        return registers[(i, j)]

    clauses: List[Clause] = []
    for i in range(1, n + 1):
        x = literals[i - 1]
        for j in range(max(1, k - n + i), min(i, k) + 1):
            s = pool.new()
            registers[(i, j)] = s
            keep, carry = reg(i - 1, j), reg(i - 1, j - 1)
            for c in (
                _clause(_neg(keep), s),
                _clause(_neg(carry), -x, s),
                _clause(-s, keep, carry),
                _clause(-s, keep, x),
            ):
                if c is not None:
                    clauses.append(c)

    out = registers[(n, k)]
    if reify is None:
        clauses.append([out])
    else:
        clauses.extend(_link_reify(reify, out))
    return clauses, pool.next_id - start


def encode_card(card: CardConstraint, pool: VarPool) -> List[Clause]:
    clauses, _ = seq_counter(card.literals, card.bound, card.reify, pool)
    return clauses


# Blocks

def encode_inner_block(block: InnerBlock, input_lits: Sequence[int],
                       pool: VarPool) -> Tuple[List[Clause], List[int]]:
    if block.in_width != len(input_lits):
        raise EncodingError(f"block takes {block.in_width} inputs, got {len(input_lits)}")

    outputs = pool.block(block.out_width)
    clauses: List[Clause] = []
    for i, v in enumerate(outputs):
        t = fold_neuron(block.weights[i], float(block.bias[i]), block.bn.neuron(i))
        if t.kind is ThresholdKind.CONST_PLUS:
            clauses.append([v])
        elif t.kind is ThresholdKind.CONST_MINUS:
            clauses.append([-v])
        else:
            card = dot_to_card(block.weights[i], input_lits, t.threshold, t.kind)
            clauses.extend(encode_card(replace(card, reify=v), pool))
    return clauses, outputs


def _indicator_conditions(i: int, classes: int, comparators: Dict[Tuple[int, int], int]) -> List[int]:
    # class i must beat every earlier class strictly and tie-or-beat every later one
    earlier = [-comparators[(j, i)] for j in range(i)]
    later = [comparators[(i, j)] for j in range(i + 1, classes)]
    return earlier + later


def encode_output_block(block: OutputBlock, input_lits: Sequence[int], pool: VarPool,
                        output_vars: Optional[List[int]] = None
                        ) -> Tuple[List[Clause], List[int], Dict[Tuple[int, int], int]]:
    if block.in_width != len(input_lits):
        raise EncodingError(f"output block takes {block.in_width} inputs, got {len(input_lits)}")
    c = block.classes
    if output_vars is None:
        output_vars = pool.block(c)

    pairs = [(i, j) for i in range(c) for j in range(i + 1, c)]
    comparators = dict(zip(pairs, pool.block(len(pairs))))

    clauses: List[Clause] = []
    for (i, j), b in comparators.items():
        # a_i - a_j is 0 where rows agree and 2 * a_i where they differ
        differ = [p for p in range(block.in_width) if block.weights[i][p] != block.weights[j][p]]
        t = comparator_threshold(block.bias[i], block.bias[j])
        card = dot_to_card([block.weights[i][p] for p in differ], [input_lits[p] for p in differ], t)
        clauses.extend(encode_card(replace(card, reify=b), pool))

    for i, o in enumerate(output_vars):
        conditions = _indicator_conditions(i, c, comparators)
        clauses.extend([-o, lit] for lit in conditions)
        clauses.append([o] + [-lit for lit in conditions])

    # exactly one indicator; implied by the comparators, kept to help the solver
    clauses.append(list(output_vars))
    for a in range(c):
        for b in range(a + 1, c):
            clauses.append([-output_vars[a], -output_vars[b]])

    return clauses, list(output_vars), comparators


def encode_bnn(model: BnnModel) -> Tuple[CnfFormula, VariableMap]:
    n_in = model.input_width
    c = model.classes
    input_vars = list(range(1, n_in + 1))
    output_vars = list(range(n_in + 1, n_in + c + 1))
    pool = VarPool(n_in + c + 1)

    clauses: List[Clause] = []
    hidden: List[List[int]] = []
    aux: List[Tuple[int, int]] = []
    lits = input_vars

    for block in model.inner_blocks:
        block_clauses, lits = encode_inner_block(block, lits, pool)
        hidden.append(lits)
        if pool.top > lits[-1]:
            aux.append((lits[-1] + 1, pool.top))
        clauses.extend(block_clauses)

    first_free = pool.next_id
    block_clauses, _, comparators = encode_output_block(model.output_block, lits, pool, output_vars)
    clauses.extend(block_clauses)
    aux_start = first_free + len(comparators)
    if pool.top >= aux_start:
        aux.append((aux_start, pool.top))

    num_vars = max(pool.top, n_in + c)
    formula = CnfFormula(num_vars=num_vars, clauses=clauses)
    varmap = VariableMap(
        input_vars=input_vars,
        output_vars=output_vars,
        hidden_vars=hidden,
        comparator_vars=comparators,
        aux_vars=aux,
        num_vars=num_vars,
        image_shape=model.image_shape,
    )
    logger.info("encoded %s into %d variables and %d clauses", model.arch, num_vars, len(clauses))
    return formula, varmap


# DIMACS

def emit_dimacs(formula: CnfFormula) -> str:
    lines = [f"p cnf {formula.num_vars} {len(formula.clauses)}"]
    lines.extend(" ".join(map(str, clause + [0])) for clause in formula.clauses)
    return "\n".join(lines) + "\n"


def parse_dimacs(text: str) -> CnfFormula:
    header = None
    clauses: List[Clause] = []
    current: Clause = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):
            break
        if line.startswith("p"):
            parts = line.split()
            if header is not None or len(parts) != 4 or parts[1] != "cnf":
                raise CnfFormatError(f"bad header {line!r}", number)
            try:
                header = (int(parts[2]), int(parts[3]))
            except ValueError:
                raise CnfFormatError(f"bad header {line!r}", number)
            continue
        if header is None:
            raise CnfFormatError("clause before the 'p cnf' header", number)
        try:
            values = [int(tok) for tok in line.split()]
        except ValueError:
            raise CnfFormatError(f"non-integer token in {line!r}", number)
        for lit in values:
            if lit == 0:
                clauses.append(current)
                current = []
            else:
                if abs(lit) > header[0]:
                    raise CnfFormatError(f"literal {lit} exceeds {header[0]} variables", number)
                current.append(lit)

    if header is None:
        raise CnfFormatError("missing 'p cnf' header")
    if current:
        clauses.append(current)
    if len(clauses) != header[1]:
        raise CnfFormatError(f"header declares {header[1]} clauses, found {len(clauses)}")
    return CnfFormula(num_vars=header[0], clauses=clauses)


def dimacs_digest(dimacs_text: str) -> str:
    return hashlib.sha256(dimacs_text.encode("utf-8")).hexdigest()


# Manifest

def emit_manifest(varmap: VariableMap, cnf_sha256: Optional[str] = None) -> str:
    data = {
        "format": MANIFEST_FORMAT,
        "num_vars": varmap.num_vars,
        "input_vars": varmap.input_vars,
        "output_vars": [{"class": c, "var": v} for c, v in enumerate(varmap.output_vars)],
        "hidden": [
            {"block": k, "first": group[0], "last": group[-1]} if group else {"block": k, "first": None, "last": None}
            for k, group in enumerate(varmap.hidden_vars)
        ],
        "comparators": [[i, j, v] for (i, j), v in sorted(varmap.comparator_vars.items())],
        "aux": [[lo, hi] for lo, hi in varmap.aux_vars],
        "image": (
            {"height": varmap.image_shape[0], "width": varmap.image_shape[1]}
            if varmap.image_shape else None
        ),
        "cnf_sha256": cnf_sha256,
    }
    return json.dumps(data, indent=1, sort_keys=True) + "\n"


def parse_manifest(text: str) -> Tuple[VariableMap, Optional[str]]:
    try:
        data = json.loads(text)
        if data.get("format") != MANIFEST_FORMAT:
            raise ModelFormatError(f"unknown manifest format {data.get('format')!r}")
        outputs = sorted(data["output_vars"], key=lambda o: o["class"])
        hidden = [
            list(range(g["first"], g["last"] + 1)) if g["first"] is not None else []
            for g in sorted(data["hidden"], key=lambda g: g["block"])
        ]
        image = data.get("image")
        varmap = VariableMap(
            input_vars=[int(v) for v in data["input_vars"]],
            output_vars=[int(o["var"]) for o in outputs],
            hidden_vars=hidden,
            comparator_vars={(int(i), int(j)): int(v) for i, j, v in data["comparators"]},
            aux_vars=[(int(lo), int(hi)) for lo, hi in data["aux"]],
            num_vars=int(data["num_vars"]),
            image_shape=(int(image["height"]), int(image["width"])) if image else None,
        )
    except (json.JSONDecodeError, AttributeError, KeyError, TypeError, ValueError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed manifest: {e}") from e
    return varmap, data.get("cnf_sha256")
