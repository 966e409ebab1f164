# solve.py
"""
A small CDCL SAT solver: two watched literals, first-UIP learning with
non-chronological backjumping, VSIDS, Luby restarts, assumptions and
incremental clauses. Plus an adapter for external DIMACS solvers.

Internally literal l over variable v is encoded as 2*v (positive) or
2*v + 1 (negative), so negation is l ^ 1. The public interface speaks
DIMACS integers.
"""
import heapq
import logging
import re
import subprocess
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import psutil

from errors import InvalidInputError, ProtocolError

logger = logging.getLogger(__name__)

VAR_DECAY = 0.95
CLAUSE_DECAY = 0.999
RESCALE_LIMIT = 1e100


class Status(str, Enum):
    SAT = "Sat"
    UNSAT = "Unsat"
    UNKNOWN = "Unknown"  # resource limit hit; never to be read as Unsat


@dataclass
class SolverStats:
    conflicts: int = 0
    decisions: int = 0
    propagations: int = 0
    restarts: int = 0
    learned: int = 0

    def lines(self) -> List[str]:
        return [f"{k}={v}" for k, v in self.__dict__.items()]


@dataclass
class SolveOutcome:
    status: Status
    model: Optional[List[int]] = None  # DIMACS literals, model[v - 1] is variable v
    stats: SolverStats = field(default_factory=SolverStats)

    @property
    def sat(self) -> bool:
        return self.status is Status.SAT

    def value(self, var: int) -> bool:
        return self.model[var - 1] > 0


def luby(i: int) -> int:
    """i-th element (0-based) of the Luby sequence 1 1 2 1 1 2 4 1 1 2 ..."""
    size, seq = 1, 0
    while size < i + 1:
        seq += 1
        size = 2 * size + 1
    while size - 1 != i:
        size = (size - 1) >> 1
        seq -= 1
        i = i % size
    return 1 << seq


def check_model(clauses: Iterable[Sequence[int]], model: Sequence[int]) -> bool:
    """Independent evaluator: does `model` satisfy every clause?"""
    for clause in clauses:
        if not any((model[abs(lit) - 1] > 0) == (lit > 0) for lit in clause):
            return False
    return True


def _to_internal(lit: int) -> int:
    return (lit << 1) if lit > 0 else ((-lit) << 1) | 1


def _to_dimacs(lit: int) -> int:
    return -(lit >> 1) if lit & 1 else lit >> 1


class Solver:
    def __init__(self, num_vars: int = 0, restart_base: int = 64, max_conflicts: Optional[int] = None):
        self.restart_base = restart_base
        self.max_conflicts = max_conflicts
        self.num_vars = 0
        self.ok = True
        self.stats = SolverStats()

        # per literal
        self.value: List[int] = [0, 0]  # 1 true, -1 false, 0 unassigned
        self.watches: List[List[list]] = [[], []]
        # per variable
        self.level: List[int] = [0]
        self.reason: List[Optional[list]] = [None]
        self.activity: List[float] = [0.0]
        self.tiebreak: List[float] = [0.0]
        self.seen: List[int] = [0]

        self.clauses: List[list] = []
        self.learnts: List[list] = []
        self.clause_activity: Dict[int, float] = {}
        self.trail: List[int] = []
        self.trail_lim: List[int] = []
        self.qhead = 0
        self.heap: List[tuple] = []

        self.var_inc = 1.0
        self.cla_inc = 1.0
        self.max_learnts = 0.0
        self.rng: Optional[np.random.Generator] = None

        self.ensure_vars(num_vars)

    @classmethod
    def from_clauses(cls, num_vars: int, clauses: Iterable[Sequence[int]], **kwargs) -> "Solver":
        solver = cls(num_vars, **kwargs)
        for clause in clauses:
            solver.add_clause(clause)
        return solver

    @classmethod
    def from_formula(cls, formula, **kwargs) -> "Solver":
        return cls.from_clauses(formula.num_vars, formula.clauses, **kwargs)

    # Variables

    def ensure_vars(self, n: int):
        while self.num_vars < n:
            self.num_vars += 1
            v = self.num_vars
            self.value += [0, 0]
            self.watches += [[], []]
            self.level.append(0)
            self.reason.append(None)
            self.activity.append(0.0)
            self.tiebreak.append(float(v))
            self.seen.append(0)
            heapq.heappush(self.heap, (0.0, float(v), v))

    def _heap_key(self, v: int) -> tuple:
        return (-self.activity[v], self.tiebreak[v], v)

    def _rebuild_heap(self):
        self.heap = [self._heap_key(v) for v in range(1, self.num_vars + 1) if self.value[v << 1] == 0]
        heapq.heapify(self.heap)

    def _bump_var(self, v: int):
        self.activity[v] += self.var_inc
        if self.activity[v] > RESCALE_LIMIT:
            for u in range(1, self.num_vars + 1):
                self.activity[u] *= 1e-100
            self.var_inc *= 1e-100
            self._rebuild_heap()
        elif self.value[v << 1] == 0:
            heapq.heappush(self.heap, self._heap_key(v))

    def _bump_clause(self, clause: list):
        key = id(clause)
        self.clause_activity[key] = self.clause_activity.get(key, 0.0) + self.cla_inc
        if self.clause_activity[key] > 1e20:
            for k in self.clause_activity:
                self.clause_activity[k] *= 1e-20
            self.cla_inc *= 1e-20

    # Trail

    @property
    def decision_level(self) -> int:
        return len(self.trail_lim)

    def _enqueue(self, lit: int, reason: Optional[list]):
        v = lit >> 1
        self.value[lit] = 1
        self.value[lit ^ 1] = -1
        self.level[v] = len(self.trail_lim)
        self.reason[v] = reason
        self.trail.append(lit)

    def _cancel_until(self, level: int):
        if len(self.trail_lim) <= level:
            return
        stop = self.trail_lim[level]
        push = heapq.heappush
        for lit in self.trail[stop:]:
            v = lit >> 1
            self.value[lit] = 0
            self.value[lit ^ 1] = 0
            self.reason[v] = None
            push(self.heap, (-self.activity[v], self.tiebreak[v], v))
        del self.trail[stop:]
        del self.trail_lim[level:]
        self.qhead = len(self.trail)

    def _propagate(self) -> Optional[list]:
        value = self.value
        watches = self.watches
        trail = self.trail
        conflict = None
        while self.qhead < len(trail):
            p = trail[self.qhead]
            self.qhead += 1
            self.stats.propagations += 1
            false_lit = p ^ 1
            ws = watches[false_lit]
            kept = []
            watches[false_lit] = kept
            i, n = 0, len(ws)
            while i < n:
                c = ws[i]
                i += 1
                if c[0] == false_lit:
                    c[0], c[1] = c[1], false_lit
                first = c[0]
                if value[first] == 1:
                    kept.append(c)
                    continue
                for k in range(2, len(c)):
                    lk = c[k]
                    if value[lk] != -1:
                        c[1] = lk
                        c[k] = false_lit
                        watches[lk].append(c)
                        break
                else:
                    kept.append(c)
                    if value[first] == -1:
                        kept.extend(ws[i:])
                        conflict = c
                        self.qhead = len(trail)
                        break
                    self._enqueue(first, c)
            if conflict is not None:
                return conflict
        return None

    # Clauses

    def add_clause(self, literals: Sequence[int]) -> bool:
        """Add a permanent clause; returns False once the instance is Unsat at level 0."""
        if any(lit == 0 for lit in literals):
            raise InvalidInputError("variable id 0 in clause")
        if not self.ok:
            return False
        self._cancel_until(0)
        self.ensure_vars(max((abs(lit) for lit in literals), default=0))

        lits = []
        seen = set()
        for lit in literals:
            if -lit in seen:
                return True  # tautology
            if lit not in seen:
                seen.add(lit)
                lits.append(_to_internal(lit))

        value = self.value
        if any(value[l] == 1 for l in lits):
            return True
        lits = [l for l in lits if value[l] == 0]

        if not lits:
            self.ok = False
            return False
        if len(lits) == 1:
            self._enqueue(lits[0], None)
            if self._propagate() is not None:
                self.ok = False
            return self.ok

        self.clauses.append(lits)
        self.watches[lits[0]].append(lits)
        self.watches[lits[1]].append(lits)
        return True

    def _attach_learnt(self, lits: list):
        self.learnts.append(lits)
        self.watches[lits[0]].append(lits)
        self.watches[lits[1]].append(lits)
        self._bump_clause(lits)
        self.stats.learned += 1

    def _locked(self, clause: list) -> bool:
        v = clause[0] >> 1
        return self.reason[v] is clause and self.value[clause[0]] == 1

    def _reduce_db(self):
        act = self.clause_activity
        ranked = sorted(self.learnts, key=lambda c: act.get(id(c), 0.0))
        limit = self.cla_inc / max(1, len(ranked))
        removed = set()
        for idx, c in enumerate(ranked):
            if len(c) > 2 and not self._locked(c) and (idx < len(ranked) // 2 or act.get(id(c), 0.0) < limit):
                removed.add(id(c))
        if not removed:
            return
        self.learnts = [c for c in self.learnts if id(c) not in removed]
        for key in removed:
            act.pop(key, None)
        for lit in range(2, len(self.watches)):
            ws = self.watches[lit]
            if ws:
                self.watches[lit] = [c for c in ws if id(c) not in removed]

    # Conflict analysis

    def _analyze(self, conflict: list) -> tuple:
        seen = self.seen
        level = self.level
        current = len(self.trail_lim)
        learnt = [0]
        path = 0
        p = None
        index = len(self.trail) - 1
        clause = conflict

        while True:
            if id(clause) in self.clause_activity:
                self._bump_clause(clause)
            for q in (clause if p is None else clause[1:]):
                v = q >> 1
                if not seen[v] and level[v] > 0:
                    self._bump_var(v)
                    seen[v] = 1
                    if level[v] >= current:
                        path += 1
                    else:
                        learnt.append(q)
            while not seen[self.trail[index] >> 1]:
                index -= 1
            p = self.trail[index]
            index -= 1
            clause = self.reason[p >> 1]
            seen[p >> 1] = 0
            path -= 1
            if path == 0:
                break
        learnt[0] = p ^ 1

        # drop literals whose reason is already covered by the clause
        kept = [learnt[0]]
        for q in learnt[1:]:
            r = self.reason[q >> 1]
            if r is None or any(not seen[l >> 1] and level[l >> 1] > 0 for l in r[1:]):
                kept.append(q)
        for q in learnt[1:]:
            seen[q >> 1] = 0

        if len(kept) == 1:
            back = 0
        else:
            best = max(range(1, len(kept)), key=lambda k: level[kept[k] >> 1])
            kept[1], kept[best] = kept[best], kept[1]
            back = level[kept[1] >> 1]
        return kept, back

    # Search

    def _pick_branch(self) -> Optional[int]:
        value = self.value
        heap = self.heap
        while heap:
            neg_act, _, v = heapq.heappop(heap)
            if value[v << 1] != 0 or -neg_act != self.activity[v]:
                continue
            if self.rng is not None:
                positive = bool(self.rng.integers(2))
            else:
                positive = False  # bipolar -1
            return (v << 1) | (0 if positive else 1)
        # stale heap entries may have hidden a free variable
        for v in range(1, self.num_vars + 1):
            if value[v << 1] == 0:
                self._rebuild_heap()
                return self._pick_branch()
        return None

    def _search(self, budget: int, assumptions: List[int]) -> Status:
        conflicts = 0
        while True:
            conflict = self._propagate()
            if conflict is not None:
                self.stats.conflicts += 1
                conflicts += 1
                if self.decision_level == 0:
                    self.ok = False
                    return Status.UNSAT
                learnt, back = self._analyze(conflict)
                self._cancel_until(back)
                if len(learnt) == 1:
                    self._enqueue(learnt[0], None)
                else:
                    self._attach_learnt(learnt)
                    self._enqueue(learnt[0], learnt)
                self.var_inc /= VAR_DECAY
                self.cla_inc /= CLAUSE_DECAY
                if self._out_of_budget():
                    self._cancel_until(0)
                    return Status.UNKNOWN
                continue

            if conflicts >= budget:
                self._cancel_until(0)
                return Status.UNKNOWN
            if len(self.learnts) - len(self.trail) >= self.max_learnts:
                self._reduce_db()

            next_lit = None
            while self.decision_level < len(assumptions):
                p = assumptions[self.decision_level]
                if self.value[p] == 1:
                    self.trail_lim.append(len(self.trail))
                elif self.value[p] == -1:
                    return Status.UNSAT  # under these assumptions only
                else:
                    next_lit = p
                    break
            if next_lit is None:
                next_lit = self._pick_branch()
                if next_lit is None:
                    return Status.SAT
                self.stats.decisions += 1
            self.trail_lim.append(len(self.trail))
            self._enqueue(next_lit, None)

    def _out_of_budget(self) -> bool:
        return self.max_conflicts is not None and self.stats.conflicts >= self._conflict_limit

    def solve(self, assumptions: Sequence[int] = ()) -> SolveOutcome:
        for lit in assumptions:
            if lit == 0 or abs(lit) > self.num_vars:
                raise InvalidInputError(f"assumption {lit} outside 1..{self.num_vars}")
        start = SolverStats(**self.stats.__dict__)
        self._conflict_limit = self.stats.conflicts + (self.max_conflicts or 0)

        status = Status.UNSAT
        if self.ok:
            self._cancel_until(0)
            if self._propagate() is not None:
                self.ok = False
            else:
                internal = [_to_internal(lit) for lit in assumptions]
                self.max_learnts = max(self.max_learnts, len(self.clauses) / 3.0, 1000.0)
                restart = 0
                while True:
                    status = self._search(luby(restart) * self.restart_base, internal)
                    if status is not Status.UNKNOWN or self._out_of_budget():
                        break
                    restart += 1
                    self.stats.restarts += 1
                    self.max_learnts *= 1.1

        model = None
        if status is Status.SAT:
            model = [v if self.value[v << 1] == 1 else -v for v in range(1, self.num_vars + 1)]
        self._cancel_until(0)

        delta = SolverStats(**{k: getattr(self.stats, k) - getattr(start, k) for k in start.__dict__})
        return SolveOutcome(status=status, model=model, stats=delta)

    def solve_randomized(self, assumptions: Sequence[int] = (), seed: int = 0) -> SolveOutcome:
        """Like `solve`, with variable order and polarity drawn from `seed`."""
        self.rng = np.random.default_rng(seed)
        self.tiebreak = [0.0] + list(self.rng.random(self.num_vars))
        self.activity = [0.0] * (self.num_vars + 1)
        self.var_inc = 1.0
        self._rebuild_heap()
        try:
            return self.solve(assumptions)
        finally:
            self.rng = None
            self.tiebreak = [float(v) for v in range(self.num_vars + 1)]
            self._rebuild_heap()


# External solvers

_STATUS_LINES = {
    "SATISFIABLE": Status.SAT,
    "UNSATISFIABLE": Status.UNSAT,
    "UNKNOWN": Status.UNKNOWN,
    "INDETERMINATE": Status.UNKNOWN,
}


def _kill_process_tree(pid: int):
    try:
        parent = psutil.Process(pid)
    except psutil.NoSuchProcess:
        return
    for proc in parent.children(recursive=True) + [parent]:
        try:
            proc.kill()
        except (psutil.NoSuchProcess, psutil.AccessDenied):
            continue


def _dimacs_num_vars(path: Path) -> int:
    with open(path, "r") as f:
        for line in f:
            m = re.match(r"\s*p\s+cnf\s+(\d+)\s+(\d+)", line)
            if m:
                return int(m.group(1))
    raise ProtocolError(f"{path} has no 'p cnf' header")


def parse_solver_output(stdout: str, num_vars: int) -> SolveOutcome:
    status = None
    values: Dict[int, bool] = {}
    for line in stdout.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "s":
            verdict = " ".join(parts[1:])
            if verdict not in _STATUS_LINES:
                raise ProtocolError(f"unknown verdict {verdict!r}")
            status = _STATUS_LINES[verdict]
        elif parts[0] == "v":
            for tok in parts[1:]:
                try:
                    lit = int(tok)
                except ValueError:
                    raise ProtocolError(f"bad value token {tok!r}")
                if lit != 0:
                    values[abs(lit)] = lit > 0

    if status is None:
        raise ProtocolError("solver printed no 's' line")
    if status is not Status.SAT:
        return SolveOutcome(status=status)
    if not values:
        raise ProtocolError("SATISFIABLE without a 'v' model")
    # unmentioned variables are free in the solver's model; pick false
    model = [v if values.get(v, False) else -v for v in range(1, num_vars + 1)]
    return SolveOutcome(status=status, model=model)


def external_solve(dimacs_path, solver_command: Sequence[str], timeout: Optional[float] = None) -> SolveOutcome:
    dimacs_path = Path(dimacs_path)
    num_vars = _dimacs_num_vars(dimacs_path)
    cmd = list(solver_command) + [str(dimacs_path)]
    logger.info("running external solver: %s", " ".join(cmd))

    proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        stdout, stderr = proc.communicate(timeout=timeout)
    except subprocess.TimeoutExpired:
        _kill_process_tree(proc.pid)
        proc.communicate()
        logger.warning("external solver timed out after %ss", timeout)
        return SolveOutcome(status=Status.UNKNOWN)

    try:
        return parse_solver_output(stdout, num_vars)
    except ProtocolError:
        # SAT competition solvers exit 10/20; anything else without a verdict is an error
        if proc.returncode not in (0, 10, 20):
            raise ProtocolError(
                f"solver exited with {proc.returncode} and no verdict: {stderr.strip()[:200]}"
            )
        raise
