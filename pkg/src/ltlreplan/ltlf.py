"""Finite-trace temporal logic: parsing, trace evaluation, DFA compilation.

Formulas use eventually/always/until over lowercase atoms (no next
operator). ``evaluate`` gives the reference finite-trace semantics and
serves as the independent oracle for ``to_dfa``, which compiles a formula
into the minimal deterministic automaton over label sets. ``preprocess``
computes the dead-state set (states from which acceptance is unreachable)
and a pruned transition function that never enters it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

LabelSet = frozenset[str]
Trace = Sequence[Iterable[str]]

ATOM_RE = re.compile(r"[a-z][a-z0-9_]*")

MAX_ATOMS = 8
DEFAULT_STATE_BUDGET = 1 << 16


class LtlError(Exception):
    pass


class LtlSyntaxError(LtlError):
    """Parse failure; carries the byte offset and an expected-token hint."""

    def __init__(self, message: str, offset: int, expected: str = ""):
        hint = f" (expected {expected})" if expected else ""
        super().__init__(f"syntax error at offset {offset}: {message}{hint}")
        self.offset = offset
        self.expected = expected


class CapacityError(LtlError):
    """Raised when determinization exceeds the configured state budget."""


# ---------------------------------------------------------------------------
# Formula syntax tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Formula:
    def __str__(self) -> str:
        return _fmt(self)

    def atoms(self) -> tuple[str, ...]:
        out: list[str] = []
        seen: set[str] = set()
        _collect_atoms(self, out, seen)
        return tuple(sorted(out))


@dataclass(frozen=True)
class TrueLit(Formula):
    pass


@dataclass(frozen=True)
class Atom(Formula):
    name: str


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    arg: Formula


@dataclass(frozen=True)
class Always(Formula):
    arg: Formula


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula


def _collect_atoms(f: Formula, out: list[str], seen: set[str]) -> None:
    if isinstance(f, Atom):
        if f.name not in seen:
            seen.add(f.name)
            out.append(f.name)
    elif isinstance(f, Not):
        _collect_atoms(f.arg, out, seen)
    elif isinstance(f, (Eventually, Always)):
        _collect_atoms(f.arg, out, seen)
    elif isinstance(f, (And, Or, Until)):
        _collect_atoms(f.left, out, seen)
        _collect_atoms(f.right, out, seen)


def _fmt(f: Formula) -> str:
    if isinstance(f, TrueLit):
        return "true"
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, Not):
        return f"!{_fmt_tight(f.arg)}"
    if isinstance(f, Eventually):
        return f"F {_fmt_tight(f.arg)}"
    if isinstance(f, Always):
        return f"G {_fmt_tight(f.arg)}"
    if isinstance(f, And):
        return f"({_fmt(f.left)} & {_fmt(f.right)})"
    if isinstance(f, Or):
        return f"({_fmt(f.left)} | {_fmt(f.right)})"
    if isinstance(f, Until):
        return f"({_fmt(f.left)} U {_fmt(f.right)})"
    raise TypeError(f"unknown node {f!r}")


def _fmt_tight(f: Formula) -> str:
    s = _fmt(f)
    if isinstance(f, (TrueLit, Atom)) or s.startswith("("):
        return s
    return f"({s})"


# ---------------------------------------------------------------------------
# Parser: precedence  ! F G  >  U (right-assoc)  >  &  >  |
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<lpar>\()|(?P<rpar>\))|(?P<not>!)|(?P<and>&)|(?P<or>\|)"
    r"|(?P<ev>F\b)|(?P<al>G\b)|(?P<un>U\b)|(?P<next>X\b)"
    r"|(?P<word>[a-z][a-z0-9_]*)|(?P<bad>\S))"
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                break
            kind = m.lastgroup
            val = m.group(kind)
            off = m.start(kind)
            if kind == "bad":
                raise LtlSyntaxError(f"unexpected character {val!r}", off)
            if kind == "next":
                raise LtlSyntaxError(
                    "the next operator is not supported on finite traces", off
                )
            self.tokens.append((kind, val, off))
            pos = m.end()
        self.i = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self) -> tuple[str, str, int]:
        tok = self.peek()
        if tok is None:
            raise LtlSyntaxError("unexpected end of input", len(self.text), "operand")
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.parse_or()
        tok = self.peek()
        if tok is not None:
            raise LtlSyntaxError(f"unexpected token {tok[1]!r}", tok[2], "end of input")
        return f

    def parse_or(self) -> Formula:
        f = self.parse_and()
        while (tok := self.peek()) is not None and tok[0] == "or":
            self.take()
            f = Or(f, self.parse_and())
        return f

    def parse_and(self) -> Formula:
        f = self.parse_until()
        while (tok := self.peek()) is not None and tok[0] == "and":
            self.take()
            f = And(f, self.parse_until())
        return f

    def parse_until(self) -> Formula:
        f = self.parse_unary()
        tok = self.peek()
        if tok is not None and tok[0] == "un":
            self.take()
            return Until(f, self.parse_until())
        return f

    def parse_unary(self) -> Formula:
        tok = self.peek()
        if tok is None:
            raise LtlSyntaxError("unexpected end of input", len(self.text), "operand")
        kind, val, off = tok
        if kind == "not":
            self.take()
            return Not(self.parse_unary())
        if kind == "ev":
            self.take()
            return Eventually(self.parse_unary())
        if kind == "al":
            self.take()
            return Always(self.parse_unary())
        if kind == "lpar":
            self.take()
            f = self.parse_or()
            tok2 = self.peek()
            if tok2 is None or tok2[0] != "rpar":
                off2 = tok2[2] if tok2 else len(self.text)
                raise LtlSyntaxError("unbalanced parenthesis", off2, "')'")
            self.take()
            return f
        if kind == "word":
            self.take()
            if val == "true":
                return TrueLit()
            return Atom(val)
        raise LtlSyntaxError(f"unexpected token {val!r}", off, "operand")


def parse(text: str) -> Formula:
    """Parse an ASCII formula string into its syntax tree."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Reference finite-trace semantics (the oracle)
# ---------------------------------------------------------------------------


def evaluate(f: Formula, trace: Trace) -> bool:
    """Satisfaction of f at position 0 of a non-empty finite trace."""
    labels = [frozenset(t) for t in trace]
    if not labels:
        raise ValueError("trace must be non-empty")
    n = len(labels)
    memo: dict[tuple[int, Formula], bool] = {}

    def sat(i: int, g: Formula) -> bool:
        key = (i, g)
        v = memo.get(key)
        if v is not None:
            return v
        if isinstance(g, TrueLit):
            v = True
        elif isinstance(g, Atom):
            v = g.name in labels[i]
        elif isinstance(g, Not):
            v = not sat(i, g.arg)
        elif isinstance(g, And):
            v = sat(i, g.left) and sat(i, g.right)
        elif isinstance(g, Or):
            v = sat(i, g.left) or sat(i, g.right)
        elif isinstance(g, Eventually):
            v = any(sat(j, g.arg) for j in range(i, n))
        elif isinstance(g, Always):
            v = all(sat(j, g.arg) for j in range(i, n))
        elif isinstance(g, Until):
            v = any(
                sat(j, g.right) and all(sat(k, g.left) for k in range(i, j))
                for j in range(i, n)
            )
        else:
            raise TypeError(f"unknown node {g!r}")
        memo[key] = v
        return v

    return sat(0, f)


# ---------------------------------------------------------------------------
# DFA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dfa:
    """Deterministic automaton over label sets of the formula's atoms.

    Transitions are indexed by the bitmask of a label set restricted to
    ``atoms`` (bit i set iff atoms[i] present). ``delta`` is the total
    transition table; ``delta_pruned`` is None until :func:`preprocess`
    runs, afterwards entries leading into ``bad`` are None.
    """

    atoms: tuple[str, ...]
    n_states: int
    init: int
    accepting: frozenset[int]
    delta: tuple[tuple[int, ...], ...]
    bad: frozenset[int] = frozenset()
    delta_pruned: tuple[tuple[int | None, ...], ...] | None = None

    @property
    def n_labels(self) -> int:
        return 1 << len(self.atoms)

    @property
    def pruned(self) -> bool:
        return self.delta_pruned is not None

    def mask_of(self, labels: Iterable[str]) -> int:
        """Bitmask of a label set; atoms outside the alphabet are ignored."""
        m = 0
        for a in labels:
            try:
                m |= 1 << self.atoms.index(a)
            except ValueError:
                continue
        return m

    def labels_of(self, mask: int) -> LabelSet:
        return frozenset(a for i, a in enumerate(self.atoms) if mask >> i & 1)

    def accepts(self, trace: Trace) -> bool:
        """Run the unpruned automaton over all labels of a trace."""
        q = self.init
        for labels in trace:
            q = self.delta[q][self.mask_of(labels)]
        return q in self.accepting

    def step_mask(self, q: int, mask: int) -> int | None:
        """Pruned transition by label bitmask (hot path)."""
        if self.delta_pruned is None:
            raise LtlError("automaton not preprocessed; call preprocess() first")
        if q in self.bad:
            raise LtlError(f"state {q} is a dead state")
        return self.delta_pruned[q][mask]

    def live_states(self) -> tuple[int, ...]:
        return tuple(q for q in range(self.n_states) if q not in self.bad)


# Construction: formula residuals are Boolean functions over the temporal
# subformulas (and, transiently, the atoms of the top-level formula),
# canonicalized by truth table. Progressing a residual by one label
# substitutes each temporal variable with its one-step expansion, which
# directly yields a deterministic automaton; partition refinement then
# minimizes it.


class _Builder:
    def __init__(self, f: Formula, state_budget: int):
        self.atoms = f.atoms()
        if len(self.atoms) > MAX_ATOMS:
            raise CapacityError(
                f"formula uses {len(self.atoms)} atoms, limit is {MAX_ATOMS}"
            )
        self.budget = state_budget
        self.temporal: list[Formula] = []
        self.tindex: dict[Formula, int] = {}
        self._collect_temporal(f)
        self.k = len(self.temporal)
        self.nassign = 1 << self.k
        self.full = (1 << self.nassign) - 1
        # var(i) as a truth-table mask over the 2^k assignments
        self.var = [
            sum(1 << v for v in range(self.nassign) if v >> i & 1)
            for i in range(self.k)
        ]
        self._resid_memo: dict[tuple[Formula, int], int] = {}

    def _collect_temporal(self, g: Formula) -> None:
        if isinstance(g, (Eventually, Always)):
            if g not in self.tindex:
                self.tindex[g] = len(self.temporal)
                self.temporal.append(g)
            self._collect_temporal(g.arg)
        elif isinstance(g, Until):
            if g not in self.tindex:
                self.tindex[g] = len(self.temporal)
                self.temporal.append(g)
            self._collect_temporal(g.left)
            self._collect_temporal(g.right)
        elif isinstance(g, Not):
            self._collect_temporal(g.arg)
        elif isinstance(g, (And, Or)):
            self._collect_temporal(g.left)
            self._collect_temporal(g.right)

    def resid(self, g: Formula, lmask: int) -> int:
        """One-step residual of g under a label, as a function of the
        temporal variables (truth-table bitmask over 2^k assignments)."""
        key = (g, lmask)
        v = self._resid_memo.get(key)
        if v is not None:
            return v
        if isinstance(g, TrueLit):
            v = self.full
        elif isinstance(g, Atom):
            try:
                bit = 1 << self.atoms.index(g.name)
            except ValueError:
                bit = 0
            v = self.full if lmask & bit else 0
        elif isinstance(g, Not):
            v = self.full ^ self.resid(g.arg, lmask)
        elif isinstance(g, And):
            v = self.resid(g.left, lmask) & self.resid(g.right, lmask)
        elif isinstance(g, Or):
            v = self.resid(g.left, lmask) | self.resid(g.right, lmask)
        elif isinstance(g, Eventually):
            v = self.resid(g.arg, lmask) | self.var[self.tindex[g]]
        elif isinstance(g, Always):
            v = self.resid(g.arg, lmask) & self.var[self.tindex[g]]
        elif isinstance(g, Until):
            v = self.resid(g.right, lmask) | (
                self.resid(g.left, lmask) & self.var[self.tindex[g]]
            )
        else:
            raise TypeError(f"unknown node {g!r}")
        self._resid_memo[key] = v
        return v

    def progress_state(self, table: int, lmask: int) -> int:
        """Progress a residual truth table by one label."""
        tvals = [self.resid(t, lmask) for t in self.temporal]
        out = 0
        for v in range(self.nassign):
            w = 0
            for i in range(self.k):
                if tvals[i] >> v & 1:
                    w |= 1 << i
            if table >> w & 1:
                out |= 1 << v
        return out

    def end_assignment(self) -> int:
        """Variable assignment encoding end-of-trace: always-subformulas
        hold vacuously, eventually/until demands fail."""
        w = 0
        for i, t in enumerate(self.temporal):
            if isinstance(t, Always):
                w |= 1 << i
        return w

    def eval_end(self, g: Formula) -> bool:
        """End-of-trace truth of the top-level formula (atoms are false;
        only relevant to acceptance of the initial state, which consuming
        any non-empty trace never revisits for that purpose)."""
        if isinstance(g, TrueLit):
            return True
        if isinstance(g, Atom):
            return False
        if isinstance(g, Not):
            return not self.eval_end(g.arg)
        if isinstance(g, And):
            return self.eval_end(g.left) and self.eval_end(g.right)
        if isinstance(g, Or):
            return self.eval_end(g.left) or self.eval_end(g.right)
        if isinstance(g, Always):
            return True
        if isinstance(g, (Eventually, Until)):
            return False
        raise TypeError(f"unknown node {g!r}")

    def initial_residual(self, g: Formula, lmask: int) -> int:
        # The first label is consumed directly on the formula itself, so
        # bare atoms outside temporal operators resolve immediately.
        return self.resid(g, lmask)


def to_dfa(f: Formula, state_budget: int = DEFAULT_STATE_BUDGET) -> Dfa:
    """Compile a formula to its minimal DFA.

    Acceptance of a trace means the run over all its labels ends in an
    accepting state, matching :func:`evaluate` on every non-empty trace.
    """
    b = _Builder(f, state_budget)
    n_labels = 1 << len(b.atoms)
    e = b.end_assignment()

    # State 0 is the unconsumed formula; residual states are keyed by table.
    ids: dict[int, int] = {}
    trans: list[list[int]] = []
    accepting: set[int] = set()
    init_id = 0
    trans.append([0] * n_labels)
    if b.eval_end(f):
        accepting.add(init_id)

    frontier: list[tuple[int, int | None]] = [(init_id, None)]
    tables: list[int | None] = [None]

    def state_for(table: int) -> int:
        sid = ids.get(table)
        if sid is None:
            sid = len(trans)
            if sid >= state_budget:
                raise CapacityError(
                    f"state budget {state_budget} exceeded during determinization"
                )
            ids[table] = sid
            trans.append([0] * n_labels)
            tables.append(table)
            if table >> e & 1:
                accepting.add(sid)
            frontier.append((sid, table))
        return sid

    while frontier:
        sid, table = frontier.pop()
        for lmask in range(n_labels):
            if table is None:
                nxt = b.initial_residual(f, lmask)
            else:
                nxt = b.progress_state(table, lmask)
            trans[sid][lmask] = state_for(nxt)

    dfa = Dfa(
        atoms=b.atoms,
        n_states=len(trans),
        init=init_id,
        accepting=frozenset(accepting),
        delta=tuple(tuple(row) for row in trans),
    )
    return _minimize(dfa)


def _minimize(d: Dfa) -> Dfa:
    """Moore partition refinement plus canonical BFS relabeling."""
    n = d.n_states
    n_labels = d.n_labels
    block = [1 if q in d.accepting else 0 for q in range(n)]
    nblocks = 2 if 0 < len(d.accepting) < n else 1
    if nblocks == 1:
        block = [0] * n
    while True:
        sig_ids: dict[tuple, int] = {}
        new_block = [0] * n
        for q in range(n):
            sig = (block[q],) + tuple(block[d.delta[q][m]] for m in range(n_labels))
            nid = sig_ids.setdefault(sig, len(sig_ids))
            new_block[q] = nid
        if len(sig_ids) == nblocks:
            break
        nblocks = len(sig_ids)
        block = new_block

    # Relabel blocks in BFS order from the initial block, labels ascending.
    order: dict[int, int] = {}
    queue = [block[d.init]]
    order[block[d.init]] = 0
    rep: dict[int, int] = {}
    for q in range(n):
        rep.setdefault(block[q], q)
    qi = 0
    while qi < len(queue):
        bcur = queue[qi]
        qi += 1
        q = rep[bcur]
        for m in range(n_labels):
            bn = block[d.delta[q][m]]
            if bn not in order:
                order[bn] = len(order)
                queue.append(bn)
    n_min = len(order)
    delta = [[0] * n_labels for _ in range(n_min)]
    accepting: set[int] = set()
    for b_old, new_id in order.items():
        q = rep[b_old]
        for m in range(n_labels):
            delta[new_id][m] = order[block[d.delta[q][m]]]
        if q in d.accepting:
            accepting.add(new_id)
    return Dfa(
        atoms=d.atoms,
        n_states=n_min,
        init=order[block[d.init]],
        accepting=frozenset(accepting),
        delta=tuple(tuple(row) for row in delta),
    )


# ---------------------------------------------------------------------------
# Dead-state preprocessing and pruned stepping
# ---------------------------------------------------------------------------


def compute_bad_states(d: Dfa) -> frozenset[int]:
    """States not co-reachable to the accepting set (reverse reachability)."""
    rev: list[set[int]] = [set() for _ in range(d.n_states)]
    for q in range(d.n_states):
        for m in range(d.n_labels):
            rev[d.delta[q][m]].add(q)
    good = set(d.accepting)
    stack = list(d.accepting)
    while stack:
        q = stack.pop()
        for p in rev[q]:
            if p not in good:
                good.add(p)
                stack.append(p)
    return frozenset(set(range(d.n_states)) - good)


def preprocess(d: Dfa) -> Dfa:
    """Attach the dead-state set and the pruned transition table."""
    bad = compute_bad_states(d)
    pruned = tuple(
        tuple(
            (None if d.delta[q][m] in bad else d.delta[q][m])
            for m in range(d.n_labels)
        )
        for q in range(d.n_states)
    )
    return Dfa(
        atoms=d.atoms,
        n_states=d.n_states,
        init=d.init,
        accepting=d.accepting,
        delta=d.delta,
        bad=bad,
        delta_pruned=pruned,
    )


def step(d: Dfa, q: int, labels: Iterable[str]) -> int | None:
    """Pruned transition; None when the move was disabled."""
    return d.step_mask(q, d.mask_of(labels))


def accepting_one_hop(d: Dfa, q: int, labels: Iterable[str]) -> bool:
    """True iff one pruned step on the labels lands in the accepting set."""
    nxt = d.step_mask(q, d.mask_of(labels))
    return nxt is not None and nxt in d.accepting


def forbidden_zones(
    d: Dfa,
    q_cur: int,
    cur_labels: Iterable[str],
    regions: Iterable[tuple[str, Iterable[str]]],
) -> set[str]:
    """Region ids whose labels would drive the next state into the dead set.

    Uses the unpruned transitions: first the current labels are consumed,
    then each region's label set is tried for one step.
    """
    if not d.pruned:
        d = preprocess(d)
    if q_cur in d.bad:
        raise LtlError(f"state {q_cur} is a dead state")
    q_nxt = d.delta[q_cur][d.mask_of(cur_labels)]
    out: set[str] = set()
    for rid, labels in regions:
        if d.delta[q_nxt][d.mask_of(labels)] in d.bad:
            out.add(rid)
    return out


def forbidden_zone_masks(d: Dfa, q_cur: int, cur_mask: int,
                         region_masks: Sequence[int]) -> list[int]:
    """Index variant of :func:`forbidden_zones` for per-tick use."""
    q_nxt = d.delta[q_cur][cur_mask]
    return [i for i, m in enumerate(region_masks) if d.delta[q_nxt][m] in d.bad]


# ---------------------------------------------------------------------------
# DOT export
# ---------------------------------------------------------------------------


def to_dot(d: Dfa, name: str = "dfa") -> str:
    """GraphViz source: accepting states doubled, dead states dashed."""
    lines = [f"digraph {name} {{", "  rankdir=LR;", '  __init [shape=point];']
    for q in range(d.n_states):
        shape = "doublecircle" if q in d.accepting else "circle"
        style = ', style=dashed' if q in d.bad else ""
        lines.append(f'  q{q} [shape={shape}, label="{q}"{style}];')
    lines.append(f"  __init -> q{d.init};")
    for q in range(d.n_states):
        by_target: dict[int, list[str]] = {}
        for m in range(d.n_labels):
            tgt = d.delta[q][m]
            lbl = "{" + ",".join(sorted(d.labels_of(m))) + "}"
            by_target.setdefault(tgt, []).append(lbl)
        for tgt, lbls in sorted(by_target.items()):
            lines.append(f'  q{q} -> q{tgt} [label="{" ".join(lbls)}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
