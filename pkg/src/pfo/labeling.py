"""Secret-sensitivity labeling.

Labels form a two-point lattice (high above low).  High taint starts at
declared secrets and at everything lexically inside the marked region,
then closes transitively over calls reachable from region code and over
dataflow: an assignment reading a high variable makes its target high,
and, conservatively, any function writing a high variable becomes high
itself.  The result is a fixpoint, so labeling twice changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import extract_region
from .lang import (
    Assign,
    Binary,
    CallExpr,
    CallStmt,
    Expr,
    For,
    Function,
    If,
    Index,
    Num,
    Program,
    RegionMarker,
    Return,
    SizeOf,
    Stmt,
    Ternary,
    Unary,
    Var,
    While,
)

HIGH = "high"
LOW = "low"


def _expr_reads(e: Expr, out: set[str]) -> None:
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, Index):
        out.add(e.name)
        _expr_reads(e.index, out)
    elif isinstance(e, Unary):
        _expr_reads(e.operand, out)
    elif isinstance(e, Binary):
        _expr_reads(e.left, out)
        _expr_reads(e.right, out)
    elif isinstance(e, Ternary):
        for sub in (e.cond, e.if_true, e.if_false):
            _expr_reads(sub, out)
    elif isinstance(e, CallExpr):
        for a in e.args:
            _expr_reads(a, out)


@dataclass(frozen=True)
class _Flow:
    """One dataflow edge: writing `target` from reads of `sources`."""

    fn: str
    target: str
    sources: frozenset[str]


@dataclass(frozen=True)
class _CallSite:
    caller: str
    callee: str
    arg_reads: tuple[frozenset[str], ...]


@dataclass
class LabelingResult:
    program: Program
    variables: dict[str, str]   # scoped name -> high/low
    functions: dict[str, str]
    warnings: list[str] = field(default_factory=list)

    @property
    def high_variables(self) -> frozenset[str]:
        return frozenset(v for v, l in self.variables.items() if l == HIGH)

    @property
    def high_functions(self) -> frozenset[str]:
        return frozenset(f for f, l in self.functions.items() if l == HIGH)

    def summary(self) -> dict:
        """Analysis counts over the high slice (functions, blocks, loops, vars)."""
        blocks = 0
        loops = 0
        for fname in sorted(self.high_functions):
            fn = self.program.function(fname)
            blocks += static_block_count(fn.body)
            loops += _loop_count(fn.body)
        return {
            "functions": len(self.high_functions),
            "execution_blocks": blocks,
            "loops": loops,
            "variables": len(self.high_variables),
        }


def static_block_count(stmts: tuple[Stmt, ...]) -> int:
    """Static execution-block count of a statement list.

    One block for the straight-line spine; every conditional adds its two
    arms plus the join continuation; every loop adds its body plus the
    re-entry block.  Loops are counted once (statically, not unrolled).
    """
    blocks = 1
    for s in stmts:
        if isinstance(s, If):
            blocks += static_block_count(s.then_body)
            blocks += static_block_count(s.else_body) if s.else_body else 1
            blocks += 1
        elif isinstance(s, (For, While)):
            blocks += static_block_count(s.body) + 1
    return blocks


def _loop_count(stmts: tuple[Stmt, ...]) -> int:
    n = 0
    for s in stmts:
        if isinstance(s, (For, While)):
            n += 1 + _loop_count(s.body)
        elif isinstance(s, If):
            n += _loop_count(s.then_body) + _loop_count(s.else_body)
    return n


def _scoped(program: Program, fn: str, name: str) -> str:
    # globals keep bare names; function locals are scoped
    return name if program.decl(name) is not None else f"{fn}/{name}"


def _collect(program: Program):
    """Flow edges, call sites, and per-function mention sets."""
    flows: list[_Flow] = []
    calls: list[_CallSite] = []
    mentions: dict[str, set[str]] = {f.name: set() for f in program.functions}
    returns: dict[str, set[str]] = {f.name: set() for f in program.functions}

    def walk(fn: str, stmts, into_mentions: set[str]):
        for s in stmts:
            if isinstance(s, RegionMarker):
                continue
            if isinstance(s, Assign):
                reads: set[str] = set()
                _expr_reads(s.value, reads)
                target = s.target.name
                if isinstance(s.target, Index):
                    _expr_reads(s.target.index, reads)
                scoped_reads = frozenset(_scoped(program, fn, r) for r in reads)
                flows.append(_Flow(fn, _scoped(program, fn, target), scoped_reads))
                into_mentions.add(_scoped(program, fn, target))
                into_mentions.update(scoped_reads)
                _collect_calls(fn, s.value)
            elif isinstance(s, CallStmt):
                for a in s.args:
                    reads = set()
                    _expr_reads(a, reads)
                    into_mentions.update(_scoped(program, fn, r) for r in reads)
                _register_call(fn, s.name, s.args)
                for a in s.args:
                    _collect_calls(fn, a)
            elif isinstance(s, Return):
                if s.value is not None:
                    reads = set()
                    _expr_reads(s.value, reads)
                    returns[fn].update(_scoped(program, fn, r) for r in reads)
                    into_mentions.update(_scoped(program, fn, r) for r in reads)
                    _collect_calls(fn, s.value)
            elif isinstance(s, If):
                reads = set()
                _expr_reads(s.cond, reads)
                into_mentions.update(_scoped(program, fn, r) for r in reads)
                _collect_calls(fn, s.cond)
                walk(fn, s.then_body, into_mentions)
                walk(fn, s.else_body, into_mentions)
            elif isinstance(s, (For, While)):
                if isinstance(s, For):
                    for e in (s.init, s.cond, s.step):
                        reads = set()
                        _expr_reads(e, reads)
                        into_mentions.update(_scoped(program, fn, r) for r in reads)
                    into_mentions.add(_scoped(program, fn, s.var))
                    flows.append(_Flow(fn, _scoped(program, fn, s.var), frozenset()))
                else:
                    reads = set()
                    _expr_reads(s.cond, reads)
                    into_mentions.update(_scoped(program, fn, r) for r in reads)
                walk(fn, s.body, into_mentions)

    def _register_call(caller: str, callee: str, args):
        arg_reads = []
        for a in args:
            reads: set[str] = set()
            _expr_reads(a, reads)
            arg_reads.append(frozenset(_scoped(program, caller, r) for r in reads))
        calls.append(_CallSite(caller, callee, tuple(arg_reads)))

    def _collect_calls(fn: str, e: Expr):
        if isinstance(e, CallExpr):
            _register_call(fn, e.name, e.args)
            for a in e.args:
                _collect_calls(fn, a)
        elif isinstance(e, (Unary,)):
            _collect_calls(fn, e.operand)
        elif isinstance(e, Binary):
            _collect_calls(fn, e.left)
            _collect_calls(fn, e.right)
        elif isinstance(e, Ternary):
            for sub in (e.cond, e.if_true, e.if_false):
                _collect_calls(fn, sub)
        elif isinstance(e, Index):
            _collect_calls(fn, e.index)

    for f in program.functions:
        walk(f.name, f.body, mentions[f.name])
    return flows, calls, mentions, returns


def _region_info(program: Program):
    """Names mentioned and functions called lexically inside the region."""
    region = extract_region(program)
    mentioned: set[str] = set()
    called: set[str] = set()

    def walk(stmts):
        for s in stmts:
            if isinstance(s, RegionMarker):
                continue
            if isinstance(s, Assign):
                reads: set[str] = set()
                _expr_reads(s.value, reads)
                if isinstance(s.target, Index):
                    _expr_reads(s.target.index, reads)
                reads.add(s.target.name)
                mentioned.update(reads)
                _calls(s.value)
            elif isinstance(s, CallStmt):
                called.add(s.name)
                for a in s.args:
                    reads = set()
                    _expr_reads(a, reads)
                    mentioned.update(reads)
                    _calls(a)
            elif isinstance(s, Return) and s.value is not None:
                reads = set()
                _expr_reads(s.value, reads)
                mentioned.update(reads)
                _calls(s.value)
            elif isinstance(s, If):
                reads = set()
                _expr_reads(s.cond, reads)
                mentioned.update(reads)
                _calls(s.cond)
                walk(s.then_body)
                walk(s.else_body)
            elif isinstance(s, (For, While)):
                if isinstance(s, For):
                    mentioned.add(s.var)
                    for e in (s.init, s.cond, s.step):
                        reads = set()
                        _expr_reads(e, reads)
                        mentioned.update(reads)
                else:
                    reads = set()
                    _expr_reads(s.cond, reads)
                    mentioned.update(reads)
                walk(s.body)

    def _calls(e: Expr):
        if isinstance(e, CallExpr):
            called.add(e.name)
            for a in e.args:
                _calls(a)
        elif isinstance(e, Unary):
            _calls(e.operand)
        elif isinstance(e, Binary):
            _calls(e.left)
            _calls(e.right)
        elif isinstance(e, Ternary):
            for sub in (e.cond, e.if_true, e.if_false):
                _calls(sub)
        elif isinstance(e, Index):
            _calls(e.index)

    walk(region.body)
    return region, mentioned, called


def label_sensitivity(program: Program) -> LabelingResult:
    """Compute the high/low label of every variable and function."""
    flows, calls, mentions, returns = _collect(program)
    region, region_mentioned, region_called = _region_info(program)

    warnings: list[str] = []
    if region.explicit and not program.secrets:
        warnings.append("sensitive region declares no secret variables")

    entry = program.entry.name
    high_vars: set[str] = set()
    high_fns: set[str] = set()

    for d in program.secrets:
        high_vars.add(d.name)
    for name in region_mentioned:
        high_vars.add(_scoped(program, entry, name))
    if region.explicit or program.secrets:
        high_fns.add(entry)

    # transitive closure over calls from region code; bodies of these
    # functions count as lexically inside the region
    callee_map: dict[str, set[str]] = {}
    for site in calls:
        callee_map.setdefault(site.caller, set()).add(site.callee)
    region_closure: set[str] = set()
    frontier = set(region_called)
    while frontier:
        fn = frontier.pop()
        if fn in region_closure:
            continue
        region_closure.add(fn)
        frontier.update(callee_map.get(fn, ()))
    high_fns.update(region_closure)

    # every variable lexically inside region-reachable code is high; code
    # outside the region in the entry function is not absorbed this way
    def absorb_function_vars():
        changed = False
        for fn in region_closure:
            for name in mentions.get(fn, ()):
                if name not in high_vars:
                    high_vars.add(name)
                    changed = True
        return changed

    # dataflow fixpoint: secret taint through assignments, calls, returns,
    # plus the conservative writer rule
    changed = True
    while changed:
        changed = absorb_function_vars()
        for flow in flows:
            if flow.target in high_vars:
                # writer of a high variable: the writing function turns high
                if flow.fn not in high_fns:
                    high_fns.add(flow.fn)
                    changed = True
            if flow.sources & high_vars and flow.target not in high_vars:
                high_vars.add(flow.target)
                changed = True
        for site in calls:
            callee_params = program.function(site.callee).params
            for param, reads in zip(callee_params, site.arg_reads):
                scoped_param = _scoped(program, site.callee, param)
                if reads & high_vars and scoped_param not in high_vars:
                    high_vars.add(scoped_param)
                    changed = True
            if site.callee in high_fns:
                continue
            # a call passing high data makes the callee high
            if any(r & high_vars for r in site.arg_reads):
                high_fns.add(site.callee)
                changed = True

    variables: dict[str, str] = {}
    for fn in program.functions:
        for name in mentions[fn.name]:
            variables[name] = HIGH if name in high_vars else LOW
    for d in program.decls:
        variables.setdefault(d.name, HIGH if d.name in high_vars else LOW)
        if d.name in high_vars:
            variables[d.name] = HIGH
    functions = {
        f.name: HIGH if f.name in high_fns else LOW for f in program.functions
    }
    return LabelingResult(program, variables, functions, warnings)
