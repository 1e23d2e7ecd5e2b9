"""Lowering from the AST to a flat micro-op IR.

Design choices that everything downstream relies on:

* Scalar variables (globals, locals, parameters, temporaries) live in
  registers, not memory.  Only arrays are memory objects, so the page
  events an instruction emits are its code fetch plus at most two array
  operand pages.  This mirrors register-allocated compiled code, where
  locals do not touch the data pages an OS can observe.
* Every micro-op occupies `WORD_SIZE` bytes of code, so a code unit's byte
  length is `4 * len(instrs)` and instruction addresses are dense.
* Ternary expressions lower to a branchless select; `if` statements are
  the only control-flow construct that branches.

The same lowering serves two consumers: the whole-program interpreter
(functions stay separate, calls are real transfers) and the execution-tree
builder (calls inlined, loops unrolled; see `expand_region`).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Union

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
    WORD_SIZE,
)
from .memory import PfoError


class LoweringError(PfoError):
    pass


# Operands: a register slot or an immediate.
@dataclass(frozen=True)
class Reg:
    slot: int


@dataclass(frozen=True)
class Const:
    value: int


Operand = Union[Reg, Const]


# --- micro-ops -------------------------------------------------------------

@dataclass(frozen=True)
class LoadI:
    """dst := obj[index]  (one data-read operand)."""
    dst: int
    obj: str
    index: Operand
    origin: str


@dataclass(frozen=True)
class StoreI:
    """obj[index] := src  (one data-write operand)."""
    obj: str
    index: Operand
    src: Operand
    origin: str


@dataclass(frozen=True)
class BinI:
    dst: int
    op: str
    a: Operand
    b: Operand
    origin: str


@dataclass(frozen=True)
class UnI:
    dst: int
    op: str
    a: Operand
    origin: str


@dataclass(frozen=True)
class SelI:
    """dst := cond ? a : b, computed branchlessly."""
    dst: int
    cond: Operand
    a: Operand
    b: Operand
    origin: str


@dataclass(frozen=True)
class MovI:
    dst: int
    a: Operand
    origin: str


@dataclass(frozen=True)
class CallI:
    """Transfer to a callee (interpreter mode only; trees inline calls)."""
    dst: Optional[int]
    fn: str
    args: tuple[Operand, ...]
    origin: str


@dataclass(frozen=True)
class RetI:
    value: Optional[Operand]
    origin: str


@dataclass(frozen=True)
class BranchI:
    """Block terminator: consumes the condition, no data operands."""
    cond: Operand
    origin: str


@dataclass(frozen=True)
class PadI:
    """Balancing filler: one dummy write to the pad object."""
    origin: str


@dataclass(frozen=True)
class NopI:
    origin: str


PAD_OBJECT = "__pad"

Instr = Union[LoadI, StoreI, BinI, UnI, SelI, MovI, CallI, RetI, BranchI, PadI, NopI]


def data_refs(instr: Instr) -> tuple[tuple[str, Operand, bool], ...]:
    """(object, index operand, is_write) triples an instruction touches."""
    if isinstance(instr, LoadI):
        return ((instr.obj, instr.index, False),)
    if isinstance(instr, StoreI):
        return ((instr.obj, instr.index, True),)
    if isinstance(instr, PadI):
        return ((PAD_OBJECT, Const(0), True),)
    return ()


# --- register allocation ---------------------------------------------------

class RegAlloc:
    """Flat register file shared by a whole compilation unit.

    Names are scoped by prefix (`fn/name` for locals, bare for globals);
    temporaries get fresh slots.  No recursion means every function can own
    static slots.
    """

    def __init__(self):
        self.slots: dict[str, int] = {}
        self._n = 0

    def slot(self, scoped_name: str) -> int:
        got = self.slots.get(scoped_name)
        if got is None:
            got = self._n
            self._n = got + 1
            self.slots[scoped_name] = got
        return got

    def temp(self) -> int:
        slot = self._n
        self._n += 1
        return slot

    @property
    def count(self) -> int:
        return self._n


# --- expression and statement lowering ---------------------------------

class _FnLowerer:
    """Lowers one function body into micro-ops plus an exec skeleton."""

    def __init__(self, program: Program, alloc: RegAlloc, fn: Function):
        self.program = program
        self.alloc = alloc
        self.fn = fn
        self.instrs: list[Instr] = []
        self.origin = fn.name

    def local(self, name: str) -> int:
        # globals (declared scalars) share bare names; everything else is
        # function-scoped
        decl = self.program.decl(name)
        if decl is not None and not decl.is_array:
            return self.alloc.slot(name)
        return self.alloc.slot(f"{self.fn.name}/{name}")

    def emit(self, instr: Instr) -> int:
        self.instrs.append(instr)
        return len(self.instrs) - 1

    def operand(self, e: Expr) -> Operand:
        if isinstance(e, Num):
            return Const(e.value)
        if isinstance(e, SizeOf):
            decl = self.program.decl(e.name)
            if decl is None or not decl.is_array:
                raise LoweringError(f"sizeof({e.name}): not an array")
            return Const(decl.byte_length)
        if isinstance(e, Var):
            if self.program.decl(e.name) is not None and self.program.decl(e.name).is_array:
                raise LoweringError(f"array {e.name!r} used without an index")
            return Reg(self.local(e.name))
        if isinstance(e, Index):
            decl = self.program.decl(e.name)
            if decl is None or not decl.is_array:
                raise LoweringError(f"{e.name!r} is not an array")
            idx = self.operand(e.index)
            dst = self.alloc.temp()
            self.emit(LoadI(dst, e.name, idx, self.origin))
            return Reg(dst)
        if isinstance(e, Unary):
            a = self.operand(e.operand)
            dst = self.alloc.temp()
            self.emit(UnI(dst, e.op, a, self.origin))
            return Reg(dst)
        if isinstance(e, Binary):
            a = self.operand(e.left)
            b = self.operand(e.right)
            dst = self.alloc.temp()
            self.emit(BinI(dst, e.op, a, b, self.origin))
            return Reg(dst)
        if isinstance(e, Ternary):
            c = self.operand(e.cond)
            a = self.operand(e.if_true)
            b = self.operand(e.if_false)
            dst = self.alloc.temp()
            self.emit(SelI(dst, c, a, b, self.origin))
            return Reg(dst)
        if isinstance(e, CallExpr):
            return self.call(e.name, e.args)
        raise LoweringError(f"cannot lower expression {e!r}")

    def call(self, name: str, args: tuple[Expr, ...]) -> Operand:
        callee = self.program.function(name)
        if len(callee.params) != len(args):
            raise LoweringError(
                f"{name}() expects {len(callee.params)} arguments, got {len(args)}"
            )
        arg_ops = tuple(self.operand(a) for a in args)
        dst = self.alloc.temp()
        self.emit(CallI(dst, name, arg_ops, self.origin))
        return Reg(dst)

    def assign(self, stmt: Assign) -> None:
        value = self.operand(stmt.value)
        if isinstance(stmt.target, Var):
            decl = self.program.decl(stmt.target.name)
            if decl is not None and decl.is_array:
                raise LoweringError(f"cannot assign whole array {stmt.target.name!r}")
            self.emit(MovI(self.local(stmt.target.name), value, self.origin))
        else:
            decl = self.program.decl(stmt.target.name)
            if decl is None or not decl.is_array:
                raise LoweringError(f"{stmt.target.name!r} is not an array")
            idx = self.operand(stmt.target.index)
            self.emit(StoreI(stmt.target.name, idx, value, self.origin))


# --- interpreter-mode lowering ------------------------------------------

@dataclass
class RunNode:
    lo: int
    hi: int


@dataclass
class IfNode:
    cond_run: RunNode
    cond: Operand
    branch_index: int
    then_node: "SeqNode"
    else_node: "SeqNode"


@dataclass
class ForNode:
    init_run: RunNode
    body: "SeqNode"
    step_run: RunNode
    trips: int


@dataclass
class WhileNode:
    cond_run: RunNode
    cond: Operand
    branch_index: int
    body: "SeqNode"
    bound: int
    do_first: bool


@dataclass
class RetNode:
    run: RunNode
    ret_index: int


@dataclass
class SeqNode:
    items: list


@dataclass
class LoweredFunction:
    name: str
    params: tuple[int, ...]  # register slots for parameters
    instrs: list[Instr]
    body: SeqNode
    result_slot: Optional[int]


def lower_function(program: Program, fn: Function, alloc: RegAlloc) -> LoweredFunction:
    low = _FnLowerer(program, alloc, fn)
    ret_slot = alloc.slot(f"{fn.name}/__ret")

    def lower_stmts(stmts) -> SeqNode:
        items: list = []
        for s in stmts:
            if isinstance(s, RegionMarker):
                continue
            if isinstance(s, Assign):
                lo = len(low.instrs)
                low.assign(s)
                items.append(RunNode(lo, len(low.instrs)))
            elif isinstance(s, CallStmt):
                lo = len(low.instrs)
                low.call(s.name, s.args)
                items.append(RunNode(lo, len(low.instrs)))
            elif isinstance(s, Return):
                lo = len(low.instrs)
                value = low.operand(s.value) if s.value is not None else None
                idx = low.emit(RetI(value, low.origin))
                items.append(RetNode(RunNode(lo, idx), idx))
            elif isinstance(s, If):
                lo = len(low.instrs)
                cond = low.operand(s.cond)
                bidx = low.emit(BranchI(cond, low.origin))
                then_node = lower_stmts(s.then_body)
                else_node = lower_stmts(s.else_body)
                items.append(IfNode(RunNode(lo, bidx), cond, bidx, then_node, else_node))
            elif isinstance(s, For):
                lo = len(low.instrs)
                var_slot = low.local(s.var)
                low.emit(MovI(var_slot, low.operand(s.init), low.origin))
                init_run = RunNode(lo, len(low.instrs))
                body_lo = len(low.instrs)
                body = lower_stmts(s.body)
                step_lo = len(low.instrs)
                low.emit(MovI(var_slot, low.operand(s.step), low.origin))
                items.append(ForNode(init_run, body, RunNode(step_lo, len(low.instrs)), s.trips))
            elif isinstance(s, While):
                lo = len(low.instrs)
                cond = low.operand(s.cond)
                bidx = low.emit(BranchI(cond, low.origin))
                body = lower_stmts(s.body)
                items.append(WhileNode(RunNode(lo, bidx), cond, bidx, body, s.bound, s.do_first))
            else:
                raise LoweringError(f"cannot lower statement {s!r}")
        return SeqNode(items)

    body = lower_stmts(fn.body)
    params = tuple(low.local(p) for p in fn.params)
    return LoweredFunction(fn.name, params, low.instrs, body, ret_slot)


@dataclass
class LoweredProgram:
    program: Program
    alloc: RegAlloc
    functions: dict[str, LoweredFunction]

    def code_lengths(self) -> dict[str, int]:
        """Byte length of every function (for layout construction)."""
        return {name: len(fn.instrs) * WORD_SIZE for name, fn in self.functions.items()}


def lower_program(program: Program) -> LoweredProgram:
    alloc = RegAlloc()
    functions = {}
    for fn in program.functions:
        functions[fn.name] = lower_function(program, fn, alloc)
    return LoweredProgram(program, alloc, functions)


# --- region extraction and tree-mode expansion ------------------------------

@dataclass(frozen=True)
class Region:
    """The sensitive span of the entry function, plus what surrounds it."""

    prefix: tuple[Stmt, ...]
    body: tuple[Stmt, ...]
    suffix: tuple[Stmt, ...]
    explicit: bool


def extract_region(program: Program) -> Region:
    """Split `main` into (before, sensitive region, after).

    Programs without markers treat the whole entry body as the region.  For
    tree construction the markers must sit at the top level of `main`.
    """
    body = program.entry.body
    marks = [i for i, s in enumerate(body) if isinstance(s, RegionMarker)]
    if not marks:
        for fn in program.functions:
            for s in fn.body:
                if isinstance(s, RegionMarker):
                    raise LoweringError(
                        "sensitive region must be a top-level span of `main` "
                        f"(found markers in {fn.name!r})"
                    )
        return Region((), body, (), False)
    if len(marks) != 2:
        raise LoweringError("expected exactly one begin/end marker pair in `main`")
    b, e = marks
    return Region(body[:b], body[b + 1:e], body[e + 1:], True)


@dataclass(frozen=True)
class TaggedStmt:
    """A flat statement plus the source function it came from."""

    stmt: Stmt
    origin: str


@dataclass(frozen=True)
class TaggedIf:
    cond: Expr
    origin: str
    then_items: tuple
    else_items: tuple


@dataclass(frozen=True)
class IterMark:
    """Boundary between unrolled loop iterations (block delimiter)."""


class ExpansionBudgetError(PfoError):
    """Unrolled region exceeded the configured node budget."""


class _Expander:
    """Inlines calls and unrolls loops into a flat, origin-tagged list.

    Output items are TaggedStmt (Assign only), TaggedIf (arms already
    expanded), and IterMark.  Variables from inlined bodies are renamed
    `callee@k/name` so every call-site instance owns fresh locals.
    """

    def __init__(self, program: Program, budget: int):
        self.program = program
        self.budget = budget
        self.count = 0
        self.site = itertools.count()
        self.origin_stack = [program.entry.name]
        self.loop_stack: list = []

    @property
    def origin(self) -> str:
        return self.origin_stack[-1]

    def spend(self, loop_pos=None) -> None:
        self.count += 1
        if self.count > self.budget:
            pos = loop_pos or (self.loop_stack[-1] if self.loop_stack else None)
            where = f" (loop at line {pos.line})" if pos else ""
            raise ExpansionBudgetError(
                f"unrolled region exceeds {self.budget} statements{where}"
            )

    def expand_stmts(self, stmts, rename) -> list:
        out: list = []
        for s in stmts:
            if isinstance(s, RegionMarker):
                continue
            if isinstance(s, Assign):
                pre, value = self.expand_expr(s.value, rename)
                out.extend(pre)
                target = s.target
                if isinstance(target, Var):
                    stmt = Assign(Var(rename(target.name)), value)
                else:
                    ipre, idx = self.expand_expr(target.index, rename)
                    out.extend(ipre)
                    stmt = Assign(Index(rename(target.name), idx), value)
                out.append(TaggedStmt(stmt, self.origin))
                self.spend()
            elif isinstance(s, CallStmt):
                pre, _ = self.inline_call(s.name, s.args, rename)
                out.extend(pre)
            elif isinstance(s, Return):
                raise LoweringError(
                    "return inside the sensitive region of `main` is unsupported"
                )
            elif isinstance(s, If):
                pre, cond = self.expand_expr(s.cond, rename)
                out.extend(pre)
                then_items = tuple(self.expand_stmts(s.then_body, rename))
                else_items = tuple(self.expand_stmts(s.else_body, rename))
                out.append(TaggedIf(cond, self.origin, then_items, else_items))
                self.spend()
            elif isinstance(s, For):
                var = rename(s.var)
                pre, init = self.expand_expr(s.init, rename)
                out.extend(pre)
                out.append(TaggedStmt(Assign(Var(var), init), self.origin))
                self.loop_stack.append(s.pos)
                for trip in range(s.trips):
                    if trip:
                        out.append(IterMark())
                    out.extend(self.expand_stmts(s.body, rename))
                    spre, step = self.expand_expr(s.step, rename)
                    out.extend(spre)
                    out.append(TaggedStmt(Assign(Var(var), step), self.origin))
                    self.spend(s.pos)
                self.loop_stack.pop()
            elif isinstance(s, While):
                out.extend(self.expand_while(s, rename))
            else:
                raise LoweringError(f"cannot expand statement {s!r}")
        return out

    def expand_while(self, s: While, rename) -> list:
        self.loop_stack.append(s.pos)

        def cascade(remaining: int) -> list:
            if remaining == 0:
                return []
            self.spend(s.pos)
            pre, cond = self.expand_expr(s.cond, rename)
            body = tuple(self.expand_stmts(s.body, rename) + cascade(remaining - 1))
            return pre + [TaggedIf(cond, self.origin, body, ())]

        try:
            if s.do_first:
                first = self.expand_stmts(s.body, rename)
                return first + cascade(max(s.bound - 1, 0))
            return cascade(s.bound)
        finally:
            self.loop_stack.pop()

    def expand_expr(self, e: Expr, rename) -> tuple[list, Expr]:
        pre: list = []

        def walk(e: Expr) -> Expr:
            if isinstance(e, (Num, SizeOf)):
                return e
            if isinstance(e, Var):
                return Var(rename(e.name))
            if isinstance(e, Index):
                return Index(rename(e.name), walk(e.index))
            if isinstance(e, Unary):
                return Unary(e.op, walk(e.operand))
            if isinstance(e, Binary):
                return Binary(e.op, walk(e.left), walk(e.right))
            if isinstance(e, Ternary):
                return Ternary(walk(e.cond), walk(e.if_true), walk(e.if_false))
            if isinstance(e, CallExpr):
                stmts, result = self.inline_call(e.name, e.args, rename)
                pre.extend(stmts)
                return result
            raise LoweringError(f"cannot expand expression {e!r}")

        return pre, walk(e)

    def inline_call(self, name: str, args, rename) -> tuple[list, Expr]:
        callee = self.program.function(name)
        if len(callee.params) != len(args):
            raise LoweringError(
                f"{name}() expects {len(callee.params)} arguments, got {len(args)}"
            )
        tag = f"{name}@{next(self.site)}"
        scope: dict[str, str] = {}

        def inner_rename(var: str) -> str:
            if self.program.decl(var) is not None:
                return var  # globals and arrays keep their names
            if var not in scope:
                scope[var] = f"{tag}/{var}"
            return scope[var]

        out: list = []
        for p, a in zip(callee.params, args):
            pre, value = self.expand_expr(a, rename)
            out.extend(pre)
            out.append(TaggedStmt(Assign(Var(inner_rename(p)), value), self.origin))
            self.spend()

        body = list(callee.body)
        if any(_contains_return(s) for s in body[:-1]) or (
            body and isinstance(body[-1], If) and _contains_return(body[-1])
        ):
            raise LoweringError(
                f"{name}(): early returns are unsupported inside the sensitive region"
            )
        tail = None
        if body and isinstance(body[-1], Return):
            tail = body.pop()

        self.origin_stack.append(name)
        try:
            out.extend(self.expand_stmts(body, inner_rename))
            ret_expr: Expr = Num(0)
            if tail is not None and tail.value is not None:
                pre, value = self.expand_expr(tail.value, inner_rename)
                out.extend(pre)
                ret_expr = value
        finally:
            self.origin_stack.pop()
        return out, ret_expr


def _contains_return(s: Stmt) -> bool:
    if isinstance(s, Return):
        return True
    if isinstance(s, If):
        return any(_contains_return(x) for x in s.then_body + s.else_body)
    if isinstance(s, (For, While)):
        return any(_contains_return(x) for x in s.body)
    return False


DEFAULT_NODE_BUDGET = 1 << 20


def expand_region(program: Program, budget: int = DEFAULT_NODE_BUDGET) -> list:
    """Inline calls and unroll loops of the sensitive region of `main`.

    Returns origin-tagged items (TaggedStmt / TaggedIf / IterMark); the
    identity renaming applies to the entry function's own statements.
    """
    region = extract_region(program)
    expander = _Expander(program, budget)

    entry_scope: dict[str, str] = {}

    def entry_rename(var: str) -> str:
        if expander.program.decl(var) is not None:
            return var
        if var not in entry_scope:
            entry_scope[var] = f"{program.entry.name}/{var}"
        return entry_scope[var]

    return expander.expand_stmts(list(region.body), entry_rename)
