"""Contractual execution: bucket pledges, redirected faults, fake execution.

The enclave pledges the full set of pages its sensitive code needs (the
*bucket*, derived from what the program can touch) plus one reserved page
that must always stay mapped for the fault handler.  A cooperating OS
never unmaps bucket pages, so a run completes with no OS-visible faults;
a cheating OS may steal any page at any time (stealing always succeeds,
so the enclave poses no denial-of-service risk).

When a stolen bucket page is touched, the CPU vectors the fault to the
enclave handler, invisible to the OS.  Two handler policies are modeled:

* naive termination exits at the fault step, which hands an adaptive OS a
  timing oracle: stealing a page and watching when the run dies reveals
  whether and when that page was needed;
* fake execution pads with dummy steps to the full schedule length before
  exiting, so the observable (no faults, fixed termination time) matches a
  honest run exactly.

Stealing the reserved page aborts at the next context entry, regardless
of whether the enclave would have touched it; the handler page is checked
at entry, never at access time, so no double fault can arise.
"""

from __future__ import annotations

import itertools
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .ir import CallI, data_refs, lower_program
from .lang import Program
from .memory import AdversaryModel, PfoError, _instruction_groups


class ContractError(PfoError):
    pass


@dataclass(frozen=True)
class Contract:
    code_pages: frozenset[int]
    data_pages: frozenset[int]
    reserved_page: int  # always-mapped handler page, counted with code
    total_steps: int

    @property
    def bucket(self) -> frozenset[int]:
        return self.code_pages | self.data_pages | {self.reserved_page}

    @property
    def size(self) -> tuple[int, int]:
        """(code + handler, data) page counts, the bucket-size label."""
        return (len(self.code_pages | {self.reserved_page}), len(self.data_pages))

    @property
    def size_label(self) -> str:
        c, d = self.size
        return f"{c} + {d}"


@dataclass(frozen=True)
class OsStrategy:
    variant: str  # 'honest' | 'steal'
    page: int = -1
    step: int = -1

    @staticmethod
    def honest() -> "OsStrategy":
        return OsStrategy("honest")

    @staticmethod
    def steal(page: int, step: int) -> "OsStrategy":
        return OsStrategy("steal", page, step)


@dataclass(frozen=True)
class EnclaveObservable:
    os_visible_faults: tuple[int, ...]
    termination_step: int
    exit_kind: str  # 'normal' | 'abort-on-entry'


NAIVE_TERMINATE = "naive-terminate"
FAKE_EXECUTE = "fake-execute"


@dataclass(frozen=True)
class AccessSchedule:
    """Per-run page-access times at instruction (logical step) granularity."""

    total_steps: int
    page_steps: dict[int, tuple[int, ...]]

    def first_access_at_or_after(self, page: int, step: int) -> Optional[int]:
        steps = self.page_steps.get(page)
        if not steps:
            return None
        i = bisect_left(steps, step)
        return steps[i] if i < len(steps) else None


def access_schedule(exe, secret=None, public=None) -> AccessSchedule:
    result = exe.run(secret=secret, public=public,
                     model=AdversaryModel.infinite_memory(), collect_trace=True)
    if result.trap is not None:
        raise ContractError(f"contracted run trapped: {result.trap}")
    pages: dict[int, list[int]] = {}
    step = -1
    for step, group in enumerate(_instruction_groups(result.trace)):
        for ev in group:
            bucket = pages.setdefault(ev.page, [])
            if not bucket or bucket[-1] != step:
                bucket.append(step)
    total = step + 1
    return AccessSchedule(total, {p: tuple(s) for p, s in pages.items()})


def _reachable_functions(program: Program) -> set[str]:
    lowered = lower_program(program)
    edges: dict[str, set[str]] = {}
    for name, fn in lowered.functions.items():
        edges[name] = {i.fn for i in fn.instrs if isinstance(i, CallI)}
    seen: set[str] = set()
    frontier = [program.entry.name]
    while frontier:
        fn = frontier.pop()
        if fn in seen:
            continue
        seen.add(fn)
        frontier.extend(edges.get(fn, ()))
    return seen


def derive_contract(exe, probe_secrets: Iterable[dict],
                    probe_public: Optional[dict] = None) -> Contract:
    """Bucket and schedule length for a balanced, laid-out program.

    The bucket is every code page of a reachable function plus every page
    of a referenced array; the reserved handler page is the next unused
    page.  Schedule length must agree across the probe secrets, otherwise
    the program is not balanced and no meaningful contract exists.
    """
    program = exe.program
    layout = exe.layout
    lowered = lower_program(program)
    reachable = _reachable_functions(program)

    code_pages: set[int] = set()
    for name in reachable:
        if lowered.functions[name].instrs:
            code_pages.update(e.page for e in layout.code_extents(name))
    objects: set[str] = set()
    for name in reachable:
        for instr in lowered.functions[name].instrs:
            for obj, _i, _w in data_refs(instr):
                objects.add(obj)
    data_pages: set[int] = set()
    for obj in objects:
        data_pages.update(e.page for e in layout.data_extents(obj))

    reserved = max(layout.all_pages() | {0}) + 1

    totals = set()
    probes = list(probe_secrets)
    if not probes:
        raise ContractError("need at least one probe secret")
    for secret in probes:
        result = exe.run(secret=secret, public=probe_public,
                         model=AdversaryModel.infinite_memory())
        if result.trap is not None:
            raise ContractError(f"probe run trapped: {result.trap}")
        totals.add(result.steps)
    if len(totals) != 1:
        raise ContractError(
            f"program is not balanced: schedule lengths differ ({sorted(totals)})"
        )
    return Contract(
        frozenset(code_pages), frozenset(data_pages), reserved, totals.pop()
    )


def observable_for(schedule: AccessSchedule, contract: Contract,
                   strategy: OsStrategy, policy: str) -> EnclaveObservable:
    """Enclave-visible outcome of one run under a steal strategy.

    Contracted pages never fault to the OS; the only observables are the
    termination step and, for reserved-page theft, the entry abort.
    """
    if strategy.variant == "honest":
        return EnclaveObservable((), contract.total_steps, "normal")
    if strategy.variant != "steal":
        raise ContractError(f"unknown strategy {strategy.variant!r}")
    if not (0 <= strategy.step <= contract.total_steps):
        raise ContractError(
            f"steal step {strategy.step} outside [0, {contract.total_steps}]"
        )
    if strategy.page == contract.reserved_page:
        # checked at context entry, regardless of accesses; never a fault
        return EnclaveObservable((), strategy.step, "abort-on-entry")
    fault_step = schedule.first_access_at_or_after(strategy.page, strategy.step)
    if fault_step is None:
        return EnclaveObservable((), contract.total_steps, "normal")
    if policy == NAIVE_TERMINATE:
        return EnclaveObservable((), fault_step, "normal")
    if policy == FAKE_EXECUTE:
        # the handler spins out the remaining time from its dedicated
        # counter, then exits at the full schedule length
        return EnclaveObservable((), contract.total_steps, "normal")
    raise ContractError(f"unknown policy {policy!r}")


def run_contractual(exe, contract: Contract, secret, strategy: OsStrategy,
                    policy: str = FAKE_EXECUTE, public=None):
    """One contractual run: the plain simulation plus the enclave observable."""
    schedule = access_schedule(exe, secret, public)
    if schedule.total_steps != contract.total_steps:
        raise ContractError(
            f"schedule length {schedule.total_steps} does not match the "
            f"contract ({contract.total_steps})"
        )
    observable = observable_for(schedule, contract, strategy, policy)
    result = None
    if strategy.variant == "honest":
        result = exe.run(secret=secret, public=public,
                         model=AdversaryModel.infinite_memory())
    return result, observable


def steal_many(exe, contract: Contract, secret, steals: Iterable[tuple[int, int]],
               policy: str = FAKE_EXECUTE, public=None) -> list[EnclaveObservable]:
    """Adaptive repeated-invocation attack: one steal per run, composed."""
    schedule = access_schedule(exe, secret, public)
    return [
        observable_for(schedule, contract, OsStrategy.steal(page, step), policy)
        for page, step in steals
    ]


@dataclass(frozen=True)
class SweepReport:
    policy: str
    secrets_checked: int
    strategies_checked: int
    observable_classes: int
    aborts_consistent: bool
    indistinguishable: bool
    distinguishing: Optional[tuple[int, int, tuple, tuple]] = None  # page, step, s0, s1

    def to_json_dict(self) -> dict:
        return {
            "policy": self.policy,
            "secrets": self.secrets_checked,
            "strategies": self.strategies_checked,
            "observable_classes": self.observable_classes,
            "aborts_consistent": self.aborts_consistent,
            "indistinguishable": self.indistinguishable,
            "distinguishing_steal": None if self.distinguishing is None else {
                "page": self.distinguishing[0], "step": self.distinguishing[1],
            },
        }


def check_contract_indistinguishability(
        exe, contract: Contract, secrets: Iterable[dict], policy: str,
        pages: Optional[Iterable[int]] = None,
        steps: Optional[Iterable[int]] = None,
        public=None) -> SweepReport:
    """Sweep honest plus every single-page steal over every secret.

    Under fake execution all non-abort observables must form one class;
    abort observables (reserved-page theft) must at least be independent
    of the secret.  Under naive termination the report names the first
    distinguishing steal point.
    """
    secret_list = list(secrets)
    schedules = [access_schedule(exe, s, public) for s in secret_list]
    for sched in schedules:
        if sched.total_steps != contract.total_steps:
            raise ContractError("schedule length disagrees with the contract")

    page_list = sorted(pages if pages is not None else contract.bucket)
    step_list = list(steps if steps is not None else range(contract.total_steps + 1))

    non_abort: set[EnclaveObservable] = set()
    aborts_consistent = True
    distinguishing = None
    strategies = 1  # honest
    for sched in schedules:
        non_abort.add(observable_for(sched, contract, OsStrategy.honest(), policy))

    for page in page_list:
        for step in step_list:
            strategies += 1
            strategy = OsStrategy.steal(page, step)
            per_secret = [
                observable_for(sched, contract, strategy, policy)
                for sched in schedules
            ]
            if page == contract.reserved_page:
                if len(set(per_secret)) != 1:
                    aborts_consistent = False
                continue
            for i, obs in enumerate(per_secret):
                if distinguishing is None and obs != per_secret[0]:
                    distinguishing = (
                        page, step,
                        tuple(sorted(secret_list[0].items())),
                        tuple(sorted(secret_list[i].items())),
                    )
                non_abort.add(obs)

    return SweepReport(
        policy=policy,
        secrets_checked=len(secret_list),
        strategies_checked=strategies,
        observable_classes=len(non_abort),
        aborts_consistent=aborts_consistent,
        indistinguishable=len(non_abort) <= 1 and aborts_consistent,
        distinguishing=distinguishing,
    )
