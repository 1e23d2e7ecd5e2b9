"""Command-line front end.

Subcommands: parse, analyze, transform, simulate, verify, leak, attack,
contract, corpus.  Exit codes: 0 ok, 1 assertion failure, 2 usage error,
3 internal error.  All sampled work is driven by --seed, and reports are
emitted with stable ordering, so identical invocations produce identical
bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .contract import (
    FAKE_EXECUTE,
    NAIVE_TERMINATE,
    OsStrategy,
    check_contract_indistinguishability,
    derive_contract,
    run_contractual,
)
from .exectree import balance, build_execution_tree, check_balanced, tree_to_dot, tree_to_json
from .interp import AstExecutable
from .labeling import label_sensitivity
from .lang import ParseError, parse, pretty
from .layouts import build_ast_layout
from .leakage import (
    SecretDomain,
    attack_eddsa,
    attack_powm,
    quantify_leakage,
    verify_pfo,
)
from .memory import AdversaryModel, PfoError
from .ir import lower_program
from .optimize import apply_all_passes, opt_if_convert
from .reports import emit, markdown_table, to_json
from .suites import attacks_suite, contracts_suite, defenses_suite
from .transform import transform_program

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3


class CliFailure(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read_program(path: str, page_size=None):
    source = Path(path).read_text()
    return parse(source, path)


def _parse_bindings(pairs):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise CliFailure(f"expected NAME=VALUE, got {pair!r}", EXIT_USAGE)
        name, value = pair.split("=", 1)
        try:
            out[name] = int(value, 0)
        except ValueError:
            raise CliFailure(f"bad integer {value!r} for {name}", EXIT_USAGE)
    return out


def _model(args):
    if args.model == "infinite":
        return AdversaryModel.infinite_memory()
    return AdversaryModel.pigeonhole()


def cmd_parse(args) -> int:
    program = _read_program(args.program)
    labeled = label_sensitivity(program)
    doc = {
        "functions": [f.name for f in program.functions],
        "secrets": [d.name for d in program.secrets],
        "outputs": [d.name for d in program.outputs],
        "arrays": [d.name for d in program.arrays],
        "int_width": program.int_width,
        "labeling": labeled.summary(),
        "warnings": labeled.warnings,
    }
    if args.json:
        emit(to_json(doc), args.out)
    else:
        emit(pretty(program), args.out)
    for warning in labeled.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args) -> int:
    program = _read_program(args.program)
    tree = build_execution_tree(program)
    if args.balance:
        tree = balance(tree)
    doc = tree_to_json(tree)
    report = check_balanced(tree)
    doc["witness"] = None if report.balanced else {
        "kind": report.witness.kind,
        "first": list(report.witness.first),
        "second": list(report.witness.second),
    }
    if args.dot:
        Path(args.dot).write_text(tree_to_dot(tree))
    emit(to_json(doc), args.out)
    return EXIT_OK


def cmd_transform(args) -> int:
    program = _read_program(args.program)
    opts = _parse_opts(args.opt)
    if opts == ["all"]:
        build = apply_all_passes(program, args.page_size)
        rewritten = build.program
        plan = build.plan
    else:
        rewritten = program
        if "O5" in opts:
            rewritten, _ = opt_if_convert(rewritten)
        exe = transform_program(
            rewritten, args.page_size, mode=args.mux,
            readonly_elim="O1" in opts,
        )
        plan = exe.plan
    out_path = Path(args.output)
    out_path.write_text(pretty(rewritten))
    plan_doc = plan.to_json_dict()
    plan_doc["pipeline"] = {"mux": plan.mode, "opts": opts}
    plan_path = out_path.with_suffix(out_path.suffix + ".plan.json")
    plan_path.write_text(to_json(plan_doc))
    print(f"wrote {out_path} and {plan_path}", file=sys.stderr)
    return EXIT_OK


def _parse_opts(spec):
    if not spec:
        return []
    if spec == "all":
        return ["all"]
    valid = {"O1", "O2", "O3A", "O3B", "O4", "O5"}
    opts = [o.strip() for o in spec.split(",") if o.strip()]
    bad = [o for o in opts if o not in valid]
    if bad:
        raise CliFailure(f"unknown optimization(s): {', '.join(bad)}", EXIT_USAGE)
    return opts


def _runner_for(args, program):
    if args.transformed:
        exe = transform_program(program, args.page_size)
        publics = _parse_bindings(args.public)
        return exe, lambda s: exe.run(secret=s, public=publics).profile
    exe = AstExecutable(program, page_size=args.page_size or 4096)
    publics = _parse_bindings(args.public)
    return exe, lambda s: exe.run(secret=s, public=publics).profile


def cmd_simulate(args) -> int:
    program = _read_program(args.program)
    secrets = _parse_bindings(args.secret)
    publics = _parse_bindings(args.public)
    if args.transformed:
        exe = transform_program(program, args.page_size)
    else:
        exe = AstExecutable(program, page_size=args.page_size or 4096)
    result = exe.run(secret=secrets, public=publics, model=_model(args),
                     collect_trace=args.trace)
    emit(to_json(result.to_json_dict()), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    program = _read_program(args.program)
    exe, runner = _runner_for(args, program)
    domain = SecretDomain.of(program)
    if args.sample:
        inputs = domain.sample(args.sample, args.seed)
    else:
        if domain.size > args.exhaustive_limit:
            raise CliFailure(
                f"domain of {domain.size} secrets needs --sample", EXIT_USAGE
            )
        inputs = domain.exhaustive(args.exhaustive_limit)
    result = verify_pfo(runner, inputs)
    doc = {
        "oblivious": result.oblivious,
        "classes": result.classes,
        "inputs_checked": result.inputs_checked,
        "counterexample": None if result.counterexample is None else {
            "first": result.counterexample.first,
            "second": result.counterexample.second,
            "divergence_index": result.counterexample.divergence_index,
        },
    }
    emit(to_json(doc), args.out)
    return EXIT_OK if result.oblivious else EXIT_ASSERTION


def cmd_leak(args) -> int:
    program = _read_program(args.program)
    exe, runner = _runner_for(args, program)
    domain = SecretDomain.of(program)
    if args.sample:
        inputs = domain.sample(args.sample, args.seed)
    else:
        if domain.size > args.exhaustive_limit:
            raise CliFailure(
                f"domain of {domain.size} secrets needs --sample", EXIT_USAGE
            )
        inputs = domain.exhaustive(args.exhaustive_limit)
    report = quantify_leakage(runner, inputs)
    emit(to_json(report.to_json_dict()), args.out)
    return EXIT_OK


def cmd_attack(args) -> int:
    program = _read_program(args.program)
    secrets = _parse_bindings(args.secret)
    publics = _parse_bindings(args.public)
    exe = AstExecutable(program, page_size=args.page_size or 4096)
    result = exe.run(secret=secrets, public=publics)
    profile = result.profile
    if args.oracle == "eddsa":
        bits = attack_eddsa(profile)
        recovered = int("".join(map(str, bits)), 2) if bits else 0
        doc = {"oracle": "eddsa", "bits": bits, "recovered": recovered}
        truth = secrets.get("k")
        if truth is not None:
            doc["exact"] = recovered == truth
    elif args.oracle == "powm":
        pre = corpus_mod.powm_precompute_mults(args.window)
        outcome = attack_powm(profile, window=args.window, precompute_mults=pre)
        if args.window == 1:
            recovered = int("".join(map(str, outcome)), 2) if outcome else 0
            doc = {"oracle": "powm", "window": 1, "bits": outcome,
                   "recovered": recovered}
            truth = secrets.get("d")
            if truth is not None:
                doc["exact"] = recovered == truth
        else:
            doc = {
                "oracle": "powm", "window": args.window,
                "runs": list(outcome.runs), "trailing": outcome.trailing,
                "known_fraction": round(outcome.known_fraction, 4),
            }
    elif args.oracle == "table":
        doc = {"oracle": "table", "profile": profile}
    else:
        raise CliFailure(f"unknown oracle {args.oracle!r}", EXIT_USAGE)
    emit(to_json(doc), args.out)
    if "exact" in doc and not doc["exact"]:
        return EXIT_ASSERTION
    return EXIT_OK


def _parse_strategy(spec: str) -> OsStrategy:
    if spec == "honest":
        return OsStrategy.honest()
    if spec.startswith("steal:"):
        body = spec[len("steal:"):]
        if "@" not in body:
            raise CliFailure("steal strategy is steal:PAGE@STEP", EXIT_USAGE)
        page, step = body.split("@", 1)
        return OsStrategy.steal(int(page, 0), int(step, 0))
    raise CliFailure(f"unknown strategy {spec!r}", EXIT_USAGE)


def cmd_contract(args) -> int:
    program = _read_program(args.program)
    exe = AstExecutable(program, page_size=args.page_size or 4096)
    domain = SecretDomain.of(program)
    probes = list(domain.sample(3, args.seed)) or [{}]
    contract = derive_contract(exe, probes)
    policy = FAKE_EXECUTE if args.policy == "fake" else NAIVE_TERMINATE
    doc = {
        "bucket": contract.size_label,
        "bucket_pages": sorted(contract.bucket),
        "reserved_page": contract.reserved_page,
        "schedule_steps": contract.total_steps,
        "policy": policy,
    }
    ok = True
    if args.sweep:
        secrets = list(domain.sample(args.sample or 64, args.seed))
        report = check_contract_indistinguishability(exe, contract, secrets, policy)
        doc["sweep"] = report.to_json_dict()
        ok = report.indistinguishable if policy == FAKE_EXECUTE else True
    else:
        strategy = _parse_strategy(args.strategy)
        secrets = _parse_bindings(args.secret)
        _, observable = run_contractual(exe, contract, secrets, strategy, policy)
        doc["observable"] = {
            "os_visible_faults": list(observable.os_visible_faults),
            "termination_step": observable.termination_step,
            "exit_kind": observable.exit_kind,
        }
    emit(to_json(doc), args.out)
    return EXIT_OK if ok else EXIT_ASSERTION


_SUITES = {"attacks", "defenses", "contracts"}


def cmd_corpus(args) -> int:
    if args.suite not in _SUITES:
        raise CliFailure(
            f"unknown suite {args.suite!r} (choose from {sorted(_SUITES)})",
            EXIT_USAGE,
        )
    if args.suite == "attacks":
        result = attacks_suite(seed=args.seed, eddsa_samples=args.sample or 50,
                               powm_samples=(args.sample or 50) // 2)
        headers = ["Case", "Input bits", "Leakage", "%"]
        rows = [
            [r["case"], r["input_bits"], r["leakage_display"], r["percent"]]
            for r in result.rows
        ]
    elif args.suite == "defenses":
        result = defenses_suite(seed=args.seed, sample_pairs=args.sample or 100,
                                opt_all=args.opt == "all")
        headers = ["Case", "PF(vanilla)", "PF(transformed)", "Oblivious"]
        rows = [
            [r["case"], r["pf_vanilla"], r["pf_transformed"], r["oblivious"]]
            for r in result.rows
        ]
    else:
        result = contracts_suite(seed=args.seed,
                                 secrets_per_case=args.sample or 64)
        headers = ["Case", "Bucket", "Fake classes", "Naive classes"]
        rows = [
            [r["case"], r["bucket"], r["fake_classes"], r["naive_classes"]]
            for r in result.rows
        ]
    if args.json:
        emit(to_json(result.to_json_dict()), args.out)
    else:
        emit(markdown_table(headers, rows), args.out)
    return EXIT_OK if result.ok else EXIT_ASSERTION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfo",
        description="page-fault-oblivious compilation and analysis toolkit",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--page-size", type=int, default=None)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--json", action="store_true")
    common.add_argument("--out", default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common])
    p.add_argument("program")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("analyze", parents=[common])
    p.add_argument("program")
    p.add_argument("--balance", action="store_true")
    p.add_argument("--dot", default=None)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("transform", parents=[common])
    p.add_argument("program")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--mux", choices=["basic", "compacted", "auto"], default="auto")
    p.add_argument("--opt", default="")
    p.set_defaults(fn=cmd_transform)

    p = sub.add_parser("simulate", parents=[common])
    p.add_argument("--program", required=True)
    p.add_argument("--secret", action="append", default=[])
    p.add_argument("--public", action="append", default=[])
    p.add_argument("--model", choices=["pigeonhole", "infinite"],
                   default="pigeonhole")
    p.add_argument("--transformed", action="store_true")
    p.add_argument("--trace", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    for name, fn in (("verify", cmd_verify), ("leak", cmd_leak)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--program", required=True)
        p.add_argument("--public", action="append", default=[])
        p.add_argument("--transformed", action="store_true")
        p.add_argument("--sample", type=int, default=None)
        p.add_argument("--exhaustive-limit", type=int, default=1 << 20)
        p.set_defaults(fn=fn)

    p = sub.add_parser("attack", parents=[common])
    p.add_argument("--oracle", required=True, choices=["eddsa", "powm", "table"])
    p.add_argument("--program", required=True)
    p.add_argument("--secret", action="append", default=[])
    p.add_argument("--public", action="append", default=[])
    p.add_argument("--window", type=int, default=1)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("contract", parents=[common])
    p.add_argument("--program", required=True)
    p.add_argument("--policy", choices=["fake", "naive"], default="fake")
    p.add_argument("--strategy", default="honest")
    p.add_argument("--secret", action="append", default=[])
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--sample", type=int, default=None)
    p.set_defaults(fn=cmd_contract)

    p = sub.add_parser("corpus", parents=[common])
    p.add_argument("suite")
    p.add_argument("--opt", default="")
    p.add_argument("--sample", type=int, default=None)
    p.set_defaults(fn=cmd_corpus)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except CliFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except ParseError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PfoError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ASSERTION
    except Exception as e:  # pragma: no cover - internal errors
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
