import random

import pytest

from pfo.contract import (
    FAKE_EXECUTE,
    NAIVE_TERMINATE,
    Contract,
    ContractError,
    OsStrategy,
    access_schedule,
    check_contract_indistinguishability,
    derive_contract,
    run_contractual,
    steal_many,
)
from pfo.corpus import make_table_cases, powm_balanced_source
from pfo.interp import AstExecutable
from pfo.lang import parse

RNG = random.Random(7)


def aes_exe(key_bits=16):
    case = make_table_cases()["aes"]
    return AstExecutable(parse(case.source(key_bytes=key_bits // 8)))


def aes_probes(key_bits=16):
    return [{"k": 0}, {"k": (1 << key_bits) - 1}, {"k": 0x1A3E & ((1 << key_bits) - 1)}]


class TestDeriveContract:
    def test_aes_bucket_three_plus_three(self):
        exe = aes_exe()
        contract = derive_contract(exe, aes_probes())
        assert contract.size == (3, 3)
        assert contract.size_label == "3 + 3"

    def test_powm_bucket_twentyone_plus_one(self):
        exe = AstExecutable(parse(powm_balanced_source(12)))
        contract = derive_contract(exe, [{"d": 0}, {"d": 4095}, {"d": 0x5A5}])
        assert contract.size == (21, 1)
        assert contract.size_label == "21 + 1"

    def test_single_page_program(self):
        exe = AstExecutable(parse("""
        output int y;
        fn main() { y = 7; }
        """))
        contract = derive_contract(exe, [{}])
        assert len(contract.code_pages) == 1
        assert contract.data_pages == frozenset()
        assert contract.reserved_page not in contract.code_pages

    def test_unbalanced_program_rejected(self):
        exe = AstExecutable(parse("""
        secret int<4> s;
        output int y;
        fn main() {
          y = 0;
          while (s != 0) bound 4 {
            y = y + 1;
            s = s >> 1;
          }
        }
        """))
        with pytest.raises(ContractError, match="not balanced"):
            derive_contract(exe, [{"s": 0}, {"s": 15}])

    def test_reserved_page_in_bucket(self):
        exe = aes_exe()
        contract = derive_contract(exe, aes_probes())
        assert contract.reserved_page in contract.bucket


class TestRunContractual:
    def test_honest_run_no_faults_full_schedule(self):
        exe = aes_exe()
        contract = derive_contract(exe, aes_probes())
        result, obs = run_contractual(
            exe, contract, {"k": 0x1A3E}, OsStrategy.honest(), FAKE_EXECUTE
        )
        assert obs.os_visible_faults == ()
        assert obs.termination_step == contract.total_steps
        assert obs.exit_kind == "normal"
        assert result.outputs == exe.run(secret={"k": 0x1A3E}).outputs

    def test_steal_with_fake_execution_matches_honest(self):
        exe = aes_exe()
        contract = derive_contract(exe, aes_probes())
        _, honest = run_contractual(
            exe, contract, {"k": 0x2B}, OsStrategy.honest(), FAKE_EXECUTE
        )
        mid = contract.total_steps // 2
        for page in sorted(contract.bucket - {contract.reserved_page}):
            _, stolen = run_contractual(
                exe, contract, {"k": 0x2B}, OsStrategy.steal(page, mid), FAKE_EXECUTE
            )
            assert stolen == honest

    def test_naive_termination_is_an_oracle(self):
        # One secret never touches the stolen page, the other does: the
        # abrupt-termination times differ, advantage 1.
        exe = aes_exe(key_bits=8)
        contract = derive_contract(exe, [{"k": 0}, {"k": 255}])
        low_page = 1  # table1 low side: indexes below 0x1C
        i_low = {"k": 0x1A}   # first lookup lands on the low page
        i_high = {"k": 0xF0}  # never touches it
        _, obs_low = run_contractual(
            exe, contract, i_low, OsStrategy.steal(low_page, 0), NAIVE_TERMINATE
        )
        _, obs_high = run_contractual(
            exe, contract, i_high, OsStrategy.steal(low_page, 0), NAIVE_TERMINATE
        )
        assert obs_low.termination_step < contract.total_steps
        assert obs_high.termination_step == contract.total_steps
        assert obs_low != obs_high

    def test_stealing_reserved_page_aborts_on_entry(self):
        exe = aes_exe()
        contract = derive_contract(exe, aes_probes())
        _, obs = run_contractual(
            exe, contract, {"k": 1}, OsStrategy.steal(contract.reserved_page, 5),
            FAKE_EXECUTE,
        )
        assert obs.exit_kind == "abort-on-entry"
        assert obs.termination_step == 5
        assert obs.os_visible_faults == ()

    def test_steal_always_succeeds_any_page_any_step(self):
        exe = aes_exe()
        contract = derive_contract(exe, aes_probes())
        for page in sorted(contract.bucket):
            for step in (0, contract.total_steps):
                run_contractual(exe, contract, {"k": 9},
                                OsStrategy.steal(page, step), FAKE_EXECUTE)

    def test_steal_many_composes_single_steals(self):
        exe = aes_exe()
        contract = derive_contract(exe, aes_probes())
        steals = [(page, 3) for page in sorted(contract.data_pages)]
        observables = steal_many(exe, contract, {"k": 77}, steals, FAKE_EXECUTE)
        assert len(observables) == len(steals)
        assert len(set(observables)) == 1


class TestIndistinguishabilitySweep:
    def test_fake_execution_single_class(self):
        exe = aes_exe(key_bits=8)
        contract = derive_contract(exe, [{"k": 0}, {"k": 255}])
        secrets = [{"k": v} for v in range(0, 256, 5)]
        report = check_contract_indistinguishability(
            exe, contract, secrets, FAKE_EXECUTE
        )
        assert report.indistinguishable
        assert report.observable_classes == 1
        assert report.aborts_consistent

    def test_naive_termination_at_least_two_classes(self):
        exe = aes_exe(key_bits=8)
        contract = derive_contract(exe, [{"k": 0}, {"k": 255}])
        secrets = [{"k": v} for v in range(0, 256, 5)]
        report = check_contract_indistinguishability(
            exe, contract, secrets, NAIVE_TERMINATE
        )
        assert not report.indistinguishable
        assert report.observable_classes >= 2
        assert report.distinguishing is not None
        page, step, s0, s1 = report.distinguishing
        assert page in contract.bucket

    def test_zero_length_region_single_class(self):
        exe = AstExecutable(parse("""
        output int y;
        fn main() { y = 1; }
        """))
        contract = derive_contract(exe, [{}])
        report = check_contract_indistinguishability(
            exe, contract, [{}], FAKE_EXECUTE
        )
        assert report.indistinguishable
