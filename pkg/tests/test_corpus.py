import random
from pathlib import Path

import pytest

from pfo.corpus import (
    ECC_MODULUS,
    FOO_SOURCE,
    eddsa_reference,
    eddsa_source,
    load_cases,
    make_table_cases,
    powm_balanced_source,
    powm_reference,
    powm_source,
    table_reference,
    write_corpus,
)
from pfo.interp import AstExecutable
from pfo.lang import parse
from pfo.leakage import SecretDomain, verify_pfo
from pfo.memory import page_of
from pfo.optimize import build_inplace, opt_if_convert, opt_mux_elim
from pfo.transform import transform_program

RNG = random.Random(20240810)


class TestTableCases:
    @pytest.mark.parametrize("name", sorted(make_table_cases()))
    def test_semantics_match_reference(self, name):
        case = make_table_cases()[name]
        exe = AstExecutable(parse(case.source()))
        for _ in range(10):
            k = RNG.randrange(1 << case.key_bits)
            p = RNG.randrange(1 << case.key_bits)
            out = exe.run(secret={"k": k}, public={"p": p}).outputs["y"]
            assert out == table_reference(case, k, p)

    def test_aes_split_geometry(self):
        # the 0x1C boundary: entry 0x1B on the low page, 0x1C on the next
        case = make_table_cases()["aes"]
        exe = AstExecutable(parse(case.source()))
        layout = exe.layout
        assert page_of(layout, "table1", 4 * 0x1B) == 1
        assert page_of(layout, "table1", 4 * 0x1C) == 2
        assert page_of(layout, "table3", 4 * 0x1B) == 2
        assert page_of(layout, "table3", 4 * 0x1C) == 3

    def test_split_ratios_encoded(self):
        for name, split in (
            ("cast_gcrypt", 97), ("cast_openssl", 141),
            ("seed_gcrypt", 225), ("seed_openssl", 120),
            ("stribog", 131), ("tiger", 136), ("whirlpool", 115),
        ):
            case = make_table_cases()[name]
            assert case.tables[0].split == split

    def test_vanilla_leaks(self):
        case = make_table_cases()["aes"]
        exe = AstExecutable(parse(case.source(key_bytes=1)))
        run = lambda s: exe.run(secret=s, public={"p": 0}).profile
        result = verify_pfo(run, SecretDomain.of(exe.program).exhaustive())
        assert not result.oblivious

    @pytest.mark.parametrize("name", sorted(make_table_cases()))
    def test_transformed_oblivious_sampled(self, name):
        case = make_table_cases()[name]
        exe = transform_program(parse(case.source()))
        profiles = set()
        for _ in range(25):
            k = RNG.randrange(1 << case.key_bits)
            profiles.add(tuple(exe.run(secret={"k": k}, public={"p": 0}).profile))
        assert len(profiles) == 1


class TestEddsaCase:
    def test_semantics(self):
        exe = AstExecutable(parse(eddsa_source(32)))
        for _ in range(8):
            k = RNG.randrange(1 << 32)
            assert exe.run(secret={"k": k}).outputs["rx"] == eddsa_reference(k)

    def test_profile_shows_regex_structure(self):
        # one-bit iterations carry the addition-routine page alternation
        # after the [P1 P2 P1 P3 P1] double-and-test pattern
        exe = AstExecutable(parse(eddsa_source(4)))
        profile = exe.run(secret={"k": 0b1000}).profile
        assert profile[:6] == [1, 2, 1, 3, 1, 2]
        flat = ",".join(map(str, profile))
        assert "2,1,2,1,2,1" in flat          # (P2 P1)+ for the one bit
        zero_iter = ",".join(map(str, exe.run(secret={"k": 0}).profile))
        assert "2,1,2,1,2,1" not in zero_iter  # absent for all-zero scalar

    def test_o5_defense_oblivious_and_correct(self):
        program, report = opt_if_convert(parse(eddsa_source(16)))
        assert report.converted == 1
        exe = AstExecutable(program)
        vanilla = AstExecutable(parse(eddsa_source(16)))
        profiles = set()
        for k in [0, 1, 0xFFFF, 0x8000] + [RNG.randrange(1 << 16) for _ in range(20)]:
            r = exe.run(secret={"k": k})
            assert r.outputs == vanilla.run(secret={"k": k}).outputs
            profiles.add(tuple(r.profile))
        assert len(profiles) == 1


class TestPowmCases:
    def test_sliding_window_semantics(self):
        for width, window in ((10, 1), (16, 2), (32, 4)):
            exe = AstExecutable(parse(powm_source(width, window)))
            for _ in range(8):
                d = RNG.randrange(1 << width)
                out = exe.run(secret={"d": d}).outputs["a_out"]
                assert out == powm_reference(d), (width, window, d)

    def test_balanced_semantics(self):
        exe = AstExecutable(parse(powm_balanced_source(24)))
        for _ in range(8):
            d = RNG.randrange(1 << 24)
            assert exe.run(secret={"d": d}).outputs["a_out"] == powm_reference(d)

    def test_balanced_constant_steps(self):
        exe = AstExecutable(parse(powm_balanced_source(16)))
        steps = {exe.run(secret={"d": d}).steps for d in (0, 1, 0xFFFF, 0x8001)}
        assert len(steps) == 1

    def test_balanced_vanilla_leaks_pages(self):
        exe = AstExecutable(parse(powm_balanced_source(8)))
        run = lambda s: exe.run(secret=s).profile
        result = verify_pfo(run, SecretDomain.of(exe.program).exhaustive())
        assert not result.oblivious

    def test_o4_defense_oblivious(self):
        program = parse(powm_balanced_source(16))
        build, report = opt_mux_elim(program)
        assert report.succeeded
        grouped = next(g for g in report.groups if "mul_mod" in g)
        assert "mul_mod_dummy" in grouped
        profiles = set()
        vanilla = AstExecutable(program)
        for d in [0, 1, 0xFFFF] + [RNG.randrange(1 << 16) for _ in range(20)]:
            r = build.run(secret={"d": d})
            assert r.outputs == vanilla.run(secret={"d": d}).outputs
            profiles.add(tuple(r.profile))
        assert len(profiles) == 1
        sample = build.run(secret={"d": 5})
        assert sample.copy_ops == 0 and sample.code_copy_ops == 0


class TestCorpusFiles:
    def test_write_and_reparse(self, tmp_path):
        written = write_corpus(tmp_path)
        assert len(written) >= 11
        for path in written:
            program = parse(path.read_text(), str(path))
            assert program.entry is not None

    def test_checked_in_corpus_matches_generators(self):
        corpus_dir = Path(__file__).resolve().parent.parent / "corpus"
        assert corpus_dir.is_dir(), "corpus/ directory missing"
        cases = load_cases()
        for name, case in cases.items():
            on_disk = (corpus_dir / f"{name}.pfo").read_text()
            assert on_disk == case.source, f"{name}.pfo out of date"
        assert (corpus_dir / "powm_sw.pfo").read_text() == \
               cases["powm"].meta["attack_source"]

    def test_case_table_lists_expected_names(self):
        names = set(load_cases())
        assert names == {
            "aes", "cast_gcrypt", "cast_openssl", "seed_gcrypt", "seed_openssl",
            "stribog", "tiger", "whirlpool", "eddsa", "powm", "foo",
        }


class TestEddsaFullSize:
    def test_analysis_counts(self):
        from pfo.corpus import EDDSA_FULL_ANALYSIS, eddsa_full_source
        from pfo.labeling import label_sensitivity

        summary = label_sensitivity(parse(eddsa_full_source())).summary()
        for key, value in EDDSA_FULL_ANALYSIS.items():
            assert summary[key] == value, (key, summary)

    def test_staged_build_mux_accesses_and_pages(self):
        from pfo.corpus import (
            EDDSA_FULL_MUX_ACCESSES,
            EDDSA_FULL_STAGING_PAGES,
            eddsa_full_source,
        )
        from pfo.optimize import build_staged, opt_if_convert

        program, report = opt_if_convert(parse(eddsa_full_source()))
        assert report.converted == 1
        build = build_staged(program, 4096)
        assert len(build.plan.staging.pages()) == EDDSA_FULL_STAGING_PAGES
        r1 = build.run(secret={"k": 3})
        r2 = build.run(secret={"k": (1 << 511) | 1})
        assert r1.mux_accesses == r2.mux_accesses == EDDSA_FULL_MUX_ACCESSES
        assert r1.profile == r2.profile

    def test_full_size_semantics(self):
        from pfo.corpus import eddsa_full_source

        exe = AstExecutable(parse(eddsa_full_source()))
        k = RNG.randrange(1 << 512)
        assert exe.run(secret={"k": k}).outputs["rx"] == eddsa_reference(k)
