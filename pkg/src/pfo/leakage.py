"""Leakage verification and quantification over the page-fault channel.

The simulator is deterministic, so distinguishability is exact: two
secrets are distinguishable iff their fault profiles differ, and a
program is oblivious over a domain iff every enumerated secret lands in
one profile class.  Leakage is reported three ways:

* mutual information between the secret and the observed profile,
  ``sum_c (|c|/N) * log2(N/|c|)`` over profile classes `c`;
* max-leakage, ``log2(N / min_c |c|)``: the bits revealed about the
  worst-case (smallest) class;
* per-class knowledge gain, ``log2(N) - log2(|c|)``: how far an observed
  profile narrows the initial choice set.  For a run of independent
  observations this composes additively (`LeakageReport.power`).
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .lang import DeclKind, Program
from .memory import PfoError

Profile = tuple[int, ...]
Runner = Callable[[dict[str, int]], Profile]

DEFAULT_EXHAUSTIVE_LIMIT = 1 << 20


class DomainError(PfoError):
    pass


@dataclass(frozen=True)
class SecretDomain:
    """Enumeration order for a program's secret inputs."""

    names: tuple[str, ...]
    widths: tuple[int, ...]

    @staticmethod
    def of(program: Program) -> "SecretDomain":
        secrets = [d for d in program.decls if d.kind == DeclKind.SECRET]
        return SecretDomain(
            tuple(d.name for d in secrets),
            tuple(d.width or 64 for d in secrets),
        )

    @property
    def size(self) -> int:
        total = 1
        for w in self.widths:
            total <<= w
        return total

    def exhaustive(self, limit: int = DEFAULT_EXHAUSTIVE_LIMIT) -> Iterable[dict[str, int]]:
        if self.size > limit:
            raise DomainError(
                f"domain of {self.size} secrets exceeds the exhaustive limit "
                f"{limit}; use sampling"
            )
        ranges = [range(1 << w) for w in self.widths]
        for values in itertools.product(*ranges):
            yield dict(zip(self.names, values))

    def sample(self, count: int, seed: int) -> Iterable[dict[str, int]]:
        rng = random.Random(seed)
        for _ in range(count):
            yield {
                name: rng.randrange(1 << width)
                for name, width in zip(self.names, self.widths)
            }

    def key(self, secret: dict[str, int]) -> tuple[int, ...]:
        return tuple(secret[n] for n in self.names)


@dataclass(frozen=True)
class Counterexample:
    first: dict[str, int]
    second: dict[str, int]
    divergence_index: int


@dataclass(frozen=True)
class VerifyResult:
    oblivious: bool
    classes: int
    inputs_checked: int
    counterexample: Optional[Counterexample] = None


def _first_divergence(a: Profile, b: Profile) -> int:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return min(len(a), len(b))


def verify_pfo(runner: Runner, inputs: Iterable[dict[str, int]]) -> VerifyResult:
    """Single-profile-class check over enumerated inputs.

    The counterexample, when present, is the lexicographically first pair:
    the first enumerated input versus the first input whose profile
    diverges from it.
    """
    base_input = None
    base_profile: Optional[Profile] = None
    profiles: set[Profile] = set()
    checked = 0
    counterexample = None
    for secret in inputs:
        checked += 1
        profile = tuple(runner(secret))
        profiles.add(profile)
        if base_profile is None:
            base_input = dict(secret)
            base_profile = profile
        elif counterexample is None and profile != base_profile:
            counterexample = Counterexample(
                base_input, dict(secret), _first_divergence(base_profile, profile)
            )
    return VerifyResult(
        oblivious=len(profiles) <= 1,
        classes=len(profiles),
        inputs_checked=checked,
        counterexample=counterexample,
    )


@dataclass
class LeakageReport:
    domain_size: int
    class_sizes: dict[Profile, int]
    class_examples: dict[Profile, dict[str, int]]
    mutual_information: float
    max_leakage: float

    @property
    def classes(self) -> int:
        return len(self.class_sizes)

    def class_bits(self, profile: Profile) -> float:
        """Knowledge gain of observing this profile: log2(N / |class|)."""
        return math.log2(self.domain_size / self.class_sizes[profile])

    def power(self, n: int) -> "ComposedLeakage":
        """Leakage of `n` independent repetitions of this observation."""
        return ComposedLeakage(self, n)

    def to_json_dict(self) -> dict:
        ordered = sorted(self.class_sizes.items(), key=lambda kv: (kv[1], kv[0]))
        return {
            "domain_size": self.domain_size,
            "classes": self.classes,
            "mutual_information_bits": round(self.mutual_information, 6),
            "max_leakage_bits": round(self.max_leakage, 6),
            "class_sizes": [
                {"size": size, "bits": round(self.class_bits(p), 6)}
                for p, size in ordered
            ],
        }


@dataclass(frozen=True)
class ComposedLeakage:
    base: LeakageReport
    repetitions: int

    @property
    def domain_size(self) -> int:
        return self.base.domain_size ** self.repetitions

    @property
    def mutual_information(self) -> float:
        return self.base.mutual_information * self.repetitions

    def uniform_class_bits(self, profile: Profile) -> float:
        """Bits revealed when all repetitions land in one base class."""
        return self.base.class_bits(profile) * self.repetitions


def quantify_leakage(runner: Runner, inputs: Iterable[dict[str, int]]) -> LeakageReport:
    """Partition inputs by profile and compute the leakage measures."""
    sizes: dict[Profile, int] = {}
    examples: dict[Profile, dict[str, int]] = {}
    total = 0
    for secret in inputs:
        total += 1
        profile = tuple(runner(secret))
        sizes[profile] = sizes.get(profile, 0) + 1
        examples.setdefault(profile, dict(secret))
    if total == 0:
        raise DomainError("empty input domain")
    mi = 0.0
    for count in sizes.values():
        mi += (count / total) * math.log2(total / count)
    max_leak = math.log2(total / min(sizes.values()))
    return LeakageReport(total, sizes, examples, mi, max_leak)


def distinguishability_advantage(runner: Runner, i0: dict[str, int],
                                 i1: dict[str, int]) -> int:
    """Def-2-style experiment: exact advantage, 0 iff the profiles match."""
    return 0 if tuple(runner(i0)) == tuple(runner(i1)) else 1


# --- table-lookup narrowing oracle -----------------------------------------

@dataclass(frozen=True)
class TableSplit:
    """A lookup table split across a page boundary at `split` entries."""

    entries: int
    split: int  # entries below this index sit on the low page

    def candidates(self, observed_low: bool) -> frozenset[int]:
        if self.split <= 0 or self.split >= self.entries:
            return frozenset(range(self.entries))  # no split, no narrowing
        if observed_low:
            return frozenset(range(self.split))
        return frozenset(range(self.split, self.entries))


def narrow_candidates(split: TableSplit, observations: Iterable[tuple[int, bool]],
                      ) -> frozenset[int]:
    """Adaptive chosen-plaintext narrowing for one key byte.

    Each observation pairs the chosen plaintext byte with whether the
    (key XOR plaintext) lookup landed on the low page; candidates are key
    bytes consistent with every observation.
    """
    candidates = set(range(split.entries))
    for plaintext, low in observations:
        allowed = split.candidates(low)
        candidates = {k for k in candidates if (k ^ plaintext) in allowed}
    return frozenset(candidates)


def attack_table(observe: Callable[[int], list[bool]], splits: list[TableSplit],
                 plaintexts: Iterable[int]) -> list[frozenset[int]]:
    """Chosen-plaintext attack over per-byte split-table lookups.

    `observe(plaintext)` runs the victim with every key byte XORed against
    `plaintext` and reports, per lookup, whether the access hit the low
    page.  Returns the candidate set per byte after all plaintexts.
    """
    observations: list[list[tuple[int, bool]]] = [[] for _ in splits]
    for pt in plaintexts:
        lows = observe(pt)
        if len(lows) != len(splits):
            raise PfoError(
                f"expected {len(splits)} lookups, observed {len(lows)}"
            )
        for i, low in enumerate(lows):
            observations[i].append((pt, low))
    return [
        narrow_candidates(split, obs) for split, obs in zip(splits, observations)
    ]


# --- scalar-multiplication bit recovery -----------------------------------

@dataclass(frozen=True)
class ProfileParseError(PfoError):
    message: str
    offset: int

    def __str__(self):
        return f"{self.message} (at profile offset {self.offset})"


def attack_eddsa(profile: Iterable[int], main_page: int = 1, add_page: int = 2,
                 test_page: int = 3) -> list[int]:
    """Recover the scalar from a vanilla double-and-add fault profile.

    Per loop iteration the profile shows `[P2 P1 P3 P1]` (double, bit
    test); a one-bit appends the addition routine's `(P2 P1)` page
    alternation before the next iteration's doubling, which is recognized
    by its following `P3`.  Bits come out most significant first.
    """
    p1, p2, p3 = main_page, add_page, test_page
    tokens = [p for p in profile if p in (p1, p2, p3)]
    pos = 0
    if tokens[:1] == [p1]:
        pos = 1  # cold-start fault on the loop body's page
    bits: list[int] = []
    n = len(tokens)
    while pos < n:
        if tokens[pos:pos + 4] != [p2, p1, p3, p1]:
            raise ProfileParseError(
                f"expected doubling/bit-test pattern [{p2},{p1},{p3},{p1}]", pos
            )
        pos += 4
        pairs = 0
        while (
            pos + 1 < n
            and tokens[pos] == p2
            and tokens[pos + 1] == p1
            and tokens[pos + 2:pos + 3] != [p3]
        ):
            pairs += 1
            pos += 2
        if pairs == 0:
            bits.append(0)
        elif pairs == 3:
            bits.append(1)
        else:
            raise ProfileParseError(
                f"unexpected addition alternation length {pairs}", pos
            )
    return bits


# --- windowed-exponentiation recovery ------------------------------------

@dataclass(frozen=True)
class PowmSkeleton:
    """Squaring-run structure of one windowed-exponentiation trace."""

    runs: tuple[int, ...]      # squarings before each power fetch
    trailing: int              # squarings after the last fetch
    window: int

    @property
    def total_bits(self) -> int:
        return sum(self.runs) + self.trailing

    def determined_bits(self) -> list[Optional[int]]:
        """Bit values fixed by the skeleton alone (None where ambiguous).

        Each run of `r` squarings consumes `r` bits ending in a 1 (window
        values are odd); at least `r - w` leading bits must be zeros.
        """
        out: list[Optional[int]] = []
        for r in self.runs:
            known_zeros = max(r - self.window, 0)
            out.extend([0] * known_zeros)
            out.extend([None] * (r - known_zeros - 1))
            out.append(1)
        out.extend([0] * self.trailing)
        return out

    @property
    def known_fraction(self) -> float:
        bits = self.determined_bits()
        if not bits:
            return 1.0
        return sum(1 for b in bits if b is not None) / len(bits)


def attack_powm(profile: Iterable[int], window: int = 1, mul_page: int = 2,
                sel_page: int = 3, precompute_mults: int = 0):
    """Recover exponent structure from a windowed-exponentiation profile.

    Multiply-routine visits between power-fetch visits split into
    squarings and the per-window outer multiply; with window size 1 the
    squaring-run lengths give the exact exponent (most significant bit
    first), otherwise the window skeleton and the fraction of bits it
    pins down.
    """
    tokens = [p for p in profile if p in (mul_page, sel_page)]
    if precompute_mults:
        prefix = tokens[:precompute_mults]
        if prefix != [mul_page] * precompute_mults:
            raise ProfileParseError(
                f"expected {precompute_mults} power-table multiplies first", 0
            )
        tokens = tokens[precompute_mults:]
    runs: list[int] = []
    count = 0
    first_segment = True
    for tok in tokens:
        if tok == mul_page:
            count += 1
        else:
            # a fetch: everything before it in this segment was squarings,
            # except the previous window's outer multiply
            if first_segment:
                runs.append(count)
                first_segment = False
            else:
                if count < 1:
                    raise ProfileParseError("missing outer multiply", 0)
                runs.append(count - 1)
            count = 0
    if first_segment:
        trailing = count  # no fetch at all: the exponent is all zeros
    else:
        if count < 1:
            raise ProfileParseError("missing final outer multiply", 0)
        trailing = count - 1
    skeleton = PowmSkeleton(tuple(runs), trailing, window)
    if window == 1:
        bits = skeleton.determined_bits()
        assert all(b is not None for b in bits)
        return bits
    return skeleton
