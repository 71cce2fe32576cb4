"""Canonical-signed-digit (non-adjacent form) arithmetic for INT8 values.

Digits are stored LSB-first (index 0 weighs 2^0). Rendered strings are
MSB-first with `1`, `0`, `N` (for -1) and an underscore between nibbles,
e.g. -67 <-> "0N00_0N01".
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from enum import Enum

DIGITS = 8
INT8_MIN = -128
INT8_MAX = 127

_MAX_THRESHOLD = 2


@dataclass(frozen=True)
class CsdWord:
    """An 8-digit ternary word with no two adjacent non-zero digits."""

    digits: tuple[int, ...]

    def __post_init__(self):
        if len(self.digits) != DIGITS:
            raise ValueError(f"expected {DIGITS} digits, got {len(self.digits)}")
        for d in self.digits:
            if d not in (-1, 0, 1):
                raise ValueError(f"digit {d} not in {{-1,0,1}}")
        for i in range(DIGITS - 1):
            if self.digits[i] != 0 and self.digits[i + 1] != 0:
                raise ValueError("adjacent non-zero digits")
        v = self.value
        if not INT8_MIN <= v <= INT8_MAX:
            raise ValueError(f"decoded value {v} outside INT8 range")

    @property
    def value(self) -> int:
        return sum(d << i for i, d in enumerate(self.digits))

    @property
    def nonzero_count(self) -> int:
        return sum(1 for d in self.digits if d != 0)

    def render(self) -> str:
        chars = {1: "1", 0: "0", -1: "N"}
        msb_first = [chars[d] for d in reversed(self.digits)]
        return "".join(msb_first[:4]) + "_" + "".join(msb_first[4:])

    @classmethod
    def parse(cls, text: str) -> "CsdWord":
        stripped = text.replace("_", "")
        if len(stripped) != DIGITS:
            raise ValueError(f"expected {DIGITS} digit characters in {text!r}")
        vals = {"1": 1, "0": 0, "N": -1}
        try:
            msb_first = [vals[c] for c in stripped]
        except KeyError as exc:
            raise ValueError(f"bad digit character {exc.args[0]!r}") from exc
        return cls(tuple(reversed(msb_first)))


class BlockKind(Enum):
    ZERO = "zero"
    COMP = "comp"


@dataclass(frozen=True)
class DyadicBlock:
    """One 2-digit slice of a CsdWord; block b covers digits 2b+1 and 2b.

    Non-adjacency forces at most one non-zero digit per block, so a block
    is either all-zero or a complementary pattern worth sign * 2^(2b + q),
    where q = 1 iff the high digit (2b+1) is the non-zero one.
    """

    index: int
    kind: BlockKind
    q: int = 0
    sign: int = 1

    def decode(self) -> int:
        if self.kind is BlockKind.ZERO:
            return 0
        return self.sign * (1 << (2 * self.index + self.q))


@dataclass(frozen=True)
class QueryTable:
    """All INT8 values whose CSD encoding has exactly `phi_th` non-zero digits."""

    phi_th: int
    members: tuple[int, ...]


def to_csd(v: int) -> CsdWord:
    """Encode an INT8 value into its unique non-adjacent form.

    Uses the mod-4 recurrence: an odd remainder picks the digit 2 - (v mod 4),
    which is +1 or -1 and guarantees the next digit is zero.
    """
    if not INT8_MIN <= v <= INT8_MAX:
        raise ValueError(f"{v} outside INT8 range")
    digits = [0] * DIGITS
    x = v
    i = 0
    while x != 0:
        if x & 1:
            d = 2 - (x & 3)
            digits[i] = d
            x -= d
        x //= 2
        i += 1
    return CsdWord(tuple(digits))


def from_csd(w: CsdWord) -> int:
    return w.value


def count_nonzero(w: CsdWord) -> int:
    return w.nonzero_count


def to_blocks(w: CsdWord) -> tuple[DyadicBlock, ...]:
    """Split a word into its four dyadic blocks (block 0 = digits 1..0)."""
    blocks = []
    for b in range(DIGITS // 2):
        low = w.digits[2 * b]
        high = w.digits[2 * b + 1]
        if low == 0 and high == 0:
            blocks.append(DyadicBlock(index=b, kind=BlockKind.ZERO))
        elif high != 0:
            blocks.append(DyadicBlock(index=b, kind=BlockKind.COMP, q=1, sign=high))
        else:
            blocks.append(DyadicBlock(index=b, kind=BlockKind.COMP, q=0, sign=low))
    return tuple(blocks)


@functools.lru_cache(maxsize=None)
def query_table(phi_th: int) -> QueryTable:
    """Level set of the non-zero-count function over [-128, 127].

    Thresholds above 2 are rejected: the approximation scheme caps the
    per-filter digit budget at 2 so metadata stays within 8 bits per weight.
    """
    if phi_th not in (0, 1, _MAX_THRESHOLD):
        raise ValueError(f"threshold {phi_th} not in {{0, 1, 2}}")
    members = tuple(
        v for v in range(INT8_MIN, INT8_MAX + 1) if to_csd(v).nonzero_count == phi_th
    )
    return QueryTable(phi_th=phi_th, members=members)


@functools.lru_cache(maxsize=None)
def nonzero_count_table() -> tuple[int, ...]:
    """count_nonzero(to_csd(v)) for v = -128..127, indexed by v & 0xFF."""
    table = [0] * 256
    for v in range(INT8_MIN, INT8_MAX + 1):
        table[v & 0xFF] = to_csd(v).nonzero_count
    return tuple(table)


@functools.lru_cache(maxsize=None)
def comp_block_table() -> tuple[tuple[tuple[int, int, int], ...], ...]:
    """Comp-pattern blocks (q, sign_bit, index) per INT8 value, indexed by v & 0xFF.

    sign_bit is 1 for a negative digit, matching the stored metadata layout.
    """
    table: list[tuple[tuple[int, int, int], ...]] = [()] * 256
    for v in range(INT8_MIN, INT8_MAX + 1):
        blocks = []
        for blk in to_blocks(to_csd(v)):
            if blk.kind is BlockKind.COMP:
                blocks.append((blk.q, 1 if blk.sign < 0 else 0, blk.index))
        table[v & 0xFF] = tuple(blocks)
    return tuple(table)
