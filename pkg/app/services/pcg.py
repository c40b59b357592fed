"""PCG32 (XSH-RR) random stream shared by every script of a game run."""

import math

MASK64 = (1 << 64) - 1
MASK32 = (1 << 32) - 1
PCG_MULTIPLIER = 6364136223846793005
PCG_INCREMENT = 1442695040888963407


class Pcg32:
    """Seedable 32-bit permuted congruential generator"""

    __slots__ = ("state", "inc", "draws")

    def __init__(self, seed: int = 0, increment: int = PCG_INCREMENT):
        self.state = 0
        self.inc = increment | 1
        self.draws = 0
        self._advance()
        self.state = (self.state + (seed & MASK64)) & MASK64
        self._advance()

    def _advance(self) -> None:
        self.state = (self.state * PCG_MULTIPLIER + self.inc) & MASK64

    def next_u32(self) -> int:
        old = self.state
        self._advance()
        self.draws += 1
        xorshifted = (((old >> 18) ^ old) >> 27) & MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & MASK32

    def random_float(self) -> float:
        """Uniform in [0, 1)"""
        return self.next_u32() / 4294967296.0

    def randint(self, lo: int, hi: int) -> int:
        """Inclusive integer draw consuming exactly one value"""
        return lo + math.floor(self.random_float() * (hi - lo + 1))

    def copy(self) -> "Pcg32":
        twin = Pcg32.__new__(Pcg32)
        twin.state = self.state
        twin.inc = self.inc
        twin.draws = self.draws
        return twin

    def get_state(self) -> dict:
        return {"state": self.state, "inc": self.inc, "draws": self.draws}
