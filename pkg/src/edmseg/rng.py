"""xoshiro256** generator used for every seeded shuffle in the package.

The generator is implemented in pure Python so that selections, splits and
epoch orders are reproducible across platforms and numpy versions. State is
seeded from a 64-bit integer through SplitMix64, following the reference
recommendation of the xoshiro authors.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(state):
    """Advance a SplitMix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** 1.0 with a few convenience draws.

    Parameters
    ----------
    seed : int
        Unsigned 64-bit seed. Values outside the range are reduced mod 2**64.
    """

    def __init__(self, seed=0):
        sm = seed & MASK64
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self.s = words

    @classmethod
    def from_state(cls, words):
        words = [int(w) & MASK64 for w in words]
        if len(words) != 4 or not any(words):
            raise ValueError("xoshiro256 state must be four words, not all zero")
        rng = cls.__new__(cls)
        rng.s = words
        return rng

    @property
    def state(self):
        return list(self.s)

    def next_u64(self):
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def below(self, n):
        """Uniform integer in ``[0, n)`` (Lemire's multiply-and-reject)."""
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = ((1 << 64) - n) % n
        while True:
            m = self.next_u64() * n
            if (m & MASK64) >= threshold:
                return m >> 64

    def random(self):
        """Uniform float in ``[0, 1)`` with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle (descending index form)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def fork(self):
        """A child generator seeded from the next output of this one."""
        return Xoshiro256(self.next_u64())
