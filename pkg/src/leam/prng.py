"""Deterministic pseudo-random numbers: xoshiro256** seeded through splitmix64.

Used wherever results must be bit-reproducible across platforms and numpy
versions (weight init, random occlusion masks, pair sampling).
"""
import hashlib
import math

_MASK = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


def splitmix64(state):
    """Return ``(next_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def stable_hash(*parts):
    """64-bit hash of the string forms of ``parts``; stable across runs."""
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


class Xoshiro256:
    """xoshiro256** 1.0 (Blackman & Vigna)."""

    def __init__(self, seed):
        sm = int(seed) & _MASK
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s

    def next_u64(self):
        s = self.s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self):
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n):
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        bits = n.bit_length()
        while True:
            r = self.next_u64() >> (64 - bits)
            if r < n:
                return r

    def normals(self, count):
        """``count`` standard normal deviates via Box-Muller (both branches used)."""
        out = []
        while len(out) < count:
            u1 = 1.0 - self.random()  # (0, 1]
            u2 = self.random()
            radius = math.sqrt(-2.0 * math.log(u1))
            out.append(radius * math.cos(2.0 * math.pi * u2))
            out.append(radius * math.sin(2.0 * math.pi * u2))
        return out[:count]

    def sample(self, population, k):
        """``k`` distinct items drawn without replacement (partial Fisher-Yates)."""
        pool = list(population)
        n = len(pool)
        if not 0 <= k <= n:
            raise ValueError("sample size out of range")
        for i in range(k):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
