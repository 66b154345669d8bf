"""SplitMix64 seed derivation and a small deterministic sampler.

Kept free of numpy's bit generators so that seeds and epoch samples are
identical on every platform and library version.
"""

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (a bijection on 64-bit ints)."""
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def generation_seed(base_seed: int, prompt_index: int, g: int) -> int:
    """Seed of the g-th image (1-based) of the prompt at ``prompt_index``."""
    if not 1 <= g < (1 << 32):
        raise ValueError(f"image index g={g} out of range")
    return splitmix64((base_seed ^ ((prompt_index << 32) + g)) & MASK64)


class SplitMix64:
    """Sequential SplitMix64 stream."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n


def sample_without_replacement(n: int, m: int, seed: int) -> list[int]:
    """``min(m, n)`` distinct indices from ``range(n)``, in draw order.

    Partial Fisher-Yates over a sparse swap table, so memory is O(m).
    """
    m = min(m, n)
    rng = SplitMix64(seed)
    swapped = {}
    out = []
    for i in range(m):
        j = i + rng.below(n - i)
        out.append(swapped.get(j, j))
        swapped[j] = swapped.get(i, i)
    return out
