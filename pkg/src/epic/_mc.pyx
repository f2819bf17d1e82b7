# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled collusion Monte Carlo kernel.

True proxy-selection simulation: every benign meter draws lam distinct
proxies uniformly from the pool (rejection sampling on duplicates) and the
meter is compromised when all of them are malicious.  Draws stop early at
the first benign proxy, and a trial stops at the first compromised meter.

RNG is a self-contained xoshiro256** seeded through splitmix64, so results
are deterministic for a given seed on every platform.
"""

from libc.stdint cimport uint64_t, int64_t


cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef class _Xoshiro:
    cdef uint64_t s0, s1, s2, s3

    def __cinit__(self, uint64_t seed):
        # splitmix64 expansion of the seed into the xoshiro state
        cdef uint64_t z
        cdef uint64_t x = seed
        cdef uint64_t[4] state
        cdef int i
        for i in range(4):
            x += <uint64_t>0x9E3779B97F4A7C15
            z = x
            z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
            z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
            state[i] = z ^ (z >> 31)
        self.s0, self.s1, self.s2, self.s3 = state[0], state[1], state[2], state[3]

    cdef inline uint64_t next_u64(self) nogil:
        cdef uint64_t result = _rotl(self.s1 * 5, 7) * 9
        cdef uint64_t t = self.s1 << 17
        self.s2 ^= self.s0
        self.s3 ^= self.s1
        self.s1 ^= self.s2
        self.s0 ^= self.s3
        self.s2 ^= t
        self.s3 = _rotl(self.s3, 45)
        return result

    cdef inline uint64_t bounded(self, uint64_t bound) nogil:
        # Lemire multiply-shift with rejection: unbiased uniform in [0, bound)
        cdef uint64_t x, l
        cdef __uint128_t m
        cdef uint64_t threshold = (-bound) % bound
        while True:
            x = self.next_u64()
            m = <__uint128_t>x * <__uint128_t>bound
            l = <uint64_t>m
            if l >= threshold:
                return <uint64_t>(m >> 64)


KERNEL = "cython"

DEF MAX_LAM = 64


def mc_trials(long long pool, long long malicious, long long benign,
              long long lam, long long trials, unsigned long long seed):
    """Number of trials in which at least one benign meter picked an
    all-malicious proxy set."""
    if lam < 1:
        raise ValueError("lam must be >= 1")
    if lam > MAX_LAM:
        raise ValueError(f"lam > {MAX_LAM} not supported by the compiled kernel")
    if pool < lam:
        raise ValueError("pool smaller than lam")
    if malicious < lam:
        return 0

    cdef _Xoshiro rng = _Xoshiro(seed)
    cdef int64_t hits = 0
    cdef int64_t t, b, k, j
    cdef uint64_t val
    cdef uint64_t[MAX_LAM] chosen
    cdef bint trial_hit, all_malicious, duplicate
    cdef uint64_t upool = <uint64_t>pool
    cdef uint64_t umal = <uint64_t>malicious

    with nogil:
        for t in range(trials):
            trial_hit = 0
            for b in range(benign):
                all_malicious = 1
                for k in range(lam):
                    while True:
                        val = rng.bounded(upool)
                        duplicate = 0
                        for j in range(k):
                            if chosen[j] == val:
                                duplicate = 1
                                break
                        if not duplicate:
                            break
                    chosen[k] = val
                    if val >= umal:
                        all_malicious = 0
                        break
                if all_malicious:
                    trial_hit = 1
                    break
            hits += trial_hit
    return hits
