"""Numba-compiled hot loops: Gold sequence LFSRs and the max-log-MAP
trellis sweep used by the turbo decoder.

Kept free of project imports so the kernels compile in isolation.
"""

import numpy as np
from numba import njit

NEG_INF = -1.0e30


@njit(cache=True)
def gold31(c_init: int, length: int, nc: int = 1600) -> np.ndarray:
    """Length-31 Gold sequence c(n) = x1(n+Nc) xor x2(n+Nc).

    x1 seeded with 1 at position 0, x2 seeded with the binary expansion
    of ``c_init``; both advanced past the Nc = 1600 warm-up.
    """
    total = nc + length
    x1 = np.zeros(total + 31, dtype=np.uint8)
    x2 = np.zeros(total + 31, dtype=np.uint8)
    x1[0] = 1
    for i in range(31):
        x2[i] = (c_init >> i) & 1
    for n in range(total):
        x1[n + 31] = x1[n + 3] ^ x1[n]
        x2[n + 31] = x2[n + 3] ^ x2[n + 2] ^ x2[n + 1] ^ x2[n]
    out = np.empty(length, dtype=np.uint8)
    for n in range(length):
        out[n] = x1[nc + n] ^ x2[nc + n]
    return out


@njit(cache=True)
def rsc_encode(bits: np.ndarray) -> np.ndarray:
    """Rate-1/2 recursive systematic encode with trellis termination.

    Feedback 1 + D^2 + D^3, parity 1 + D + D^3. Returns
    [systematic K, parity K, tail_sys 3, tail_par 3].
    """
    k = bits.shape[0]
    out = np.empty(2 * k + 6, dtype=np.uint8)
    a = 0
    b = 0
    c = 0
    for i in range(k):
        u = bits[i]
        w = u ^ b ^ c
        out[i] = u
        out[k + i] = w ^ a ^ c
        a, b, c = w, a, b
    for i in range(3):
        u = b ^ c  # drives the feedback register to zero
        w = 0
        out[2 * k + i] = u
        out[2 * k + 3 + i] = w ^ a ^ c
        a, b, c = w, a, b
    return out


@njit(cache=True)
def max_log_bcjr(sys_llr: np.ndarray, par_llr: np.ndarray,
                 apriori: np.ndarray, n_info: int) -> np.ndarray:
    """One max-log-MAP sweep over the 8-state trellis.

    ``sys_llr``/``par_llr`` cover n_info + 3 steps (tail included); the
    a priori term applies to the first ``n_info`` steps only. Positive
    LLR means bit 0. Returns posterior LLRs for the info steps.
    """
    n_total = sys_llr.shape[0]
    alpha = np.full((n_total + 1, 8), NEG_INF)
    alpha[0, 0] = 0.0
    # trellis tables: state s = 4a + 2b + c, next = 4w + 2a + b
    for kk in range(n_total):
        la = apriori[kk] if kk < n_info else 0.0
        lx = sys_llr[kk] + la
        lz = par_llr[kk]
        for s in range(8):
            av = alpha[kk, s]
            if av <= NEG_INF:
                continue
            a = (s >> 2) & 1
            b = (s >> 1) & 1
            c = s & 1
            for u in range(2):
                w = u ^ b ^ c
                z = w ^ a ^ c
                ns = (w << 2) | (s >> 1)
                m = av + 0.5 * ((1.0 - 2.0 * u) * lx + (1.0 - 2.0 * z) * lz)
                if m > alpha[kk + 1, ns]:
                    alpha[kk + 1, ns] = m
    beta = np.full(8, NEG_INF)
    beta[0] = 0.0
    post = np.empty(n_info)
    for kk in range(n_total - 1, -1, -1):
        la = apriori[kk] if kk < n_info else 0.0
        lx = sys_llr[kk] + la
        lz = par_llr[kk]
        new_beta = np.full(8, NEG_INF)
        m0 = NEG_INF
        m1 = NEG_INF
        for s in range(8):
            a = (s >> 2) & 1
            b = (s >> 1) & 1
            c = s & 1
            for u in range(2):
                w = u ^ b ^ c
                z = w ^ a ^ c
                ns = (w << 2) | (s >> 1)
                g = 0.5 * ((1.0 - 2.0 * u) * lx + (1.0 - 2.0 * z) * lz)
                t = g + beta[ns]
                if t > new_beta[s]:
                    new_beta[s] = t
                if kk < n_info:
                    full = alpha[kk, s] + t
                    if u == 0:
                        if full > m0:
                            m0 = full
                    else:
                        if full > m1:
                            m1 = full
        beta = new_beta
        if kk < n_info:
            post[kk] = m0 - m1
    return post


@njit(cache=True)
def crc_remainder(bits: np.ndarray, poly_low: int, width: int) -> int:
    """GF(2) remainder of bits(x) * x^width modulo the generator.

    ``poly_low`` holds the generator without its leading x^width term.
    """
    reg = 0
    mask = (1 << width) - 1
    msb = width - 1
    for i in range(bits.shape[0]):
        fb = ((reg >> msb) ^ bits[i]) & 1
        reg = (reg << 1) & mask
        if fb:
            reg ^= poly_low
    return reg
