"""Fixed-point coding tables for the range coder.

Every table covers residual symbols ``-BOUND..BOUND`` plus one escape
entry, with 16-bit frequencies summing to exactly ``2**16``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..entropy import factorized_pmf_table, gaussian_pmf_table, quantize

BOUND = 64
NUM_SYMBOLS = 2 * BOUND + 2
ESCAPE = NUM_SYMBOLS - 1
PRECISION = 16
TOTAL = 1 << PRECISION
RAW_BITS = 32

SIGMA_LEVELS = 64
SIGMA_MAX = 64.0
MU_STEPS = 8  # mean resolution 1/8


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class CodingTable:
    freq: np.ndarray  # (n,) int64, each >= 1, sum == TOTAL

    @property
    def cum(self):
        return np.concatenate(([0], np.cumsum(self.freq))).astype(np.int64)


def build_coding_table(pmf, total=TOTAL):
    """Largest-remainder quantisation of ``pmf`` to integer frequencies >= 1 summing to ``total``."""
    p = np.asarray(pmf, dtype=np.float64)
    n = p.size
    if n == 0 or n > total:
        raise TableError(f"alphabet of {n} symbols does not fit a total of {total}")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or p.sum() <= 0:
        raise TableError("pmf must be finite, nonnegative and not all zero")
    target = p / p.sum() * total
    freq = np.maximum(np.floor(target).astype(np.int64), 1)
    rem = target - np.floor(target)
    diff = total - int(freq.sum())
    if diff > 0:
        order = np.argsort(-rem, kind="stable")
        while diff > 0:
            take = order[:diff]
            freq[take] += 1
            diff -= take.size
    while diff < 0:
        # trim entries that sit furthest above their target, never below 1
        over = freq - target
        over[freq <= 1] = -np.inf
        order = np.argsort(-over, kind="stable")
        k = min(-diff, int(np.sum(freq > 1)))
        if k == 0:
            raise TableError("cannot satisfy frequency floor")
        freq[order[:k]] -= 1
        diff += k
    return CodingTable(freq)


def cum_array(tables):
    return np.stack([t.cum for t in tables])


def table_bits(values, table_ids, cum):
    """Cross-entropy in bits of ``values`` under the fixed-point tables, escapes included."""
    values = np.asarray(values, dtype=np.int64)
    table_ids = np.asarray(table_ids, dtype=np.int64)
    if values.size == 0:
        return 0.0
    sym = values + BOUND
    esc = (sym < 0) | (sym > 2 * BOUND)
    sym = np.where(esc, ESCAPE, sym)
    freq = cum[table_ids, sym + 1] - cum[table_ids, sym]
    return float(np.sum(PRECISION - np.log2(freq)) + RAW_BITS * np.count_nonzero(esc))


# -- Gaussian conditional tables ---------------------------------------------------

def sigma_grid(sigma_min):
    return np.exp(np.linspace(math.log(sigma_min), math.log(SIGMA_MAX), SIGMA_LEVELS))


@lru_cache(maxsize=4)
def gaussian_cum_tables(sigma_min):
    """Cumulative tables for every (sigma level, mean fraction); index level * MU_STEPS + frac."""
    tables = []
    for s in sigma_grid(sigma_min):
        for f in range(MU_STEPS):
            tables.append(build_coding_table(gaussian_pmf_table(f / MU_STEPS, s, BOUND)))
    arr = cum_array(tables)
    arr.setflags(write=False)
    return arr


def gaussian_table_index(mu, sigma, sigma_min):
    """Map (mu, sigma) to (integer base, table id); residual symbol is value - base.

    mu is rounded to 1/8 and sigma to a 64-level log grid, so both ends
    derive the same tables from the same decoded hyper-latents.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    mu_q = quantize(mu * MU_STEPS)
    base = np.floor_divide(mu_q, MU_STEPS)
    frac = (mu_q - base * MU_STEPS).astype(np.int64)
    lo, hi = math.log(sigma_min), math.log(SIGMA_MAX)
    pos = (np.log(np.clip(sigma, sigma_min, SIGMA_MAX)) - lo) / (hi - lo) * (SIGMA_LEVELS - 1)
    level = np.clip(quantize(pos), 0, SIGMA_LEVELS - 1).astype(np.int64)
    return base.astype(np.int64), level * MU_STEPS + frac


# -- factorised prior tables ---------------------------------------------------------

def factorized_cum_tables(prior_params, channels):
    return cum_array([build_coding_table(factorized_pmf_table(c, prior_params, BOUND))
                      for c in range(channels)])
