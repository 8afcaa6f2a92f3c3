"""Pure-Python range coder; reference twin of ``_rangecoder_c``.

32-bit low/range with carry propagation into the emitted bytes and
16-bit frequency totals. The final flush writes the fewest bytes that
pin a value inside the last interval, and trailing zero bytes are
dropped because the decoder reads zeros past the end of its input.

Tables arrive as a 2-D cumulative array ``cum[t]`` of length
``nsym + 1`` with ``cum[t][0] == 0`` and ``cum[t][nsym] == 2**16``; the
last symbol of every table is the escape. A value ``v`` maps to symbol
``v + bound``; values outside ``[-bound, bound]`` are sent as the escape
followed by their 32-bit two's-complement pattern in two uniform
16-bit halves.
"""

from __future__ import annotations

TOP = 1 << 24
MASK32 = 0xFFFFFFFF
PRECISION = 16
TOTAL = 1 << PRECISION


class CorruptStreamError(ValueError):
    pass


def _carry(out):
    i = len(out) - 1
    while out[i] == 0xFF:
        out[i] = 0
        i -= 1
    out[i] += 1


def encode(values, table_ids, cum, bound):
    cum_rows = [list(map(int, row)) for row in cum]
    nsym = len(cum_rows[0]) - 1 if cum_rows else 0
    esc = nsym - 1
    top_sym = 2 * bound
    out = bytearray()
    low = 0
    rng = MASK32

    def put(c, f):
        nonlocal low, rng
        r = rng >> PRECISION
        low += r * c
        rng = r * f
        if low > MASK32:
            _carry(out)
            low &= MASK32
        while rng < TOP:
            out.append(low >> 24)
            low = (low << 8) & MASK32
            rng <<= 8

    for v, t in zip(values, table_ids):
        row = cum_rows[t]
        s = int(v) + bound
        if 0 <= s <= top_sym:
            put(row[s], row[s + 1] - row[s])
        else:
            put(row[esc], row[esc + 1] - row[esc])
            raw = int(v) & MASK32
            put(raw >> 16, 1)
            put(raw & 0xFFFF, 1)

    for n in range(5):
        unit = 1 << (32 - 8 * n)
        v = -(-low // unit) * unit
        if v < low + rng:
            if v > MASK32:
                _carry(out)
                v &= MASK32
            for j in range(n):
                out.append((v >> (24 - 8 * j)) & 0xFF)
            break
    while out and out[-1] == 0:
        out.pop()
    return bytes(out)


def decode(data, table_ids, cum, bound):
    cum_rows = [list(map(int, row)) for row in cum]
    nsym = len(cum_rows[0]) - 1 if cum_rows else 0
    esc = nsym - 1
    n = len(data)
    pos = 0
    code = 0
    for _ in range(4):
        code = (code << 8) | (data[pos] if pos < n else 0)
        pos += 1
    rng = MASK32
    out = []

    def take(c, f):
        nonlocal code, rng, pos
        r = rng >> PRECISION
        code -= r * c
        rng = r * f
        while rng < TOP:
            code = (code << 8) | (data[pos] if pos < n else 0)
            pos += 1
            rng <<= 8

    def target():
        c = code // (rng >> PRECISION)
        if c >= TOTAL:
            raise CorruptStreamError(f"code point outside interval after {len(out)} symbols")
        return c

    for t in table_ids:
        row = cum_rows[t]
        c = target()
        lo, hi = 0, nsym
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if row[mid] <= c:
                lo = mid
            else:
                hi = mid
        take(row[lo], row[lo + 1] - row[lo])
        if lo == esc:
            hi16 = target()
            take(hi16, 1)
            lo16 = target()
            take(lo16, 1)
            raw = (hi16 << 16) | lo16
            out.append(raw - (1 << 32) if raw & 0x80000000 else raw)
        else:
            out.append(lo - bound)
    if n > pos:
        raise CorruptStreamError(f"{n - pos} trailing bytes after {len(out)} symbols")
    return out
