# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled range coder; byte-identical to ``_rangecoder_py``."""

from libc.stdint cimport int64_t, uint8_t, uint32_t, uint64_t
from libc.stdlib cimport free, malloc

import numpy as np

from ._rangecoder_py import CorruptStreamError

cdef enum:
    PRECISION = 16
    TOTAL = 65536
    TOP = 16777216

cdef uint64_t MASK32 = 0xFFFFFFFFULL


cdef struct Enc:
    uint64_t low
    uint64_t rng
    uint8_t* buf
    Py_ssize_t n


cdef inline void _carry(Enc* e) noexcept nogil:
    cdef Py_ssize_t i = e.n - 1
    while e.buf[i] == 0xFF:
        e.buf[i] = 0
        i -= 1
    e.buf[i] += 1


cdef inline void _put(Enc* e, uint64_t c, uint64_t f) noexcept nogil:
    cdef uint64_t r = e.rng >> PRECISION
    e.low += r * c
    e.rng = r * f
    if e.low > MASK32:
        _carry(e)
        e.low &= MASK32
    while e.rng < TOP:
        e.buf[e.n] = <uint8_t>(e.low >> 24)
        e.n += 1
        e.low = (e.low << 8) & MASK32
        e.rng <<= 8


def encode(values, table_ids, cum, int bound):
    cdef const int64_t[::1] vals = np.ascontiguousarray(values, dtype=np.int64)
    cdef const int64_t[::1] tids = np.ascontiguousarray(table_ids, dtype=np.int64)
    cdef const int64_t[:, ::1] cm = np.ascontiguousarray(cum, dtype=np.int64).reshape(len(cum), -1)
    cdef Py_ssize_t count = vals.shape[0]
    cdef Py_ssize_t nsym = cm.shape[1] - 1
    cdef Py_ssize_t esc = nsym - 1
    cdef int64_t top_sym = 2 * bound
    cdef Enc e
    cdef Py_ssize_t i, j, k
    cdef int64_t s, t
    cdef uint64_t raw, unit, v
    if tids.shape[0] != count:
        raise ValueError("values and table_ids differ in length")
    e.low = 0
    e.rng = MASK32
    e.n = 0
    e.buf = <uint8_t*>malloc(8 * count + 16)
    if e.buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(count):
                t = tids[i]
                s = vals[i] + bound
                if 0 <= s <= top_sym:
                    _put(&e, cm[t, s], cm[t, s + 1] - cm[t, s])
                else:
                    _put(&e, cm[t, esc], cm[t, esc + 1] - cm[t, esc])
                    raw = (<uint64_t>vals[i]) & MASK32
                    _put(&e, raw >> 16, 1)
                    _put(&e, raw & 0xFFFF, 1)
            for k in range(5):
                unit = (<uint64_t>1) << (32 - 8 * k)
                v = ((e.low + unit - 1) // unit) * unit
                if v < e.low + e.rng:
                    if v > MASK32:
                        _carry(&e)
                        v &= MASK32
                    for j in range(k):
                        e.buf[e.n] = <uint8_t>((v >> (24 - 8 * j)) & 0xFF)
                        e.n += 1
                    break
            while e.n > 0 and e.buf[e.n - 1] == 0:
                e.n -= 1
        return bytes(e.buf[:e.n])
    finally:
        free(e.buf)


cdef inline uint32_t _byte(const uint8_t[::1] data, Py_ssize_t pos) noexcept nogil:
    if pos < data.shape[0]:
        return data[pos]
    return 0


def decode(data, table_ids, cum, int bound):
    cdef const uint8_t[::1] buf = np.frombuffer(bytes(data), dtype=np.uint8) if len(data) else np.zeros(0, np.uint8)
    cdef const int64_t[::1] tids = np.ascontiguousarray(table_ids, dtype=np.int64)
    cdef const int64_t[:, ::1] cm = np.ascontiguousarray(cum, dtype=np.int64).reshape(len(cum), -1)
    cdef Py_ssize_t count = tids.shape[0]
    cdef Py_ssize_t nsym = cm.shape[1] - 1
    cdef Py_ssize_t esc = nsym - 1
    cdef Py_ssize_t n = buf.shape[0]
    cdef Py_ssize_t pos = 0, i, lo, hi, mid
    cdef uint64_t code = 0, rng = MASK32, r, c, hi16, lo16, raw
    cdef int64_t t
    cdef int bad = 0
    out_arr = np.zeros(count, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    with nogil:
        for i in range(4):
            code = (code << 8) | _byte(buf, pos)
            pos += 1
        for i in range(count):
            t = tids[i]
            r = rng >> PRECISION
            c = code // r
            if c >= TOTAL:
                bad = 1
                break
            lo = 0
            hi = nsym
            while hi - lo > 1:
                mid = (lo + hi) >> 1
                if <uint64_t>cm[t, mid] <= c:
                    lo = mid
                else:
                    hi = mid
            code -= r * <uint64_t>cm[t, lo]
            rng = r * <uint64_t>(cm[t, lo + 1] - cm[t, lo])
            while rng < TOP:
                code = (code << 8) | _byte(buf, pos)
                pos += 1
                rng <<= 8
            if lo == esc:
                r = rng >> PRECISION
                hi16 = code // r
                if hi16 >= TOTAL:
                    bad = 1
                    break
                code -= r * hi16
                rng = r
                while rng < TOP:
                    code = (code << 8) | _byte(buf, pos)
                    pos += 1
                    rng <<= 8
                r = rng >> PRECISION
                lo16 = code // r
                if lo16 >= TOTAL:
                    bad = 1
                    break
                code -= r * lo16
                rng = r
                while rng < TOP:
                    code = (code << 8) | _byte(buf, pos)
                    pos += 1
                    rng <<= 8
                raw = (hi16 << 16) | lo16
                if (raw >> 31) & 1:
                    out[i] = <int64_t>raw - (<int64_t>1 << 32)
                else:
                    out[i] = <int64_t>raw
            else:
                out[i] = lo - bound
    if bad:
        raise CorruptStreamError(f"code point outside interval after {i} symbols")
    if n > pos:
        raise CorruptStreamError(f"{n - pos} trailing bytes after {count} symbols")
    return out_arr.tolist()
