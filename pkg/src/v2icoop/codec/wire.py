"""WireMessage: header, selection mask, hyper-latent and feature bitstreams.

Layout (little-endian, see README for the byte table)::

    magic "TV2I" | version u16 | flags u32 | model_id u32
    height u32 | width u32 | channels u32 | hyper_channels u32
    selected_count u32 | pose x, y, yaw (float32 bit patterns, u32 each)
    mask_len u32 | hyper_len u32 | feature_len u32 | crc32 u32
    mask section | hyper section | feature section

The CRC covers every header byte before it plus all three sections.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..entropy import hyper_decode
from ..nn import Tensor
from . import rangecoder
from .tables import BOUND, factorized_cum_tables, gaussian_cum_tables, gaussian_table_index, table_bits

MAGIC = b"TV2I"
VERSION = 1
FLAG_BITMAP_MASK = 1
_HEADER = struct.Struct("<4sHIIIIIIIIIIIIII")
HEADER_BYTES = _HEADER.size


class WireError(ValueError):
    pass


class VersionMismatch(WireError):
    pass


class TruncatedPayload(WireError):
    pass


class LengthInconsistency(WireError):
    pass


class CorruptPayload(WireError):
    pass


# -- entropy models shared by both ends --------------------------------------------

ENTROPY_PREFIXES = ("prior.", "hyper_dec.")


class EntropyModels:
    """The parameters both ends must share: factorised prior and hyper decoder."""

    def __init__(self, params, sigma_min=0.11):
        self.params = {k: v for k, v in params.items() if k.startswith(ENTROPY_PREFIXES)}
        self.sigma_min = float(sigma_min)
        self.hyper_channels = self.params["prior.H0"].shape[0]
        self._fact = None

    @property
    def model_id(self):
        h = hashlib.sha256(struct.pack("<d", self.sigma_min))
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].data, dtype="<f8").tobytes())
        return int.from_bytes(h.digest()[:4], "little")

    def factorized_cum(self):
        if self._fact is None:
            self._fact = factorized_cum_tables(self.params, self.hyper_channels)
        return self._fact

    def gaussian_cum(self):
        return gaussian_cum_tables(self.sigma_min)

    def mean_scale(self, z_hat):
        """(mu, sigma) arrays (H, W, C) from integer hyper-latents (h, w, Cz)."""
        mu, sigma = hyper_decode(Tensor(np.asarray(z_hat, dtype=np.float64)[None]), self.params, self.sigma_min)
        return mu.data[0], sigma.data[0]

    def feature_symbols(self, f_hat, mask, z_hat):
        """Values and table ids for the selected cells, cells row-major, channels within a cell."""
        mu, sigma = self.mean_scale(z_hat)
        sel = np.asarray(mask, dtype=bool)
        base, tid = gaussian_table_index(mu[sel], sigma[sel], self.sigma_min)
        return base.ravel(), tid.ravel()


def hyper_table_ids(shape):
    h, w, cz = shape
    return np.tile(np.arange(cz, dtype=np.int64), h * w)


# -- mask ---------------------------------------------------------------------

def _varint(n, out):
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def encode_mask_rle(mask):
    """Alternating run lengths, starting with a (possibly empty) run of zeros, as LEB128 varints."""
    flat = np.asarray(mask, dtype=np.uint8).ravel()
    out = bytearray()
    if flat.size == 0:
        return bytes(out)
    change = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat[0] == 1:
        runs.insert(0, 0)
    for r in runs:
        _varint(int(r), out)
    return bytes(out)


def decode_mask_rle(data, height, width):
    total = height * width
    flat = np.zeros(total, dtype=np.uint8)
    bit, n, shift, cur = 0, 0, 0, 0
    for b in data:
        cur |= (b & 0x7F) << shift
        if b & 0x80:
            shift += 7
            continue
        if n + cur > total:
            raise LengthInconsistency(f"mask runs cover more than {total} cells")
        flat[n:n + cur] = bit
        n += cur
        bit ^= 1
        cur, shift = 0, 0
    if shift:
        raise TruncatedPayload("mask section ends inside a varint")
    if n != total:
        raise LengthInconsistency(f"mask runs cover {n} of {total} cells")
    return flat.reshape(height, width)


def encode_mask(mask):
    """(flag bits, bytes); bitmap fallback whenever RLE would be larger."""
    rle = encode_mask_rle(mask)
    bitmap = np.packbits(np.asarray(mask, dtype=np.uint8).ravel(), bitorder="little").tobytes()
    if len(rle) <= len(bitmap):
        return 0, rle
    return FLAG_BITMAP_MASK, bitmap


def decode_mask(data, flags, height, width):
    if flags & FLAG_BITMAP_MASK:
        need = (height * width + 7) // 8
        if len(data) != need:
            raise LengthInconsistency(f"bitmap mask is {len(data)} bytes, expected {need}")
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
        return bits[:height * width].reshape(height, width)
    return decode_mask_rle(data, height, width)


# -- message ------------------------------------------------------------------

@dataclass(frozen=True)
class WireMessage:
    height: int
    width: int
    channels: int
    hyper_channels: int
    selected_count: int
    pose: tuple
    mask_bytes: bytes
    hyper_bytes: bytes
    feature_bytes: bytes
    flags: int = 0
    model_id: int = 0
    version: int = VERSION
    stats: dict = field(default_factory=dict, compare=False, repr=False)

    def _header(self, crc=0):
        px, py, pyaw = (struct.unpack("<I", struct.pack("<f", v))[0] for v in self.pose)
        return _HEADER.pack(MAGIC, self.version, self.flags, self.model_id,
                            self.height, self.width, self.channels, self.hyper_channels,
                            self.selected_count, px, py, pyaw,
                            len(self.mask_bytes), len(self.hyper_bytes), len(self.feature_bytes), crc)

    def to_bytes(self):
        body = self.mask_bytes + self.hyper_bytes + self.feature_bytes
        head = self._header()[:-4]
        crc = zlib.crc32(body, zlib.crc32(head))
        return head + struct.pack("<I", crc) + body

    @property
    def section_bytes(self):
        return {"header": HEADER_BYTES, "mask": len(self.mask_bytes),
                "hyper": len(self.hyper_bytes), "feature": len(self.feature_bytes)}

    @property
    def total_bytes(self):
        return sum(self.section_bytes.values())

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        if len(data) < HEADER_BYTES:
            raise TruncatedPayload(f"{len(data)} bytes is shorter than the {HEADER_BYTES}-byte header")
        (magic, version, flags, model_id, h, w, c, cz, count, px, py, pyaw,
         lm, lh, lf, crc) = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CorruptPayload(f"bad magic {magic!r}")
        if version != VERSION:
            raise VersionMismatch(f"message version {version}, decoder supports {VERSION}")
        expected = HEADER_BYTES + lm + lh + lf
        if len(data) < expected:
            raise TruncatedPayload(f"header declares {expected} bytes, got {len(data)}")
        if len(data) > expected:
            raise LengthInconsistency(f"header declares {expected} bytes, got {len(data)}")
        if zlib.crc32(data[HEADER_BYTES:], zlib.crc32(data[:HEADER_BYTES - 4])) != crc:
            raise CorruptPayload("checksum mismatch")
        pose = tuple(struct.unpack("<f", struct.pack("<I", v))[0] for v in (px, py, pyaw))
        a, b = HEADER_BYTES + lm, HEADER_BYTES + lm + lh
        return cls(h, w, c, cz, count, pose, data[HEADER_BYTES:a], data[a:b], data[b:],
                   flags=flags, model_id=model_id, version=version)

    def header_dict(self):
        return {"magic": MAGIC.decode(), "version": self.version, "flags": self.flags,
                "mask_encoding": "bitmap" if self.flags & FLAG_BITMAP_MASK else "rle",
                "model_id": f"{self.model_id:08x}", "height": self.height, "width": self.width,
                "channels": self.channels, "hyper_channels": self.hyper_channels,
                "selected_count": self.selected_count, "pose": list(self.pose),
                "sections": self.section_bytes, "total_bytes": self.total_bytes}


def _as_int(a, name):
    arr = np.asarray(a)
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError(f"{name} must hold integer values")
    out = arr.astype(np.int64)
    if np.any(np.abs(out) >= 2 ** 31):
        raise ValueError(f"{name} values exceed 32-bit range")
    return out


def encode_message(mask, z_hat, f_hat, models: EntropyModels, pose=(0.0, 0.0, 0.0)):
    """Pack quantised mask (H, W), hyper-latents (H/4, W/4, Cz) and features (H, W, C).

    Feature values at unselected cells are not transmitted.
    """
    mask = (np.asarray(mask) != 0).astype(np.uint8)
    z = _as_int(z_hat, "z_hat")
    f = _as_int(f_hat, "f_hat")
    h, w = mask.shape
    c = f.shape[2]
    if f.shape[:2] != (h, w) or z.shape[:2] != (h // 4, w // 4) or h % 4 or w % 4:
        raise ValueError(f"inconsistent shapes: mask {mask.shape}, z {z.shape}, f {f.shape}")
    if z.shape[2] != models.hyper_channels:
        raise ValueError(f"z has {z.shape[2]} channels, prior has {models.hyper_channels}")
    flags, mask_bytes = encode_mask(mask)
    zv = z.ravel()
    zt = hyper_table_ids(z.shape)
    fcum = models.factorized_cum()
    hyper_bytes = rangecoder.encode(zv, zt, fcum, BOUND)
    base, tid = models.feature_symbols(f, mask, z)
    fv = f[mask.astype(bool)].ravel() - base
    gcum = models.gaussian_cum()
    feature_bytes = rangecoder.encode(fv, tid, gcum, BOUND)
    stats = {"hyper_table_bits": table_bits(zv, zt, fcum), "feature_table_bits": table_bits(fv, tid, gcum)}
    return WireMessage(h, w, c, z.shape[2], int(mask.sum()), tuple(float(p) for p in pose),
                       mask_bytes, hyper_bytes, feature_bytes, flags=flags,
                       model_id=models.model_id, stats=stats)


def decode_message(message, models: EntropyModels):
    """Inverse of :func:`encode_message`: (mask, z_hat, f_hat) as int arrays, f_hat zero off-mask."""
    msg = message if isinstance(message, WireMessage) else WireMessage.from_bytes(message)
    if msg.model_id != models.model_id:
        raise VersionMismatch(f"message built for model {msg.model_id:08x}, decoder holds {models.model_id:08x}")
    if msg.hyper_channels != models.hyper_channels or msg.height % 4 or msg.width % 4:
        raise LengthInconsistency("header dimensions do not fit the entropy model")
    mask = decode_mask(msg.mask_bytes, msg.flags, msg.height, msg.width)
    if int(mask.sum()) != msg.selected_count:
        raise LengthInconsistency(f"mask selects {int(mask.sum())} cells, header says {msg.selected_count}")
    zshape = (msg.height // 4, msg.width // 4, msg.hyper_channels)
    try:
        zv = rangecoder.decode(msg.hyper_bytes, hyper_table_ids(zshape), models.factorized_cum(), BOUND)
        z = np.asarray(zv, dtype=np.int64).reshape(zshape)
        base, tid = models.feature_symbols(None, mask, z)
        if base.size != msg.selected_count * msg.channels:
            raise LengthInconsistency("feature channel count does not match the hyper decoder")
        fv = np.asarray(rangecoder.decode(msg.feature_bytes, tid, models.gaussian_cum(), BOUND), dtype=np.int64)
    except rangecoder.CorruptStreamError as e:
        raise CorruptPayload(str(e)) from None
    f = np.zeros((msg.height, msg.width, msg.channels), dtype=np.int64)
    f[mask.astype(bool)] = (fv + base).reshape(-1, msg.channels)
    return mask, z, f
