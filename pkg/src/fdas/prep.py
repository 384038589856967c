"""Plane-preparation transforms between convolution output and harmonic input.

Three transforms adapt any convolution output to any harmonic-summing input:
discard strips the invalid chunk prefixes of overlap-save output, transpose
flips the plane orientation, and reorder builds the duplicated/padded
streaming layout consumed by the block-streaming harmonic strategy. Which
subset fires is a fixed function of the (convolution, harmonic) combination;
when none is needed the preparation is the identity with zero cost.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (FdasError, FormatError, Fop, is_pow2, next_pow2,
                   signed_range, storage_row, template_offset)
from .convolution import ConvRawOutput, OlsFd, power_spectrum

RFOP_MAGIC = b"RFP1"


class PrepError(FdasError):
    """Unknown combination or inconsistent plane metadata."""


def stretch_rows(n_rows: int, k: int) -> np.ndarray:
    """Storage rows of the k-stretched source for every template row.

    The signed template axis stretches by truncation toward zero, keeping the
    axis symmetric about template 0.
    """
    signed = signed_range(n_rows)
    src = np.sign(signed) * (np.abs(signed) // k)
    return (src + template_offset(n_rows)).astype(np.intp)


def discard(raw: ConvRawOutput) -> np.ndarray:
    """Remove each chunk's invalid prefix; complex plane of valid columns.

    Per template the first ``overlap`` points of every chunk are dropped, the
    remainders concatenated and truncated to the plane width.
    """
    if not isinstance(raw, ConvRawOutput):
        raise PrepError("discard expects chunked convolution output")
    valid = raw.chunks[:, :, raw.overlap:]
    return valid.reshape(raw.n_templates, -1)[:, : raw.n_cols]


def fop_from(result) -> Fop:
    """Canonical template-major power plane from any convolution result."""
    if isinstance(result, Fop):
        if result.channel_major:
            return transpose(result)
        return result
    if isinstance(result, ConvRawOutput):
        return Fop(power_spectrum(discard(result)))
    raise PrepError(f"cannot build a plane from {type(result).__name__}")


def transpose(fop: Fop) -> Fop:
    """Swap the storage axes; bit-exact involution."""
    return Fop(np.ascontiguousarray(fop.values.T),
               channel_major=not fop.channel_major)


# --- reordered plane -------------------------------------------------------------

@dataclass
class RFop:
    """Reordered/padded plane whose blocks stream sequentially.

    Block b serves output columns [b*block_cols, (b+1)*block_cols) of every
    harmonic plane. Within a block the sections are harmonic-major: for each
    k = 1..n_hp a row-major (template row x source column) section holds
    every source point those output columns need, rows stretched per template
    (duplicates included), columns covering floor(c0/k)..floor((c1-1)/k).
    Blocks are padded with zeros to one common power-of-two length.
    """

    blocks: np.ndarray  # (n_blocks, block_len) float32
    block_cols: int
    n_hp: int
    n_rows: int | None = None
    n_chan: int | None = None
    pad_value: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.blocks, dtype=np.float32)
        if arr.ndim != 2:
            raise FormatError("rFOP blocks must form a 2-D array")
        if not is_pow2(arr.shape[1]):
            raise FormatError(
                f"rFOP block length must be a power of two, got {arr.shape[1]}")
        self.blocks = arr
        if self.block_cols < 1 or self.n_hp < 1:
            raise FormatError("block_cols and n_hp must be >= 1")

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def block_len(self) -> int:
        return self.blocks.shape[1]

    @property
    def total_points(self) -> int:
        return self.blocks.size

    def _need_geometry(self):
        if self.n_rows is None or self.n_chan is None:
            raise PrepError("rFOP loaded without plane geometry; "
                            "supply n_rows and n_chan")

    def col_span(self, k: int, block: int) -> tuple[int, int]:
        """Inclusive source-column range of harmonic k's section in a block."""
        self._need_geometry()
        c0 = block * self.block_cols
        c1 = min(self.n_chan, c0 + self.block_cols)
        return c0 // k, (c1 - 1) // k

    def section_cols(self, k: int, block: int) -> int:
        lo, hi = self.col_span(k, block)
        return hi - lo + 1

    def section_offset(self, k: int, block: int) -> int:
        self._need_geometry()
        return sum(self.n_rows * self.section_cols(kk, block)
                   for kk in range(1, k))

    def used_points(self, block: int) -> int:
        self._need_geometry()
        return sum(self.n_rows * self.section_cols(k, block)
                   for k in range(1, self.n_hp + 1))

    def lookup(self, k: int, i: int, j: int) -> np.float32:
        """Stretched source value for harmonic k at (signed template i, col j).

        Pure layout arithmetic; returns exactly the float32 the source plane
        holds at (trunc(i/k), floor(j/k)).
        """
        self._need_geometry()
        if not 1 <= k <= self.n_hp:
            raise PrepError(f"harmonic {k} out of range [1, {self.n_hp}]")
        if not 0 <= j < self.n_chan:
            raise PrepError(f"channel {j} out of range [0, {self.n_chan})")
        block = j // self.block_cols
        lo, _ = self.col_span(k, block)
        offset = (self.section_offset(k, block)
                  + storage_row(i, self.n_rows) * self.section_cols(k, block)
                  + (j // k - lo))
        return self.blocks[block, offset]


def reorder(fop: Fop, block_cols: int, n_hp: int) -> RFop:
    """Build the streaming layout for block_cols output columns per block.

    Some source points land in several blocks (duplication), so the total
    size never shrinks below the plane; each block is zero-padded at its tail
    to the common power-of-two length.
    """
    if block_cols < 1 or n_hp < 1:
        raise PrepError("block_cols and n_hp must be >= 1")
    tm = fop.template_major()
    rows, cols = tm.shape
    n_blocks = -(-cols // block_cols)
    row_maps = {k: stretch_rows(rows, k) for k in range(1, n_hp + 1)}

    def spans(block):
        c0 = block * block_cols
        c1 = min(cols, c0 + block_cols)
        return [(k, c0 // k, (c1 - 1) // k) for k in range(1, n_hp + 1)]

    needed = [sum(rows * (hi - lo + 1) for _, lo, hi in spans(b))
              for b in range(n_blocks)]
    block_len = next_pow2(max(needed))
    blocks = np.zeros((n_blocks, block_len), dtype=np.float32)
    for b in range(n_blocks):
        off = 0
        for k, lo, hi in spans(b):
            section = tm[row_maps[k]][:, lo:hi + 1]
            blocks[b, off:off + section.size] = section.ravel()
            off += section.size
    return RFop(blocks=blocks, block_cols=block_cols, n_hp=n_hp,
                n_rows=rows, n_chan=cols)


def save_rfop(rfop: RFop, path) -> None:
    """Binary rFOP file: magic, u32 block_cols/n_hp/block_len/blocks, f32 LE."""
    with open(path, "wb") as fh:
        fh.write(RFOP_MAGIC)
        fh.write(struct.pack("<IIII", rfop.block_cols, rfop.n_hp,
                             rfop.block_len, rfop.n_blocks))
        fh.write(np.ascontiguousarray(rfop.blocks, dtype="<f4").tobytes())


def load_rfop(path, n_rows: int | None = None, n_chan: int | None = None) -> RFop:
    blob = Path(path).read_bytes()
    if len(blob) < 20 or blob[:4] != RFOP_MAGIC:
        raise FormatError(f"{path}: not an rFOP file (bad magic)")
    block_cols, n_hp, block_len, n_blocks = struct.unpack("<IIII", blob[4:20])
    payload = blob[20:]
    if len(payload) != n_blocks * block_len * 4:
        raise FormatError(
            f"{path}: header says {n_blocks} blocks of {block_len} points "
            f"but file carries {len(payload) // 4}")
    blocks = np.frombuffer(payload, dtype="<f4").reshape(n_blocks, block_len).copy()
    return RFop(blocks=blocks, block_cols=block_cols, n_hp=n_hp,
                n_rows=n_rows, n_chan=n_chan)


# --- combination matrix -----------------------------------------------------------

def required_transforms(conv_strategy, hm_strategy) -> tuple[bool, bool, bool]:
    """(discard, transpose, reorder) booleans for a kernel combination.

    Chunked overlap-save output always needs the discard; the transpose and
    reorder follow the input plane each harmonic method consumes. The one
    asymmetry: the plane-at-a-time and naive multi-plane methods read the
    raw-template orientation directly after a time-domain kernel, but the
    chunked frequency path hands them a transposed plane.
    """
    hm_kind = getattr(hm_strategy, "kind", None)
    if hm_kind not in ("single", "naive-multi", "multi-n", "multi-r"):
        raise PrepError(f"unknown harmonic strategy {hm_strategy!r}")
    chunked = isinstance(conv_strategy, OlsFd) or (
        getattr(conv_strategy, "kind", None) == "ols-fd")
    b_discard = chunked
    if hm_kind in ("multi-n", "multi-r"):
        b_transpose = True
    elif hm_kind == "naive-multi":
        b_transpose = chunked
    else:
        b_transpose = False
    b_reorder = hm_kind == "multi-r"
    return b_discard, b_transpose, b_reorder


@dataclass
class PrepResult:
    """Outcome of the preparation step: plane, canonical plane, and timings."""

    plane: object            # Fop or RFop, as the harmonic strategy needs
    fop: Fop                 # canonical template-major power plane
    b_discard: bool = False
    b_transpose: bool = False
    b_reorder: bool = False
    t_discard: float = 0.0
    t_transpose: float = 0.0
    t_reorder: float = 0.0
    path: str = "device"

    @property
    def t_total(self) -> float:
        return self.t_discard + self.t_transpose + self.t_reorder


def prepare(result, conv_strategy, hm_strategy, n_hp: int,
            path: str = "device") -> PrepResult:
    """Apply exactly the transforms the combination needs, timing each one.

    ``path`` attributes the work to the host processor or the device for the
    throughput model; the numbers produced are identical on both paths. When
    no transform is needed the input plane passes through untouched and the
    preparation cost is zero.
    """
    if path not in ("device", "host"):
        raise PrepError(f"prep path must be 'device' or 'host', got {path!r}")
    b1, b2, b3 = required_transforms(conv_strategy, hm_strategy)
    t_discard = t_transpose = t_reorder = 0.0

    if b1:
        if not isinstance(result, ConvRawOutput):
            raise PrepError("combination expects chunked output to discard")
        t0 = time.perf_counter()
        fop = Fop(power_spectrum(discard(result)))
        t_discard = time.perf_counter() - t0
    else:
        if isinstance(result, ConvRawOutput):
            raise PrepError("chunked output reached a combination without discard")
        fop = result if not result.channel_major else transpose(result)

    plane: object = fop
    if b2:
        t0 = time.perf_counter()
        plane = transpose(fop)
        t_transpose = time.perf_counter() - t0
    if b3:
        t0 = time.perf_counter()
        plane = reorder(plane if isinstance(plane, Fop) else fop,
                        hm_strategy.cols_per_group, n_hp)
        t_reorder = time.perf_counter() - t0
    return PrepResult(plane=plane, fop=fop, b_discard=b1, b_transpose=b2,
                      b_reorder=b3, t_discard=t_discard, t_transpose=t_transpose,
                      t_reorder=t_reorder, path=path)
