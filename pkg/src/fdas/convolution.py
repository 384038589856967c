"""Filter-bank convolution strategies and power spectra.

Four interchangeable routes apply a bank of FIR templates to one input series:
direct time-domain summation, coefficient-split overlap-add, single-transform
frequency-domain convolution, and chunked overlap-save. All use the causal
zero-history boundary (x[i-j] = 0 for i-j < 0) and agree on the resulting
filter-output plane within single-precision tolerance.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import FdasError, FilterBank, Fop, as_series, is_pow2, next_pow2
from .dft import DftPlan, dft
from .pipeline import StageTiming


class ConvolutionError(FdasError):
    """Invalid convolution input or strategy parameters."""


# --- strategies -----------------------------------------------------------------

@dataclass(frozen=True)
class NaiveTd:
    """Direct time-domain summation, one full-length filter per template."""

    kind = "naive-td"


@dataclass(frozen=True)
class OlaTd:
    """Overlap-add: the coefficient array is split into n_paral-tap sub-filters."""

    n_paral: int = 128
    kind = "ola-td"

    def __post_init__(self):
        if not is_pow2(self.n_paral):
            raise ConvolutionError(
                f"ola-td n_paral must be a power of two, got {self.n_paral}")


@dataclass(frozen=True)
class NaiveFd:
    """Single full-length frequency-domain convolution per template."""

    kind = "naive-fd"


@dataclass(frozen=True)
class OlsFd:
    """Overlap-save: the input is chunked with an n_tap-1 point overlap."""

    chunk: int = 2048
    engines: int = 1
    kind = "ols-fd"

    def __post_init__(self):
        if not is_pow2(self.chunk):
            raise ConvolutionError(
                f"ols-fd chunk must be a power of two, got {self.chunk}")
        if self.engines not in (1, 2):
            raise ConvolutionError(f"ols-fd engines must be 1 or 2, got {self.engines}")


CONV_KINDS = {"naive-td": NaiveTd, "ola-td": OlaTd, "naive-fd": NaiveFd,
              "ols-fd": OlsFd}


# --- elementary operations --------------------------------------------------------

def power_spectrum(y) -> np.ndarray:
    """Elementwise power re^2 + im^2 (float32 for complex64 input)."""
    arr = np.asarray(y)
    return arr.real ** 2 + arr.imag ** 2


def fir_naive_td(x, h) -> np.ndarray:
    """y[i] = sum_j x[i-j] h[j], zero history, output length == len(x)."""
    x = np.asarray(x)
    h = np.asarray(h)
    if x.size == 0 or h.size == 0:
        raise ConvolutionError("input and coefficients must be non-empty")
    y = np.convolve(x, h)[: x.size]
    return y.astype(np.complex64 if x.dtype == np.complex64 else np.complex128)


def ola_launch_count(n_tap: int, n_paral: int) -> int:
    """Number of sub-filter launches for an n_tap filter split n_paral wide."""
    return -(-n_tap // n_paral)


def ola_padded_length(n_tap: int, n_paral: int) -> int:
    """Effective filter length after zero-padding the last sub-array."""
    return ola_launch_count(n_tap, n_paral) * n_paral


def fir_ola_td(x, h, n_paral: int) -> np.ndarray:
    """Overlap-add split of the coefficients; identical to fir_naive_td.

    The filter is cut into ola_launch_count(len(h), n_paral) sub-filters of
    n_paral taps (last one zero-padded); each sub-filter output is delayed by
    its offset and the partials are summed.
    """
    x = np.asarray(x)
    h = np.asarray(h)
    if x.size == 0 or h.size == 0:
        raise ConvolutionError("input and coefficients must be non-empty")
    if n_paral < 1:
        raise ConvolutionError(f"n_paral must be >= 1, got {n_paral}")
    n = x.size
    y = np.zeros(n, dtype=np.complex64 if x.dtype == np.complex64 else np.complex128)
    for p in range(ola_launch_count(h.size, n_paral)):
        sub = h[p * n_paral:(p + 1) * n_paral]
        if not sub.any():
            continue
        part = np.convolve(x, sub)
        delay = p * n_paral
        if delay < n:
            y[delay:] += part[: n - delay].astype(y.dtype)
    return y


def fir_naive_fd(x, h) -> np.ndarray:
    """Frequency-domain convolution: transform, multiply, inverse-transform."""
    x = np.asarray(x)
    h = np.asarray(h)
    if x.size == 0 or h.size == 0:
        raise ConvolutionError("input and coefficients must be non-empty")
    n = x.size
    size = next_pow2(n + h.size - 1)
    fwd = DftPlan(size, "forward")
    inv = DftPlan(size, "inverse")
    xx = np.zeros(size, dtype=np.complex128)
    xx[:n] = x
    hh = np.zeros(size, dtype=np.complex128)
    hh[: h.size] = h
    y = dft(inv, dft(fwd, xx) * dft(fwd, hh))[:n]
    return y.astype(np.complex64 if x.dtype == np.complex64 else np.complex128)


# --- chunked overlap-save ----------------------------------------------------------

@dataclass
class ConvRawOutput:
    """Per-template chunked outputs with the invalid overlap prefixes present.

    The first ``overlap`` points of every chunk are circular-wrap artefacts
    and must be discarded before the plane is consumed; each chunk then
    contributes chunk_len - overlap valid columns.
    """

    chunks: np.ndarray  # (n_templates, n_chunks, chunk_len) complex64
    overlap: int
    n_cols: int

    def __post_init__(self):
        arr = np.asarray(self.chunks, dtype=np.complex64)
        if arr.ndim != 3:
            raise ConvolutionError("raw chunks must be a 3-D array")
        self.chunks = arr
        if not 0 <= self.overlap < self.chunk_len:
            raise ConvolutionError(
                f"overlap {self.overlap} out of range for chunk length {self.chunk_len}")
        if self.n_cols > self.n_chunks * self.advance:
            raise ConvolutionError(
                f"{self.n_chunks} chunks of {self.advance} valid points "
                f"cannot cover {self.n_cols} columns")

    @property
    def n_templates(self) -> int:
        return self.chunks.shape[0]

    @property
    def n_chunks(self) -> int:
        return self.chunks.shape[1]

    @property
    def chunk_len(self) -> int:
        return self.chunks.shape[2]

    @property
    def advance(self) -> int:
        return self.chunk_len - self.overlap


def ols_chunk_count(n: int, chunk: int, overlap: int) -> int:
    """Chunks needed to cover n points when each yields chunk - overlap."""
    if chunk <= overlap:
        raise ConvolutionError(f"chunk {chunk} too small for overlap {overlap}")
    return -(-n // (chunk - overlap))


def _chunk_spectra(x: np.ndarray, chunk: int, overlap: int):
    """Zero-prefix the input, cut overlapping chunks, transform each once."""
    n = x.size
    advance = chunk - overlap
    n_chunks = ols_chunk_count(n, chunk, overlap)
    padded = np.zeros(overlap + n_chunks * advance, dtype=np.complex128)
    padded[overlap: overlap + n] = x
    fwd = DftPlan(chunk, "forward")
    spectra = [dft(fwd, padded[m * advance: m * advance + chunk])
               for m in range(n_chunks)]
    return spectra


def _ols_template(spectra, h, chunk: int, overlap: int) -> np.ndarray:
    """Per-chunk circular convolution of one template against cached spectra."""
    if h.size - 1 > overlap:
        raise ConvolutionError(
            f"template has {h.size} taps but the chunk overlap is only {overlap}")
    fwd = DftPlan(chunk, "forward")
    inv = DftPlan(chunk, "inverse")
    hh = np.zeros(chunk, dtype=np.complex128)
    hh[: h.size] = h
    spectrum_h = dft(fwd, hh)
    out = np.empty((len(spectra), chunk), dtype=np.complex64)
    for m, spectrum in enumerate(spectra):
        out[m] = dft(inv, spectrum * spectrum_h).astype(np.complex64)
    return out


def assemble_ols(raw: ConvRawOutput, template: int = 0) -> np.ndarray:
    """Drop each chunk's invalid prefix and concatenate the valid points."""
    valid = raw.chunks[template, :, raw.overlap:]
    return valid.reshape(-1)[: raw.n_cols]


def fir_ols_fd(x, h, chunk: int):
    """Chunked overlap-save convolution of a single filter.

    Returns the assembled series (valid points only) together with the raw
    chunked output whose per-chunk invalid prefixes are still present.
    """
    x = np.asarray(x)
    h = np.asarray(h)
    if x.size == 0 or h.size == 0:
        raise ConvolutionError("input and coefficients must be non-empty")
    if not is_pow2(chunk):
        raise ConvolutionError(f"chunk must be a power of two, got {chunk}")
    overlap = h.size - 1
    spectra = _chunk_spectra(x, chunk, overlap)
    chunks = _ols_template(spectra, h, chunk, overlap)[np.newaxis]
    raw = ConvRawOutput(chunks=chunks, overlap=overlap, n_cols=x.size)
    return assemble_ols(raw, 0), raw


# --- bank application ----------------------------------------------------------------

def _template_groups(n_templates: int, filters_per_launch: int) -> list:
    if filters_per_launch < 1:
        raise ConvolutionError("filters_per_launch must be >= 1")
    return [list(range(g, min(g + filters_per_launch, n_templates)))
            for g in range(0, n_templates, filters_per_launch)]


def convolve_bank(x, bank: FilterBank, strategy, *, filters_per_launch: int = 1,
                  threads: int = 1):
    """Apply every template of the bank to one series.

    Returns (Fop, StageTiming) for strategies that emit the power plane
    directly and (ConvRawOutput, StageTiming) for chunked overlap-save, whose
    invalid points are removed later by the plane-preparation discard. The
    forward transform(s) of the input are computed once and reused across all
    templates (visible in StageTiming.input_transforms); per-launch wall times
    and the launch count are recorded. Results are independent of the thread
    count.
    """
    x = as_series(x)
    n = x.size
    groups = _template_groups(bank.n_templates, filters_per_launch)
    input_transform_time = 0.0
    input_transforms = 0
    if not isinstance(strategy, OlsFd):
        rows = np.empty((bank.n_templates, n), dtype=np.float32)

    if isinstance(strategy, NaiveTd):
        def run_group(group):
            t0 = time.perf_counter()
            for t in group:
                rows[t] = power_spectrum(fir_naive_td(x, bank.templates[t]))
            return [time.perf_counter() - t0]

    elif isinstance(strategy, OlaTd):
        # launch accounting uses the bank-wide maximum tap count: the split is
        # sized once for the bank, shorter templates just carry zero taps
        count = ola_launch_count(bank.max_taps, strategy.n_paral)

        def run_group(group):
            times = []
            partial = {t: np.zeros(n, dtype=np.complex64) for t in group}
            for p in range(count):
                t0 = time.perf_counter()
                for t in group:
                    sub = bank.templates[t][p * strategy.n_paral:(p + 1) * strategy.n_paral]
                    if sub.size and sub.any():
                        part = np.convolve(x, sub)
                        delay = p * strategy.n_paral
                        if delay < n:
                            partial[t][delay:] += part[: n - delay].astype(np.complex64)
                times.append(time.perf_counter() - t0)
            for t in group:
                rows[t] = power_spectrum(partial[t])
            return times

    elif isinstance(strategy, NaiveFd):
        size = next_pow2(n + bank.max_taps - 1)
        fwd = DftPlan(size, "forward")
        inv = DftPlan(size, "inverse")
        xx = np.zeros(size, dtype=np.complex128)
        xx[:n] = x
        t0 = time.perf_counter()
        spectrum_x = dft(fwd, xx)
        input_transform_time = time.perf_counter() - t0
        input_transforms = 1

        def run_group(group):
            t0 = time.perf_counter()
            for t in group:
                h = bank.templates[t]
                hh = np.zeros(size, dtype=np.complex128)
                hh[: h.size] = h
                y = dft(inv, spectrum_x * dft(fwd, hh))[:n]
                rows[t] = power_spectrum(y.astype(np.complex64))
            return [time.perf_counter() - t0]

    elif isinstance(strategy, OlsFd):
        overlap = bank.max_taps - 1
        t0 = time.perf_counter()
        spectra = _chunk_spectra(x, strategy.chunk, overlap)
        input_transform_time = time.perf_counter() - t0
        input_transforms = len(spectra)
        chunk_rows = np.empty((bank.n_templates, len(spectra), strategy.chunk),
                              dtype=np.complex64)

        def run_group(group):
            t0 = time.perf_counter()
            for t in group:
                chunk_rows[t] = _ols_template(spectra, bank.templates[t],
                                              strategy.chunk, overlap)
            return [time.perf_counter() - t0]

    else:
        raise ConvolutionError(f"unknown convolution strategy {strategy!r}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_group, groups))
    else:
        results = [run_group(g) for g in groups]
    per_launch = [t for times in results for t in times]

    st = StageTiming(per_launch=per_launch,
                     t_input_transform=input_transform_time,
                     input_transforms=input_transforms)
    if isinstance(strategy, OlsFd):
        return ConvRawOutput(chunks=chunk_rows, overlap=overlap, n_cols=n), st
    return Fop(rows), st
