"""Core data types, configuration, file formats, and synthetic input generation.

A series is a 1-D complex64 numpy array holding one dedispersed frequency
series. The filter-output plane (FOP) is a dense float32 power matrix with one
row per filter template and one column per frequency channel; template rows
are indexed by a signed template number centred on zero.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

FOP_MAGIC = b"FOP1"


class FdasError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(FdasError):
    """Invalid configuration value or malformed configuration file."""


class FormatError(FdasError):
    """Structurally invalid binary artifact (FOP / rFOP file)."""


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_pow2(n: int) -> int:
    """Smallest power of two >= n (n >= 1)."""
    if n < 1:
        raise ValueError(f"next_pow2 needs n >= 1, got {n}")
    return 1 << (n - 1).bit_length()


@dataclass(frozen=True)
class FdasConfig:
    """Search-engine sizing parameters.

    Defaults are the full-scale survey requirements. ``desk_scale`` gives a
    configuration small enough for the brute-force oracles to run in seconds
    while preserving the structural ratios (odd template count, power-of-two
    channel count, chunk sizes larger than the filter overlap).
    """

    n_beams: int = 2000
    n_dm_trial: int = 6000
    t_obs: float = 540.0
    n_temp: int = 85
    n_chan: int = 2 ** 21
    n_tap: int = 421
    n_hp: int = 8
    n_cand: int = 200
    t_limit: float | None = None

    def __post_init__(self):
        if self.n_temp < 1 or self.n_temp % 2 == 0:
            raise ConfigError(f"n_temp: must be odd and >= 1, got {self.n_temp}")
        if not is_pow2(self.n_chan):
            raise ConfigError(f"n_chan: must be a power of two, got {self.n_chan}")
        for name in ("n_tap", "n_hp", "n_cand", "n_beams", "n_dm_trial"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.t_obs <= 0:
            raise ConfigError(f"t_obs: must be > 0, got {self.t_obs}")
        if self.t_limit is not None and self.t_limit <= 0:
            raise ConfigError(f"t_limit: must be > 0 when given, got {self.t_limit}")

    @classmethod
    def desk_scale(cls, **overrides) -> "FdasConfig":
        base = dict(n_chan=2 ** 12, n_temp=9, n_tap=33, n_hp=8, n_cand=16)
        base.update(overrides)
        return cls(**base)


_INT_FIELDS = {"n_beams", "n_dm_trial", "n_temp", "n_chan", "n_tap", "n_hp", "n_cand"}
_FLOAT_FIELDS = {"t_obs", "t_limit"}


def load_config(path) -> FdasConfig:
    """Load a JSON config; fields missing from the file take the defaults.

    An empty file is a valid config (all defaults). Unknown keys and wrongly
    typed values raise ConfigError naming the offending field.
    """
    text = Path(path).read_text()
    if not text.strip():
        raw = {}
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    known = {f.name for f in fields(FdasConfig)}
    values = {}
    for key, val in raw.items():
        if key not in known:
            raise ConfigError(f"{key}: unknown config field")
        if key in _INT_FIELDS:
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{key}: expected an integer, got {val!r}")
        elif key in _FLOAT_FIELDS:
            if val is not None and not isinstance(val, (int, float)):
                raise ConfigError(f"{key}: expected a number, got {val!r}")
        values[key] = val
    return FdasConfig(**values)


def save_config(config: FdasConfig, path) -> None:
    Path(path).write_text(json.dumps(asdict(config), indent=2) + "\n")


# --- signed template index mapping ------------------------------------------

def template_offset(n_rows: int) -> int:
    """Storage row of signed template index 0."""
    return (n_rows - 1) // 2


def storage_row(i: int, n_rows: int) -> int:
    """Map signed template index i to a storage row (bijective)."""
    row = i + template_offset(n_rows)
    if not 0 <= row < n_rows:
        raise FdasError(f"template index {i} out of range for {n_rows} rows")
    return row


def signed_index(row: int, n_rows: int) -> int:
    """Inverse of storage_row."""
    if not 0 <= row < n_rows:
        raise FdasError(f"storage row {row} out of range for {n_rows} rows")
    return row - template_offset(n_rows)


def signed_range(n_rows: int) -> np.ndarray:
    """Signed template indices in storage order."""
    return np.arange(n_rows) - template_offset(n_rows)


# --- series ------------------------------------------------------------------

def as_series(x, n_chan: int | None = None) -> np.ndarray:
    """Validate/convert x to a 1-D complex64 series."""
    arr = np.asarray(x)
    if arr.ndim != 1 or arr.size == 0:
        raise FdasError("series must be a non-empty 1-D array")
    arr = arr.astype(np.complex64, copy=False)
    if not np.isfinite(arr.view(np.float32)).all():
        raise FdasError("series contains non-finite values")
    if n_chan is not None and arr.size != n_chan:
        raise FdasError(f"series length {arr.size} != n_chan {n_chan}")
    return arr


def generate_input(config: FdasConfig, injections=(), noise_sigma: float = 0.0,
                   seed: int = 0) -> np.ndarray:
    """Synthesize a frequency series with optional harmonic tone injections.

    Each injection is a (channel, harmonics, amplitude) triple: the tone adds
    ``amplitude`` at channel//k for k = 1..harmonics, so the stated channel
    carries a power peak and so do its integer fractions, which is what the
    harmonic-summing stretch lookups accumulate. noise_sigma is the
    per-component standard deviation of complex Gaussian noise. Deterministic
    for a fixed seed.
    """
    if noise_sigma < 0:
        raise FdasError(f"noise_sigma must be >= 0, got {noise_sigma}")
    n = config.n_chan
    data = np.zeros(n, dtype=np.complex64)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        re = rng.standard_normal(n, dtype=np.float32)
        im = rng.standard_normal(n, dtype=np.float32)
        data += noise_sigma * (re + 1j * im).astype(np.complex64)
    for channel, harmonics, amplitude in injections:
        if not 0 <= channel < n:
            raise FdasError(f"injection channel {channel} out of range [0, {n})")
        if harmonics < 1:
            raise FdasError(f"injection harmonics must be >= 1, got {harmonics}")
        if amplitude <= 0:
            raise FdasError(f"injection amplitude must be > 0, got {amplitude}")
        for k in range(1, harmonics + 1):
            data[channel // k] += np.complex64(amplitude)
    return data


# --- filter bank ---------------------------------------------------------------

@dataclass
class FilterBank:
    """Bank of complex FIR templates; per-template tap counts may differ."""

    templates: list

    def __post_init__(self):
        if not self.templates:
            raise FdasError("filter bank must hold at least one template")
        cleaned = []
        for t, h in enumerate(self.templates):
            arr = np.asarray(h).astype(np.complex64)
            if arr.ndim != 1 or arr.size == 0:
                raise FdasError(f"template {t}: must be a non-empty 1-D array")
            if not np.isfinite(arr.view(np.float32)).all():
                raise FdasError(f"template {t}: contains non-finite coefficients")
            cleaned.append(arr)
        self.templates = cleaned

    @property
    def n_templates(self) -> int:
        return len(self.templates)

    @property
    def max_taps(self) -> int:
        return max(len(h) for h in self.templates)


def synthetic_bank(config: FdasConfig, seed: int = 0,
                   n_templates: int | None = None) -> FilterBank:
    """Random unit-energy templates; the centre template is the identity tap.

    n_templates defaults to config.n_temp; an explicit value (e.g. n_temp - 1
    for half-plane runs) overrides it.
    """
    n = config.n_temp if n_templates is None else n_templates
    if n < 1:
        raise FdasError(f"n_templates must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    centre = template_offset(n)
    templates = []
    for t in range(n):
        if t == centre:
            templates.append(np.array([1.0 + 0.0j], dtype=np.complex64))
            continue
        length = int(rng.integers(max(1, config.n_tap // 2), config.n_tap + 1))
        taps = rng.standard_normal(length) + 1j * rng.standard_normal(length)
        taps /= np.sqrt(np.sum(np.abs(taps) ** 2))
        templates.append(taps.astype(np.complex64))
    return FilterBank(templates)


# --- filter-output plane -------------------------------------------------------

@dataclass
class Fop:
    """Filter-output plane of real power values.

    A canonical plane is template-major (storage row = template); after
    transposition ``channel_major`` is True and the storage axes are swapped.
    Signed template index i maps to storage row i + (n_templates - 1) // 2.
    Planes are immutable after construction by convention.
    """

    values: np.ndarray
    channel_major: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise FormatError("FOP values must be a 2-D matrix")
        if not np.isfinite(v).all():
            raise FormatError("FOP contains non-finite values")
        if (v < 0).any():
            raise FormatError("FOP powers must be non-negative")
        self.values = v

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def n_templates(self) -> int:
        return self.cols if self.channel_major else self.rows

    @property
    def n_channels(self) -> int:
        return self.rows if self.channel_major else self.cols

    @property
    def nbytes(self) -> int:
        return self.values.nbytes

    def template_major(self) -> np.ndarray:
        """The plane in logical (template, channel) orientation (a view)."""
        return self.values.T if self.channel_major else self.values

    def power(self, i: int, j: int) -> np.float32:
        """Power at signed template index i, channel j."""
        row = storage_row(i, self.n_templates)
        if not 0 <= j < self.n_channels:
            raise FdasError(f"channel {j} out of range [0, {self.n_channels})")
        return self.template_major()[row, j]


def save_fop(fop: Fop, path) -> None:
    """Write the binary FOP file (magic, u32 rows, u32 cols, f32 values, LE)."""
    if fop.channel_major:
        raise FormatError("FOP files store template-major planes; transpose first")
    with open(path, "wb") as fh:
        fh.write(FOP_MAGIC)
        fh.write(struct.pack("<II", fop.rows, fop.cols))
        fh.write(np.ascontiguousarray(fop.values, dtype="<f4").tobytes())


def load_fop(path) -> Fop:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != FOP_MAGIC:
        raise FormatError(f"{path}: not a FOP file (bad magic)")
    rows, cols = struct.unpack("<II", blob[4:12])
    expected = rows * cols * 4
    payload = blob[12:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: header says {rows}x{cols} ({rows * cols} values) "
            f"but file carries {len(payload) // 4} values"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()
    return Fop(values)
