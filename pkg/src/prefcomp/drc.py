"""Multiband dynamic range compression.

Feed-forward design: band split, per-band RMS level detection, a piecewise
static gain curve with a moderate threshold (band CR) and a loud threshold
(fixed limiter ratio), attack/release gain smoothing, and band summation.
Band splitting uses zero-phase spectral masking; every rfft bin belongs to
exactly one band (bins above the top edge fold into the top band), so the
band sum reconstructs the input at machine precision.
"""

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio import AudioClip
from .errors import BandSpecError

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dep, but keep a fallback
    njit = None

_ENV_FLOOR = 1e-12


@dataclass(frozen=True)
class BandSpec:
    """Ordered band boundaries in Hz; N+1 edges define N bands."""

    edges_hz: tuple = (0.0, 500.0, 1000.0, 2000.0, 4000.0, 6000.0)

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges_hz)
        object.__setattr__(self, "edges_hz", edges)
        if len(edges) < 2:
            raise BandSpecError("need at least two band edges")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise BandSpecError(f"band edges must be strictly increasing: {edges}")
        if edges[0] < 0:
            raise BandSpecError("band edges must be non-negative")

    @property
    def n_bands(self) -> int:
        return len(self.edges_hz) - 1

    def check_rate(self, sample_rate_hz: int) -> None:
        if self.edges_hz[-1] > sample_rate_hz / 2:
            raise BandSpecError(
                f"top band edge {self.edges_hz[-1]} Hz exceeds Nyquist "
                f"({sample_rate_hz / 2} Hz)"
            )


DEFAULT_BANDS = BandSpec()


@dataclass(frozen=True)
class BandCompression:
    """Static-curve parameters for a single band."""

    ratio: float
    gain_db: float
    ct_moderate_db: float
    ct_loud_db: float
    limiter_ratio: float


@dataclass
class CompressionParams:
    """Per-band compression ratios and linear gains plus shared constants."""

    ratios: tuple
    gains_db: tuple
    ct_moderate_db: float = 60.0
    ct_loud_db: float = 80.0
    attack_s: float = 0.01
    release_s: float = 1.0
    limiter_ratio: float = 10.0

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        self.gains_db = tuple(float(g) for g in self.gains_db)
        if len(self.ratios) != len(self.gains_db):
            raise ValueError("ratios and gains_db must have equal length")
        if any(r < 1.0 for r in self.ratios):
            raise ValueError(f"compression ratios must be >= 1, got {self.ratios}")
        if not self.ct_moderate_db < self.ct_loud_db:
            raise ValueError("moderate threshold must lie below loud threshold")
        if self.attack_s <= 0 or self.release_s <= 0:
            raise ValueError("attack and release times must be positive")
        if self.limiter_ratio < 1.0:
            raise ValueError("limiter ratio must be >= 1")

    @property
    def n_bands(self) -> int:
        return len(self.ratios)

    def band(self, i: int) -> BandCompression:
        return BandCompression(
            ratio=self.ratios[i],
            gain_db=self.gains_db[i],
            ct_moderate_db=self.ct_moderate_db,
            ct_loud_db=self.ct_loud_db,
            limiter_ratio=self.limiter_ratio,
        )

    def with_ratios(self, ratios) -> "CompressionParams":
        return replace(self, ratios=tuple(float(r) for r in ratios))

    def to_json(self) -> str:
        return json.dumps(
            {
                "ratios": list(self.ratios),
                "gains_db": list(self.gains_db),
                "ct_moderate_db": self.ct_moderate_db,
                "ct_loud_db": self.ct_loud_db,
                "attack_s": self.attack_s,
                "release_s": self.release_s,
                "limiter_ratio": self.limiter_ratio,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CompressionParams":
        d = json.loads(text)
        return cls(
            ratios=tuple(d["ratios"]),
            gains_db=tuple(d["gains_db"]),
            ct_moderate_db=d.get("ct_moderate_db", 60.0),
            ct_loud_db=d.get("ct_loud_db", 80.0),
            attack_s=d.get("attack_s", 0.01),
            release_s=d.get("release_s", 1.0),
            limiter_ratio=d.get("limiter_ratio", 10.0),
        )

    @classmethod
    def from_json_file(cls, path) -> "CompressionParams":
        return cls.from_json(Path(path).read_text())


def split_bands(clip: AudioClip, bands: BandSpec = DEFAULT_BANDS) -> list:
    """Split a clip into per-band signals whose sum equals the input."""
    bands.check_rate(clip.sample_rate_hz)
    x = clip.samples
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), d=1.0 / clip.sample_rate_hz)
    edges = bands.edges_hz
    out = []
    for i in range(bands.n_bands):
        lo, hi = edges[i], edges[i + 1]
        if i == bands.n_bands - 1:
            mask = freqs >= lo  # top band absorbs everything up to Nyquist
        else:
            mask = (freqs >= lo) & (freqs < hi)
        out.append(np.fft.irfft(np.where(mask, spectrum, 0.0), n=len(x)))
    return out


def static_gain_db(level_db, band: BandCompression):
    """Piecewise-linear static gain curve, continuous in level.

    Linear gain below the moderate threshold, the band's CR between the two
    thresholds, and the limiter ratio above the loud threshold.
    """
    level_db = np.asarray(level_db, dtype=np.float64)
    g0 = band.gain_db
    ct1, ct2 = band.ct_moderate_db, band.ct_loud_db
    slope_cr = 1.0 - 1.0 / band.ratio
    slope_lim = 1.0 - 1.0 / band.limiter_ratio
    mid = g0 - (level_db - ct1) * slope_cr
    top = g0 - (ct2 - ct1) * slope_cr - (level_db - ct2) * slope_lim
    out = np.where(level_db < ct1, g0, np.where(level_db < ct2, mid, top))
    return out if out.ndim else float(out)


def _smooth_py(x, a_attack, a_release):
    y = np.empty_like(x)
    y[0] = x[0]
    for n in range(1, len(x)):
        a = a_attack if x[n] < y[n - 1] else a_release
        y[n] = a * y[n - 1] + (1.0 - a) * x[n]
    return y


if njit is not None:
    _smooth_jit = njit(cache=True)(_smooth_py)
else:  # pragma: no cover
    _smooth_jit = _smooth_py


def smooth_gain(raw_gain_db, attack_s: float, release_s: float, sample_rate_hz: int):
    """One-pole smoothing of a gain trajectory.

    The attack constant applies while gain is falling (more compression), the
    release constant while it recovers. Coefficients are exp(-1/(tau*fs)).
    """
    if attack_s <= 0 or release_s <= 0:
        raise ValueError("time constants must be positive")
    x = np.ascontiguousarray(raw_gain_db, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    a_attack = math.exp(-1.0 / (attack_s * sample_rate_hz))
    a_release = math.exp(-1.0 / (release_s * sample_rate_hz))
    return _smooth_jit(x, a_attack, a_release)


def rms_level_db(
    x: np.ndarray,
    sample_rate_hz: int,
    calibration_db: float = 100.0,
    window_s: float = 0.001,
) -> np.ndarray:
    """Causal short-window RMS level in dB, with digital full scale mapped to
    ``calibration_db``."""
    x = np.asarray(x, dtype=np.float64)
    w = max(1, int(round(window_s * sample_rate_hz)))
    c = np.concatenate(([0.0], np.cumsum(x * x)))
    n = len(x)
    counts = np.minimum(np.arange(1, n + 1), w)
    starts = np.maximum(np.arange(1, n + 1) - w, 0)
    env = (c[1:] - c[starts]) / counts
    return calibration_db + 10.0 * np.log10(env + _ENV_FLOOR)


def compress(
    clip: AudioClip,
    bands: BandSpec = DEFAULT_BANDS,
    params: CompressionParams | None = None,
    input_calibration_db: float = 100.0,
) -> AudioClip:
    """Apply multiband compression and return the rendered clip.

    A final peak guard rescales only when |sample| > 1 and records the factor
    under ``meta["peak_rescale"]``.
    """
    if params is None:
        raise ValueError("params is required")
    if params.n_bands != bands.n_bands:
        raise ValueError(
            f"params cover {params.n_bands} bands but the layout has {bands.n_bands}"
        )
    band_signals = split_bands(clip, bands)
    fs = clip.sample_rate_hz
    out = np.zeros(len(clip.samples))
    for i, sig in enumerate(band_signals):
        level = rms_level_db(sig, fs, input_calibration_db)
        raw = static_gain_db(level, params.band(i))
        smoothed = smooth_gain(raw, params.attack_s, params.release_s, fs)
        out += sig * 10.0 ** (smoothed / 20.0)
    peak = float(np.max(np.abs(out))) if out.size else 0.0
    rescale = 1.0
    if peak > 1.0:
        rescale = 1.0 / peak
        out = out * rescale
    return AudioClip(
        out,
        fs,
        id=f"{clip.id}|cr{','.join(f'{r:g}' for r in params.ratios)}",
        meta={"peak_rescale": rescale},
    )
