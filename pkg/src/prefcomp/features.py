"""Log-Mel observation tensors for the reward model and the agent.

A clip is framed (20 ms frames, 10 ms hop by default), each frame's power
spectrum is pooled through a bank of HTK-style triangular Mel filters, and
the log-power matrix is cut into a fixed stack of fixed-width images.
"""

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from .audio import AudioClip
from .errors import TooShort


@dataclass(frozen=True)
class FeatureConfig:
    frame_ms: float = 20.0
    hop_ms: float = 10.0
    n_mels: int = 80
    n_frames_per_image: int = 80
    n_stack: int = 3
    log_floor: float = 1e-10

    def __post_init__(self):
        if min(self.frame_ms, self.hop_ms, self.n_mels, self.n_frames_per_image,
               self.n_stack, self.log_floor) <= 0:
            raise ValueError("all feature parameters must be positive")
        if self.hop_ms > self.frame_ms:
            raise ValueError("hop must not exceed the frame length")

    def frame_len(self, sample_rate_hz: int) -> int:
        return int(round(self.frame_ms * sample_rate_hz / 1000.0))

    def hop_len(self, sample_rate_hz: int) -> int:
        return int(round(self.hop_ms * sample_rate_hz / 1000.0))

    @property
    def shape(self) -> tuple:
        return (self.n_mels, self.n_frames_per_image, self.n_stack)


# Small config for fast tests; defaults above match the full-scale setup.
DESK_FEATURES = FeatureConfig(n_mels=16, n_frames_per_image=16, n_stack=2)


@dataclass
class Observation:
    """Stacked log-Mel tensor for one rendered clip."""

    tensor: np.ndarray  # (n_mels, n_frames_per_image, n_stack) float32
    source_clip_id: str = ""
    cr_adj_context: tuple | None = None

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=np.float32)
        if not np.all(np.isfinite(self.tensor)):
            raise ValueError("observation tensor must be finite")
        if self.cr_adj_context is not None:
            self.cr_adj_context = tuple(float(v) for v in self.cr_adj_context)

    @property
    def shape(self) -> tuple:
        return self.tensor.shape


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular Mel filters spanning 0..Nyquist; shape (n_mels, n_fft//2+1)."""
    nyquist = sample_rate_hz / 2.0
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(nyquist), n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate_hz)
    fb = np.zeros((n_mels, len(bin_freqs)))
    for m in range(n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (bin_freqs - left) / max(center - left, 1e-9)
        down = (right - bin_freqs) / max(right - center, 1e-9)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def log_mel_spectrogram(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Log Mel-power matrix of shape (n_mels, T), T = (len - frame)//hop + 1."""
    frame = cfg.frame_len(clip.sample_rate_hz)
    hop = cfg.hop_len(clip.sample_rate_hz)
    x = clip.samples
    if len(x) < frame:
        raise TooShort(
            f"clip {clip.id!r} has {len(x)} samples; one frame needs {frame}"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, frame)[::hop]
    window = get_window("hann", frame, fftbins=True)
    spectra = np.fft.rfft(frames * window, axis=1)
    power = np.abs(spectra) ** 2
    fb = mel_filterbank(cfg.n_mels, frame, clip.sample_rate_hz)
    mel_power = power @ fb.T  # (T, n_mels)
    return np.log(mel_power + cfg.log_floor).T


def make_observation(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> Observation:
    """Cut the log-Mel matrix into n_stack consecutive images of fixed width.

    Block k covers frames [k*W, (k+1)*W); missing tail frames are padded with
    the log floor so the output shape is constant for any input length.
    """
    mat = log_mel_spectrogram(clip, cfg)
    w = cfg.n_frames_per_image
    needed = w * cfg.n_stack
    t = mat.shape[1]
    if t < needed:
        pad_value = np.log(cfg.log_floor)
        mat = np.pad(mat, ((0, 0), (0, needed - t)), constant_values=pad_value)
    tensor = np.empty((cfg.n_mels, w, cfg.n_stack), dtype=np.float32)
    for k in range(cfg.n_stack):
        tensor[:, :, k] = mat[:, k * w : (k + 1) * w]
    return Observation(tensor=tensor, source_clip_id=clip.id)


class FeatureCache:
    """Optional on-disk cache of observation tensors.

    Binary layout per entry: magic, ndim, shape (u32 each), then little-endian
    float32 values in row-major order.
    """

    _MAGIC = b"PCFT"

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in key)
        return self.directory / f"{safe}.feat"

    def put(self, key: str, tensor: np.ndarray) -> None:
        tensor = np.asarray(tensor, dtype=np.float32)
        header = self._MAGIC + struct.pack("<I", tensor.ndim)
        header += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        self._path(key).write_bytes(header + tensor.tobytes(order="C"))

    def get(self, key: str) -> np.ndarray | None:
        path = self._path(key)
        if not path.exists():
            return None
        raw = path.read_bytes()
        if raw[:4] != self._MAGIC:
            return None
        (ndim,) = struct.unpack("<I", raw[4:8])
        shape = struct.unpack(f"<{ndim}I", raw[8 : 8 + 4 * ndim])
        values = np.frombuffer(raw[8 + 4 * ndim :], dtype=np.float32)
        return values.reshape(shape).copy()
