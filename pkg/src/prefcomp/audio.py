"""Audio ingest: WAV I/O, corpus manifests, resampling, and SNR mixing.

Any directory of WAV files plus one noise WAV works as listening material;
a synthetic fixture corpus generator is provided for tests and demos.
"""

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin, kaiserord, resample_poly

from .errors import FormatError, InvalidRate, NoAudioFound, ZeroPowerError


@dataclass
class AudioClip:
    """Mono sample buffer with its sample rate; the unit of listening material."""

    samples: np.ndarray
    sample_rate_hz: int
    id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("AudioClip requires a non-empty 1-D sample buffer")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioClip samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise InvalidRate(f"sample rate must be positive, got {self.sample_rate_hz}")
        self.sample_rate_hz = int(self.sample_rate_hz)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def power(self) -> float:
        """Mean squared amplitude."""
        return float(np.mean(self.samples**2))


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: str
    speaker: str
    sentence: str


@dataclass
class CorpusManifest:
    entries: list

    def __post_init__(self):
        ids = [e.clip_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest clip ids must be unique")

    def __len__(self):
        return len(self.entries)

    def save(self, path):
        lines = [
            f"{e.clip_id}\t{e.path}\t{e.speaker}\t{e.sentence}" for e in self.entries
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        entries = []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            clip_id, p, speaker, sentence = line.split("\t")
            entries.append(ManifestEntry(clip_id, p, speaker, sentence))
        return cls(entries)


def _probe_wav(path: Path) -> None:
    """Light header validation: RIFF/WAVE magic plus fmt and data chunks."""
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(path, str(exc)) from exc
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(path, "missing RIFF/WAVE header")
    pos = 12
    seen = set()
    while pos + 8 <= len(raw):
        tag = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        if tag == b"data":
            if pos + 8 + size > len(raw):
                raise FormatError(path, "data chunk truncated")
            seen.add(b"data")
        elif tag == b"fmt ":
            if size < 16 or pos + 8 + size > len(raw):
                raise FormatError(path, "fmt chunk truncated")
            seen.add(b"fmt ")
        pos += 8 + size + (size % 2)
    if b"fmt " not in seen or b"data" not in seen:
        raise FormatError(path, "missing fmt or data chunk")


def read_wav(path) -> AudioClip:
    """Read a RIFF WAV (PCM 16/32-bit or float) into a normalized mono clip."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError, EOFError) as exc:
        raise FormatError(path, str(exc)) from exc
    data = np.asarray(data)
    if data.ndim == 2:  # average channels down to mono
        data = data.mean(axis=1)
    if data.size == 0:
        raise FormatError(path, "empty data chunk")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    return AudioClip(samples, int(rate), id=path.stem)


def write_wav(path, clip: AudioClip, pcm16: bool = False) -> None:
    """Write a clip as float32 WAV (default) or 16-bit PCM."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if pcm16:
        scaled = np.clip(clip.samples, -1.0, 1.0)
        wavfile.write(path, clip.sample_rate_hz, (scaled * 32767.0).astype(np.int16))
    else:
        wavfile.write(path, clip.sample_rate_hz, clip.samples.astype(np.float32))


def load_corpus(root) -> CorpusManifest:
    """Build a manifest of every WAV under ``root``, sorted by path.

    Speaker tag is the parent directory name (or the stem prefix before the
    first underscore for flat layouts); sentence tag is the file stem.
    """
    root = Path(root)
    paths = sorted(root.rglob("*.wav")) + sorted(root.rglob("*.WAV"))
    paths = sorted(set(paths))
    if not paths:
        raise NoAudioFound(f"no WAV files under {root}")
    entries = []
    for p in paths:
        _probe_wav(p)
        if p.parent != root:
            speaker = p.parent.name
        else:
            speaker = p.stem.split("_")[0]
        entries.append(
            ManifestEntry(
                clip_id=str(p.relative_to(root).with_suffix("")),
                path=str(p),
                speaker=speaker,
                sentence=p.stem,
            )
        )
    return CorpusManifest(entries)


def _antialias_taps(up: int, down: int) -> np.ndarray:
    # Passband edge at 0.8x the new Nyquist, stopband edge at 0.875x, so
    # near-Nyquist components are fully attenuated rather than left in a
    # shallow transition band.
    f_c = 1.0 / max(up, down)
    width = 0.075 * f_c
    ntaps, beta = kaiserord(65.0, width)
    ntaps += 1 - ntaps % 2  # linear phase needs odd length
    return firwin(ntaps, 0.8375 * f_c, window=("kaiser", beta))


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Resample to ``target_hz`` with a conservative anti-alias filter."""
    if int(target_hz) <= 0:
        raise InvalidRate(f"target rate must be positive, got {target_hz}")
    target_hz = int(target_hz)
    if target_hz == clip.sample_rate_hz:
        return AudioClip(
            clip.samples.copy(), clip.sample_rate_hz, id=clip.id, meta=dict(clip.meta)
        )
    g = math.gcd(clip.sample_rate_hz, target_hz)
    up, down = target_hz // g, clip.sample_rate_hz // g
    taps = _antialias_taps(up, down)
    out = resample_poly(clip.samples, up, down, window=taps)
    return AudioClip(out, target_hz, id=f"{clip.id}@{target_hz}")


def mix_at_snr(
    speech: AudioClip,
    noise: AudioClip,
    snr_db: float,
    rng: np.random.Generator | None = None,
    noise_offset: int | None = None,
) -> AudioClip:
    """Mix noise under speech at an exact SNR, peak-normalizing the result.

    The noise segment starts at ``noise_offset`` (drawn from ``rng`` when not
    given) and wraps around if the noise is shorter than the speech. The peak
    guard applies one common scalar, so the realized SNR is exact.
    """
    if speech.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError("speech and noise must share a sample rate")
    if noise_offset is None:
        noise_offset = int(rng.integers(0, len(noise.samples))) if rng is not None else 0
    idx = (noise_offset + np.arange(len(speech.samples))) % len(noise.samples)
    segment = noise.samples[idx]

    p_speech = float(np.mean(speech.samples**2))
    p_noise = float(np.mean(segment**2))
    if p_speech == 0.0 or p_noise == 0.0:
        raise ZeroPowerError("cannot mix a silent signal at a target SNR")

    scale = math.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = speech.samples + scale * segment
    peak = float(np.max(np.abs(mixed)))
    rescale = 1.0
    if peak > 1.0:
        rescale = 1.0 / peak
        mixed = mixed * rescale
    return AudioClip(
        mixed,
        speech.sample_rate_hz,
        id=f"{speech.id}+{noise.id}@{snr_db:g}dB+off{noise_offset}",
        meta={"noise_scale": scale, "peak_rescale": rescale, "noise_offset": noise_offset},
    )


def make_fixture_corpus(
    root,
    n_clips: int = 12,
    n_speakers: int = 3,
    duration_s: float = 2.0,
    sample_rate: int = 16000,
    seed: int = 0,
):
    """Write a small synthetic corpus (tone-complex "speech" and a filtered-noise
    "babble" file) and return (corpus_dir, noise_path).

    The real study corpora are not redistributable; this stands in for tests
    and demos.
    """
    root = Path(root)
    corpus_dir = root / "speech"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n = int(duration_s * sample_rate)
    t = np.arange(n) / sample_rate
    for k in range(n_clips):
        speaker = k % n_speakers
        f0 = 110.0 * (1.0 + 0.25 * speaker) * (1.0 + 0.05 * rng.standard_normal())
        sig = np.zeros(n)
        for h in range(1, 9):
            sig += rng.uniform(0.3, 1.0) / h * np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi))
        # slow amplitude contour so clips are not stationary
        env = 0.4 + 0.6 * (0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.8, 2.5) * t + rng.uniform(0, 2 * np.pi)))
        sig = sig * env
        sig = 0.3 * sig / np.max(np.abs(sig))
        clip = AudioClip(sig, sample_rate, id=f"sp{speaker}_s{k:03d}")
        write_wav(corpus_dir / f"sp{speaker}_s{k:03d}.wav", clip)

    # "babble": white noise shaped by a moving-average lowpass
    noise = rng.standard_normal(int(4.0 * sample_rate))
    kernel = np.ones(8) / 8.0
    noise = np.convolve(noise, kernel, mode="same")
    noise = 0.3 * noise / np.max(np.abs(noise))
    noise_path = root / "babble.wav"
    write_wav(noise_path, AudioClip(noise, sample_rate, id="babble"))
    return corpus_dir, noise_path
