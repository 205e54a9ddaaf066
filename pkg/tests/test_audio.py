import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefcomp.audio import (
    AudioClip,
    CorpusManifest,
    load_corpus,
    make_fixture_corpus,
    mix_at_snr,
    read_wav,
    resample,
    write_wav,
)
from prefcomp.errors import FormatError, InvalidRate, NoAudioFound, ZeroPowerError

from conftest import tone, tone_amplitude


def test_audioclip_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError):
        AudioClip(np.array([]), 16000)
    with pytest.raises(ValueError):
        AudioClip(np.array([0.0, np.nan]), 16000)


def test_wav_roundtrip_float_and_pcm16(tmp_path):
    clip = tone(440.0, duration_s=0.1, amplitude=0.25)
    write_wav(tmp_path / "f32.wav", clip)
    back = read_wav(tmp_path / "f32.wav")
    assert back.sample_rate_hz == 16000
    assert np.allclose(back.samples, clip.samples, atol=1e-6)

    write_wav(tmp_path / "p16.wav", clip, pcm16=True)
    back16 = read_wav(tmp_path / "p16.wav")
    assert np.allclose(back16.samples, clip.samples, atol=1e-3)


def test_load_corpus_sorted_and_complete(tmp_path):
    for name in ("c.wav", "a.wav", "b.wav"):
        write_wav(tmp_path / name, tone(200.0, 0.05))
    manifest = load_corpus(tmp_path)
    assert [e.sentence for e in manifest.entries] == ["a", "b", "c"]
    assert len(manifest) == 3


def test_load_corpus_empty_dir(tmp_path):
    with pytest.raises(NoAudioFound):
        load_corpus(tmp_path)


def test_load_corpus_corrupt_header_names_file(tmp_path):
    write_wav(tmp_path / "good.wav", tone(200.0, 0.05))
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"RIFF\x00\x00\x00\x00WAVEfmt ")  # truncated fmt chunk
    with pytest.raises(FormatError) as err:
        load_corpus(tmp_path)
    assert "bad.wav" in str(err.value)


def test_manifest_text_roundtrip(tmp_path):
    write_wav(tmp_path / "a.wav", tone(200.0, 0.05))
    manifest = load_corpus(tmp_path)
    manifest.save(tmp_path / "index.tsv")
    back = CorpusManifest.load(tmp_path / "index.tsv")
    assert back.entries == manifest.entries


def test_resample_length_ratio():
    clip = tone(440.0, duration_s=2.0, sample_rate_hz=48000)
    assert len(clip.samples) == 96000
    out = resample(clip, 16000)
    assert out.sample_rate_hz == 16000
    assert abs(len(out.samples) - 32000) <= 1


def test_resample_identity_rate():
    clip = tone(440.0, 0.1)
    out = resample(clip, clip.sample_rate_hz)
    assert np.array_equal(out.samples, clip.samples)


def test_resample_rejects_bad_rate():
    clip = tone(440.0, 0.1)
    with pytest.raises(InvalidRate):
        resample(clip, 0)
    with pytest.raises(InvalidRate):
        resample(clip, -8000)


def test_resample_antialias_attenuates_near_nyquist():
    # A 7 kHz component must drop at least 40 dB more than a 1 kHz control
    # when going 48 kHz -> 16 kHz.
    hi = tone(7000.0, 1.0, 48000, amplitude=0.5)
    lo = tone(1000.0, 1.0, 48000, amplitude=0.5)
    hi16, lo16 = resample(hi, 16000), resample(lo, 16000)
    att_hi = 20 * np.log10(0.5 / max(tone_amplitude(hi16.samples, 16000, 7000.0), 1e-12))
    att_lo = 20 * np.log10(0.5 / max(tone_amplitude(lo16.samples, 16000, 1000.0), 1e-12))
    assert att_hi - att_lo >= 40.0
    assert abs(att_lo) < 1.0  # control must pass essentially untouched


def test_resample_roundtrip_preserves_tone_power():
    clip = tone(300.0, 1.0, 16000, amplitude=0.4)
    back = resample(resample(clip, 48000), 16000)
    a0 = tone_amplitude(clip.samples, 16000, 300.0)
    a1 = tone_amplitude(back.samples[: len(clip.samples)], 16000, 300.0)
    assert abs(20 * np.log10(a1 / a0)) <= 0.5


def _measured_snr(mixed: AudioClip, speech: AudioClip) -> float:
    # mixed = (speech + scale*noise) * rescale, so subtracting the rescaled
    # speech isolates the noise component exactly.
    rescale = mixed.meta["peak_rescale"]
    noise_part = mixed.samples - speech.samples * rescale
    p_s = np.mean((speech.samples * rescale) ** 2)
    p_n = np.mean(noise_part**2)
    return 10 * np.log10(p_s / p_n)


def test_mix_equal_power_zero_snr_scale():
    rng = np.random.default_rng(0)
    s = AudioClip(0.1 * rng.standard_normal(8000), 16000, id="s")
    n = AudioClip(s.samples.copy(), 16000, id="n")
    mixed = mix_at_snr(s, n, 0.0, noise_offset=0)
    assert mixed.meta["noise_scale"] == pytest.approx(1.0)


def test_mix_plus20_snr_scales_noise_tenth():
    rng = np.random.default_rng(1)
    base = 0.1 * rng.standard_normal(8000)
    s = AudioClip(base, 16000, id="s")
    n = AudioClip(base.copy(), 16000, id="n")
    mixed = mix_at_snr(s, n, 20.0, noise_offset=0)
    assert mixed.meta["noise_scale"] == pytest.approx(0.1)


def test_mix_silent_noise_raises():
    s = tone(200.0, 0.1)
    n = AudioClip(np.zeros(1600), 16000, id="n")
    with pytest.raises(ZeroPowerError):
        mix_at_snr(s, n, 0.0)


def test_mix_peak_normalizes_and_preserves_snr():
    rng = np.random.default_rng(2)
    s = AudioClip(0.9 * rng.standard_normal(4000) / 3, 16000, id="s")
    n = AudioClip(0.9 * rng.standard_normal(9000) / 3, 16000, id="n")
    mixed = mix_at_snr(s, n, -6.0, noise_offset=123)
    assert np.max(np.abs(mixed.samples)) <= 1.0 + 1e-12
    assert _measured_snr(mixed, s) == pytest.approx(-6.0, abs=0.01)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    snr=st.floats(-10.0, 20.0, allow_nan=False),
    offset=st.integers(0, 50_000),
)
def test_mix_snr_exact_property(seed, snr, offset):
    rng = np.random.default_rng(seed)
    s = AudioClip(0.2 * rng.standard_normal(3000), 16000, id="s")
    n = AudioClip(0.3 * rng.standard_normal(5000), 16000, id="n")
    mixed = mix_at_snr(s, n, snr, noise_offset=offset)
    assert _measured_snr(mixed, s) == pytest.approx(snr, abs=0.01)


def test_mix_seeded_offset_is_deterministic():
    rng_noise = np.random.default_rng(3)
    s = AudioClip(0.2 * rng_noise.standard_normal(3000), 16000, id="s")
    n = AudioClip(0.3 * rng_noise.standard_normal(9000), 16000, id="n")
    a = mix_at_snr(s, n, 0.0, rng=np.random.default_rng(42))
    b = mix_at_snr(s, n, 0.0, rng=np.random.default_rng(42))
    assert np.array_equal(a.samples, b.samples)
    assert a.meta["noise_offset"] == b.meta["noise_offset"]


def test_fixture_corpus_loads(tmp_path):
    corpus_dir, noise_path = make_fixture_corpus(tmp_path, n_clips=4, duration_s=0.3)
    manifest = load_corpus(corpus_dir)
    assert len(manifest) == 4
    noise = read_wav(noise_path)
    assert noise.sample_rate_hz == 16000
    assert np.max(np.abs(noise.samples)) <= 1.0
