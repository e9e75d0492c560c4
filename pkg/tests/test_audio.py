import numpy as np
import pytest
from scipy.io import wavfile

from pencilguard.audio import (
    MAX_CLIP_SECONDS,
    AudioClip,
    _wsola_stretch,
    load_wav,
    pitch_shift,
    save_wav,
    with_duration,
)
from pencilguard.exceptions import CorruptHeader, ScaleOutOfRange, UnsupportedEncoding


def _tone(freq, fs=8000, seconds=1.0, amp=0.5):
    t = np.arange(int(seconds * fs)) / fs
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), fs, "tone", "test")


def _dominant_freq(x, fs):
    spec = np.abs(np.fft.rfft(x * np.hanning(x.shape[0])))
    return np.argmax(spec) * fs / x.shape[0]


def test_save_load_roundtrip(tmp_path):
    """PCM16 roundtrip error stays within two quantization steps

    (one from truncation to int16, one from the 32767/32768 scale split).
    """
    clip = _tone(440.0)
    path = tmp_path / "tone.wav"
    save_wav(path, clip)
    back = load_wav(path)
    assert back.sample_rate == 8000
    assert back.samples.shape == clip.samples.shape
    assert np.abs(back.samples - clip.samples).max() <= 2.0 / 32768.0


def test_load_int16_scaling(tmp_path):
    path = tmp_path / "fullscale.wav"
    wavfile.write(path, 8000, np.array([-32768, 0, 16384, 32767], dtype=np.int16))
    clip = load_wav(path)
    assert clip.samples[0] == -1.0
    assert clip.samples[1] == 0.0
    assert clip.samples[2] == 0.5
    assert abs(clip.samples[3] - 32767.0 / 32768.0) < 1e-12


def test_load_float32_passthrough(tmp_path):
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.8, 0.8, 2000).astype(np.float32)
    path = tmp_path / "f32.wav"
    wavfile.write(path, 8000, x)
    clip = load_wav(path)
    assert clip.samples.dtype == np.float64
    assert np.abs(clip.samples - x.astype(np.float64)).max() == 0.0


def test_load_stereo_downmix(tmp_path):
    left = np.full(1000, 8000, dtype=np.int16)
    right = np.full(1000, -4000, dtype=np.int16)
    path = tmp_path / "stereo.wav"
    wavfile.write(path, 8000, np.stack([left, right], axis=1))
    clip = load_wav(path)
    assert clip.samples.shape == (1000,)
    assert np.allclose(clip.samples, (8000 - 4000) / 2 / 32768.0)


def test_load_resamples_to_target_rate(tmp_path):
    fs_in = 16000
    t = np.arange(fs_in) / fs_in
    x = (0.5 * np.sin(2 * np.pi * 440.0 * t) * 32767).astype(np.int16)
    path = tmp_path / "hi.wav"
    wavfile.write(path, fs_in, x)
    clip = load_wav(path, target_rate=8000)
    assert clip.sample_rate == 8000
    assert clip.samples.shape == (8000,)
    f = _dominant_freq(clip.samples, 8000)
    assert abs(f - 440.0) <= 2.0


def test_load_truncates_long_clips(tmp_path):
    fs = 8000
    x = np.zeros(int(7.5 * fs), dtype=np.int16)
    path = tmp_path / "long.wav"
    wavfile.write(path, fs, x)
    clip = load_wav(path)
    assert clip.duration == MAX_CLIP_SECONDS


def test_load_rejects_other_encodings(tmp_path):
    path = tmp_path / "i32.wav"
    wavfile.write(path, 8000, np.zeros(100, dtype=np.int32))
    with pytest.raises(UnsupportedEncoding):
        load_wav(path)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"this is not a wav file at all, sorry")
    with pytest.raises(CorruptHeader):
        load_wav(path)


def test_load_rejects_truncated_header(tmp_path):
    clip = _tone(200.0, seconds=0.1)
    good = tmp_path / "good.wav"
    save_wav(good, clip)
    bad = tmp_path / "bad.wav"
    bad.write_bytes(good.read_bytes()[:11])
    with pytest.raises(CorruptHeader):
        load_wav(bad)


def test_with_duration_pads_and_truncates():
    clip = _tone(100.0, seconds=1.0)
    longer = with_duration(clip, 1.5)
    assert longer.samples.shape == (12000,)
    assert np.all(longer.samples[8000:] == 0.0)
    assert np.array_equal(longer.samples[:8000], clip.samples)
    shorter = with_duration(clip, 0.25)
    assert shorter.samples.shape == (2000,)
    assert np.array_equal(shorter.samples, clip.samples[:2000])
    assert shorter.class_label == "test"


def test_duration_property():
    clip = AudioClip(np.zeros(4000), 8000)
    assert clip.duration == 0.5


@pytest.mark.parametrize("scale", [0.5, 0.75, 0.9, 1.15, 1.5, 2.0])
def test_pitch_shift_moves_dominant_frequency(scale):
    """The spectral peak lands within 3% of freq * scale, length unchanged."""
    clip = _tone(440.0)
    shifted = pitch_shift(clip, scale)
    assert shifted.samples.shape == clip.samples.shape
    assert shifted.sample_rate == clip.sample_rate
    f = _dominant_freq(shifted.samples, clip.sample_rate)
    assert abs(f - 440.0 * scale) <= 0.03 * 440.0 * scale


def test_pitch_shift_identity_copies():
    clip = _tone(300.0)
    out = pitch_shift(clip, 1.0)
    assert np.array_equal(out.samples, clip.samples)
    assert out.samples is not clip.samples
    assert out.clip_id == clip.clip_id


def test_pitch_shift_scale_guard():
    clip = _tone(300.0, seconds=0.5)
    for bad in (0.499, 2.001, 0.0, -1.0):
        with pytest.raises(ScaleOutOfRange):
            pitch_shift(clip, bad)


def test_pitch_shift_keeps_amplitude_sane():
    rng = np.random.default_rng(11)
    for _ in range(4):
        freq = rng.uniform(150.0, 900.0)
        scale = rng.uniform(0.6, 1.8)
        clip = _tone(freq)
        shifted = pitch_shift(clip, scale)
        rms_in = np.sqrt(np.mean(clip.samples**2))
        rms_out = np.sqrt(np.mean(shifted.samples**2))
        assert 0.5 * rms_in <= rms_out <= 1.5 * rms_in


def test_wsola_identity_reconstruction():
    """A 1:1 stretch reproduces the waveform (>= 30 dB SNR in the interior)."""
    fs = 8000
    t = np.arange(fs) / fs
    x = 0.4 * np.sin(2 * np.pi * 440 * t) + 0.2 * np.sin(2 * np.pi * 97 * t)
    y = _wsola_stretch(x, x.shape[0])
    core = slice(512, fs - 512)
    err = y[core] - x[core]
    snr = 10 * np.log10(np.sum(x[core] ** 2) / max(np.sum(err**2), 1e-30))
    assert snr >= 30.0


def test_wsola_output_length_exact():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(5000)
    for target in (1000, 4999, 5000, 5001, 8192, 11111):
        assert _wsola_stretch(x, target).shape == (target,)
