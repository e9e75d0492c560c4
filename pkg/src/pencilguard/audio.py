"""WAV ingestion, duration normalization, and time-preserving pitch shift.

Pitch shifting runs in two stages: polyphase resampling moves the pitch
(and with it the duration), then a WSOLA overlap-add time stretch restores
the original length without touching the pitch.
"""

import wave
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .exceptions import CorruptHeader, ScaleOutOfRange, UnsupportedEncoding

MAX_CLIP_SECONDS = 5.0


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int
    clip_id: str = ""
    class_label: str = ""

    def __post_init__(self):
        a = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", a)

    @property
    def duration(self):
        return self.samples.shape[0] / self.sample_rate


def load_wav(path, target_rate=8000):
    """Read a PCM16 or float32 WAV as a mono clip at ``target_rate``.

    Multichannel input is downmixed by channel average; samples end up in
    [-1, 1]; clips longer than 5 s are truncated.
    """
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError, wave.Error) as exc:
        raise CorruptHeader(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncoding(
            f"{path}: dtype {data.dtype} (expected int16 or float32)"
        )
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if rate != target_rate:
        frac = Fraction(target_rate, int(rate))
        samples = resample_poly(samples, frac.numerator, frac.denominator)
    max_len = int(MAX_CLIP_SECONDS * target_rate)
    samples = np.clip(samples[:max_len], -1.0, 1.0)
    return AudioClip(samples=samples, sample_rate=target_rate)


def save_wav(path, clip):
    """Write a clip as PCM16 (the encoding load_wav reads back)."""
    scaled = np.clip(clip.samples, -1.0, 1.0) * 32767.0
    wavfile.write(path, clip.sample_rate, scaled.astype(np.int16))


def with_duration(clip, seconds):
    """Truncate or zero-pad to an exact duration."""
    want = int(round(seconds * clip.sample_rate))
    n = clip.samples.shape[0]
    if n >= want:
        samples = clip.samples[:want].copy()
    else:
        samples = np.concatenate([clip.samples, np.zeros(want - n)])
    return replace(clip, samples=samples)


def _wsola_stretch(x, target_len, win=512, tolerance=128):
    """Time-stretch ``x`` to ``target_len`` samples at constant pitch.

    Hann-windowed overlap-add with 50% synthesis overlap; each analysis
    segment may slide within +-tolerance to maximize cross-correlation with
    the already-synthesized tail (keeps waveforms phase-coherent, which is
    what makes the identity ratio reconstruct near-exactly).
    """
    n = x.shape[0]
    if target_len == n:
        ratio = 1.0
    else:
        ratio = target_len / n
    hop = win // 2
    window = np.hanning(win)
    out = np.zeros(target_len + 2 * win)
    norm = np.zeros(target_len + 2 * win)
    n_frames = int(np.ceil(target_len / hop)) + 1
    prev_tail = None
    for k in range(n_frames):
        syn = k * hop
        ana = int(round(syn / ratio))
        if prev_tail is not None and tolerance > 0:
            lo = max(0, ana - tolerance)
            hi = min(n - win, ana + tolerance)
            if hi > lo:
                # pick the in-tolerance start best matching the overlap tail
                best = lo
                best_score = -np.inf
                seg_len = hop
                for cand in range(lo, hi + 1, 4):
                    seg = x[cand:cand + seg_len]
                    if seg.shape[0] < seg_len:
                        break
                    score = float(seg @ prev_tail)
                    if score > best_score:
                        best_score = score
                        best = cand
                ana = best
        ana = min(max(ana, 0), max(0, n - win))
        seg = x[ana:ana + win]
        if seg.shape[0] < win:
            seg = np.concatenate([seg, np.zeros(win - seg.shape[0])])
        out[syn:syn + win] += window * seg
        norm[syn:syn + win] += window
        prev_tail = x[ana + hop:ana + hop + hop]
        if prev_tail.shape[0] < hop:
            prev_tail = np.concatenate([prev_tail, np.zeros(hop - prev_tail.shape[0])])
    filled = norm > 1e-8
    out[filled] /= norm[filled]
    return out[:target_len]


def pitch_shift(clip, scale):
    """Multiply the pitch by ``scale`` while keeping the duration.

    scale must lie in [0.5, 2.0].  scale = 1.0 reproduces the input up to
    overlap-add reconstruction error.
    """
    if not 0.5 <= scale <= 2.0:
        raise ScaleOutOfRange(f"pitch scale {scale} outside [0.5, 2.0]")
    n = clip.samples.shape[0]
    if scale == 1.0:
        return replace(clip, samples=clip.samples.copy())
    frac = Fraction(scale).limit_denominator(1000)
    # playing the resampled signal at the original rate scales pitch by
    # frac; length becomes n / scale, which the stretch restores
    fast = resample_poly(clip.samples, frac.denominator, frac.numerator)
    stretched = _wsola_stretch(fast, n)
    return replace(clip, samples=stretched)
