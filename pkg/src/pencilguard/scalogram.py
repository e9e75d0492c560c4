"""Complex Morlet scalogram, magnitude visualizations, bilinear resizing,
and the Gaussian-noise perturbation.

The wavelet bank is analytic (zero response at negative frequencies) with
center frequency ``omega0 = 6``; scales are log-spaced so their center
frequencies run from ``fmin`` up to Nyquist.  Coefficients are produced by
one FFT-domain convolution over the whole clip and then sampled at frame
centers — one column per frame — because at the low-frequency end the
wavelet support exceeds a single frame.
"""

import enum
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .chordal import epsilon_of
from .exceptions import ClipTooShort, DegenerateSource, NonFiniteInput

log = logging.getLogger(__name__)

OMEGA0 = 6.0
DEFAULT_FMIN = 40.0


class Visualization(enum.Enum):
    LINEAR = "linear"
    LOG = "log"
    LOG_REAL = "log_real"


TAG_CLEAN = "clean"


def tag_noisy(sigma):
    return f"noisy:{sigma:g}"


def tag_attack(name):
    return f"attack:{name.lower()}"


@dataclass(frozen=True)
class Spectrogram:
    """Finalized (square) time-frequency image plus its source metadata."""

    data: np.ndarray
    visualization: Visualization
    source_clip_id: str
    class_label: str
    perturbation_tag: str = TAG_CLEAN
    native_shape: tuple = ()

    @property
    def n(self):
        return self.data.shape[0]


def scale_frequencies(sample_rate, num_scales, fmin=DEFAULT_FMIN):
    """Center frequencies (Hz), ascending, and the matching scales."""
    freqs = np.geomspace(fmin, sample_rate / 2.0, num_scales)
    scales = OMEGA0 * sample_rate / (2.0 * math.pi * freqs)
    return freqs, scales


def default_frame_ms(sample_rate):
    return 50.0 if sample_rate <= 8000 else 30.0


def morlet_scalogram(clip, frame_ms=None, overlap=0.5, num_scales=64,
                     fmin=DEFAULT_FMIN):
    """Complex coefficients, shape (num_scales, num_frames).

    Row order follows ascending center frequency.  Raises ClipTooShort when
    fewer than two frames fit.
    """
    fs = clip.sample_rate
    if frame_ms is None:
        frame_ms = default_frame_ms(fs)
    x = np.asarray(clip.samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("clip contains NaN or Inf")
    frame_len = int(round(fs * frame_ms / 1000.0))
    hop = max(1, int(round(frame_len * (1.0 - overlap))))
    n = x.shape[0]
    if n < frame_len + hop:
        raise ClipTooShort(
            f"{n} samples give fewer than 2 frames of {frame_len} at hop {hop}"
        )
    n_frames = 1 + (n - frame_len) // hop
    centers = np.arange(n_frames) * hop + frame_len // 2

    _, scales = scale_frequencies(fs, num_scales, fmin)
    pad = int(4 * scales.max())
    nfft = 1 << int(np.ceil(np.log2(n + pad)))
    spectrum = np.fft.fft(x, nfft)
    omega = 2.0 * math.pi * np.fft.fftfreq(nfft)  # rad / sample

    coeffs = np.empty((num_scales, n_frames), dtype=np.complex128)
    positive = omega > 0
    for i, s in enumerate(scales):
        psi_hat = np.zeros(nfft)
        psi_hat[positive] = math.pi ** -0.25 * np.exp(
            -0.5 * (s * omega[positive] - OMEGA0) ** 2
        )
        conv = np.fft.ifft(spectrum * psi_hat * math.sqrt(s))
        coeffs[i] = conv[centers]
    return coeffs


def visualize(coeffs, mode):
    """Map complex coefficients to a nonnegative real image."""
    w = np.asarray(coeffs)
    if not np.all(np.isfinite(w.real)) or not np.all(np.isfinite(w.imag)):
        raise NonFiniteInput("coefficients contain NaN or Inf")
    mode = Visualization(mode)
    if mode is Visualization.LINEAR:
        return np.abs(w)
    if mode is Visualization.LOG:
        return np.log1p(np.abs(w))
    return np.log1p(np.abs(w.real))


def resize_bilinear(img, n):
    """Resample to n x n on a corner-aligned grid (two separable lerps)."""
    src = np.asarray(img, dtype=np.float64)
    if src.ndim != 2 or src.shape[0] < 2 or src.shape[1] < 2:
        raise DegenerateSource(f"source shape {src.shape} too small to resize")
    if n < 2:
        raise DegenerateSource(f"target size {n} too small")

    def lerp_axis(a, m_out):
        m_in = a.shape[0]
        pos = np.arange(m_out) * (m_in - 1) / (m_out - 1)
        i0 = np.minimum(pos.astype(np.int64), m_in - 2)
        frac = (pos - i0)[:, None]
        return a[i0] + frac * (a[i0 + 1] - a[i0])

    out = lerp_axis(lerp_axis(src, n).T, n).T
    return np.clip(out, src.min(), src.max())


def finalize(coeffs, mode, n, clip_id="", class_label=""):
    """visualize + resize: the square Spectrogram every later stage uses."""
    native = visualize(coeffs, mode)
    return Spectrogram(
        data=resize_bilinear(native, n),
        visualization=Visualization(mode),
        source_clip_id=clip_id,
        class_label=class_label,
        perturbation_tag=TAG_CLEAN,
        native_shape=tuple(native.shape),
    )


def add_gaussian_noise(spec, sigma, seed, epsilon_cap=None, max_retries=8):
    """Entrywise seeded N(0, sigma^2) perturbation, tagged noisy:sigma.

    When ``epsilon_cap`` is given and the realized spectral norm of the
    perturbation exceeds it, the draw is retried with halved sigma (warned,
    deterministic: the retries consume the same seeded stream).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    current = float(sigma)
    for _ in range(max_retries):
        noisy = spec.data + rng.normal(0.0, current, spec.data.shape)
        if epsilon_cap is None or epsilon_of(spec.data, noisy) <= epsilon_cap:
            return replace(
                spec, data=noisy, perturbation_tag=tag_noisy(sigma)
            )
        current /= 2.0
        log.warning(
            "noise draw exceeded epsilon cap %.3g; retrying with sigma=%.3g",
            epsilon_cap, current,
        )
    raise ValueError(
        f"could not satisfy epsilon cap {epsilon_cap} within {max_retries} retries"
    )
