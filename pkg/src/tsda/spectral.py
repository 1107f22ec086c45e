"""Windowing, one-sided DFT, polar coordinates and per-mode spectral convolution.

Plain functions take and return numpy arrays (complex spectra as complex
arrays along the last axis). The ``*_t`` variants operate on autograd
tensors, carrying complex values as (real, imag) pairs, and are what the
encoder and decoder are built from.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numerics import Tensor, as_tensor, atan2, cos, hypot, sin


def n_modes(T):
    """Length of the one-sided spectrum of a length-T real signal."""
    return T // 2 + 1


def default_modes(T):
    return min(64, n_modes(T))


def hann_window(N):
    if N < 2:
        raise ValueError(f"Hann window needs N >= 2, got {N}")
    n = np.arange(N)
    return 0.5 - 0.5 * np.cos(2 * np.pi * n / (N - 1))


def smooth(x):
    """Taper every channel (last axis) with a Hann window."""
    x = np.asarray(x, dtype=np.float64)
    return x * hann_window(x.shape[-1])


def dft_forward(x):
    """One-sided DFT along the last axis: modes 0..floor(T/2)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 1:
        raise ValueError("empty signal")
    return np.fft.rfft(x, axis=-1)


def dft_inverse(v, T):
    """Real signal of length T from its one-sided spectrum (Hermitian expansion)."""
    v = np.asarray(v)
    if v.shape[-1] != n_modes(T):
        raise ValueError(f"one-sided spectrum of a length-{T} signal has {n_modes(T)} modes, got {v.shape[-1]}")
    return np.fft.irfft(v, n=T, axis=-1)


def truncate_modes(v, M):
    v = np.asarray(v)
    if M <= 0:
        raise ValueError(f"mode count must be positive, got {M}")
    if M > v.shape[-1]:
        raise ValueError(f"cannot keep {M} modes of a {v.shape[-1]}-mode spectrum")
    return v[..., :M].copy()


def zero_pad_modes(v, T):
    """Pad a truncated one-sided spectrum with zeros up to floor(T/2)+1 modes."""
    v = np.asarray(v)
    full = np.zeros(v.shape[:-1] + (n_modes(T),), dtype=complex)
    full[..., : v.shape[-1]] = v
    return full


@dataclass
class PolarSpectrum:
    """Amplitude |v|/T and phase atan2(Im, Re) over retained modes, plus the signal length."""

    amplitude: np.ndarray
    phase: np.ndarray
    T: int

    def __post_init__(self):
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64)
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.amplitude.shape != self.phase.shape:
            raise ValueError("amplitude and phase shapes differ")
        if self.amplitude.shape[-1] > n_modes(self.T):
            raise ValueError("more modes than a length-T signal has")

    @property
    def modes(self):
        return self.amplitude.shape[-1]


def to_polar(v, T):
    if T < 1:
        raise ValueError("T must be >= 1")
    v = np.asarray(v, dtype=complex)
    # +0.0 folds negative zeros so that -1+0j maps to +pi
    return PolarSpectrum(np.abs(v) / T, np.arctan2(v.imag + 0.0, v.real + 0.0), T)


def from_polar(s: PolarSpectrum):
    if np.any(s.amplitude < 0):
        raise ValueError("negative amplitude")
    return s.T * s.amplitude * (np.cos(s.phase) + 1j * np.sin(s.phase))


def spectral_convolution(v, B):
    """Per-channel, per-mode complex product B[c, m] * v[..., c, m]."""
    v = np.asarray(v, dtype=complex)
    B = np.asarray(B, dtype=complex)
    if v.shape[-B.ndim:] != B.shape:
        raise ValueError(f"spectral weights {B.shape} do not match spectrum {v.shape}")
    return v * B


# -- differentiable versions --------------------------------------------------

@lru_cache(maxsize=32)
def _dft_bases(T, M):
    t = np.arange(T)[:, None]
    m = np.arange(M)[None, :]
    ang = 2 * np.pi * m * t / T
    fwd_c, fwd_s = np.cos(ang), -np.sin(ang)
    # inverse from one-sided modes: DC (and Nyquist) once, the rest twice
    w = np.full(M, 2.0)
    w[0] = 1.0
    if T % 2 == 0 and M == n_modes(T):
        w[-1] = 1.0
    inv_c = (w[:, None] * np.cos(ang.T)) / T
    inv_s = (-w[:, None] * np.sin(ang.T)) / T
    for a in (fwd_c, fwd_s, inv_c, inv_s):
        a.setflags(write=False)
    return fwd_c, fwd_s, inv_c, inv_s


def smooth_t(x):
    x = as_tensor(x)
    return x * hann_window(x.shape[-1])


def dft_forward_t(x, M):
    """First M one-sided DFT coefficients of ``x`` [..., T] as (re, im) tensors."""
    x = as_tensor(x)
    fc, fs, _, _ = _dft_bases(x.shape[-1], M)
    return x @ fc, x @ fs


def dft_inverse_t(re, im, T):
    """Length-T signal from M <= floor(T/2)+1 modes; missing modes are taken as zero.

    Imaginary parts of the DC and Nyquist terms are ignored, as for a real signal.
    """
    M = re.shape[-1]
    _, _, ic, is_ = _dft_bases(T, M)
    return as_tensor(re) @ ic + as_tensor(im) @ is_


def spectral_convolution_t(re, im, b_re, b_im):
    return re * b_re - im * b_im, re * b_im + im * b_re


def to_polar_t(re, im, T):
    return hypot(re, im) * (1.0 / T), atan2(im, re)


def from_polar_t(a, p, T):
    a = as_tensor(a) * float(T)
    return a * cos(p), a * sin(p)


__all__ = [
    "PolarSpectrum",
    "Tensor",
    "default_modes",
    "dft_forward",
    "dft_forward_t",
    "dft_inverse",
    "dft_inverse_t",
    "from_polar",
    "from_polar_t",
    "hann_window",
    "n_modes",
    "smooth",
    "smooth_t",
    "spectral_convolution",
    "spectral_convolution_t",
    "to_polar",
    "to_polar_t",
    "truncate_modes",
    "zero_pad_modes",
]
