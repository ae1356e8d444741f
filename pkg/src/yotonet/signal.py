"""Spectral and preprocessing utilities for vibration windows.

The FFT is an iterative radix-2 Cooley-Tukey with an explicit
bit-reversal permutation, written against the naive O(n^2) DFT as the
reference (the test suite carries that oracle).  Windows are
power-of-two length by construction, so no general-length machinery is
needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

DEFAULT_WINDOW = 4096
DEFAULT_HOP = 4096


@dataclass
class ComplexSpectrum:
    """DFT output split into real and imaginary float64 parts."""

    re: np.ndarray
    im: np.ndarray

    @property
    def n(self) -> int:
        return self.re.shape[0]

    def power(self) -> np.ndarray:
        """Per-bin power |X[k]|^2."""
        return self.re * self.re + self.im * self.im


def _bit_reversal(n: int) -> np.ndarray:
    """Index permutation that bit-reverses 0..n-1 for n a power of two."""
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x: np.ndarray) -> ComplexSpectrum:
    """Radix-2 decimation-in-time FFT of a real window.

    Args:
        x: Real samples, length a power of two.

    Returns:
        Full two-sided spectrum as a :class:`ComplexSpectrum`.

    Raises:
        ConfigError: If the length is not a power of two (or is zero).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n == 0 or (n & (n - 1)) != 0:
        raise ConfigError(f"fft: length {n} is not a power of two")
    re = x[_bit_reversal(n)].copy()
    im = np.zeros(n)
    m = 2
    while m <= n:
        half = m // 2
        ang = -2.0 * np.pi * np.arange(half) / m
        wr, wi = np.cos(ang), np.sin(ang)
        re2 = re.reshape(-1, m)
        im2 = im.reshape(-1, m)
        er, ei = re2[:, :half], im2[:, :half]
        otr, oti = re2[:, half:], im2[:, half:]
        tr = otr * wr - oti * wi
        ti = otr * wi + oti * wr
        ar, ai = er + tr, ei + ti
        br, bi = er - tr, ei - ti
        re2[:, :half], re2[:, half:] = ar, br
        im2[:, :half], im2[:, half:] = ai, bi
        m *= 2
    return ComplexSpectrum(re=re, im=im)


def magnitude_spectrum(x: np.ndarray) -> np.ndarray:
    """One-sided magnitude spectrum, scaled so a unit tone reads 1.0.

    Bins 1..n/2-1 are scaled by 2/n (the mirrored half is folded in);
    the DC bin is scaled by 1/n.

    Args:
        x: Real samples, length a power of two.

    Returns:
        Array of length n/2.
    """
    sp = fft(x)
    n = sp.n
    mag = np.sqrt(sp.power())[: n // 2] * (2.0 / n)
    mag[0] *= 0.5
    return mag


def resample(x: np.ndarray, from_hz: float, to_hz: float) -> np.ndarray:
    """Linear-interpolation resampling.

    Output length is floor(len(x) * to_hz / from_hz).  Equal rates
    return an exact copy.

    Raises:
        ConfigError: If either rate is not positive.
    """
    if from_hz <= 0 or to_hz <= 0:
        raise ConfigError(f"resample: rates must be positive, got {from_hz}, {to_hz}")
    x = np.asarray(x, dtype=np.float64)
    if from_hz == to_hz:
        return x.copy()
    out_len = int(np.floor(len(x) * to_hz / from_hz))
    pos = np.arange(out_len) * (from_hz / to_hz)
    return np.interp(pos, np.arange(len(x)), x)


def segment(x: np.ndarray, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> np.ndarray:
    """Cut a record into fixed windows at offsets 0, hop, 2*hop, ...

    Returns:
        Array of shape [count, window] with
        count = floor((len - window) / hop) + 1, or [0, window] when the
        record is shorter than one window.

    Raises:
        ConfigError: If window or hop is not positive.
    """
    if window <= 0 or hop <= 0:
        raise ConfigError(f"segment: window {window} and hop {hop} must be positive")
    x = np.asarray(x, dtype=np.float64)
    if window > len(x):
        return np.zeros((0, window))
    count = (len(x) - window) // hop + 1
    return np.stack([x[i * hop : i * hop + window] for i in range(count)])


def zscore(x: np.ndarray) -> np.ndarray:
    """Standardize to zero mean, unit variance; std floored at 1e-8.

    A constant input therefore maps to all zeros rather than NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    return (x - x.mean()) / max(float(x.std()), 1e-8)
