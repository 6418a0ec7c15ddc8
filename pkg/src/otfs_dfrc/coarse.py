"""Coarse radar estimation: DFT angle spectrum plus DD matched filtering.

Stage one forms, for every DD bin, the DFT across the receive elements and
accumulates squared magnitudes into an angle spectrum; its peaks give coarse
angles on the DFT grid.  Stage two beamforms the received frames toward each
coarse angle, builds the transmit-side reference frame for that angle, and
locates targets as peaks of the circular 2-d cross-correlation between the
two, which for an on-grid target sits exactly at its (Doppler, delay) shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayConfig, wrap_signed
from .grid import FrameConfig


@dataclass(frozen=True)
class PeakConfig:
    """Shared peak-picking rule: local maxima above a fraction of the global max."""

    rel_threshold: float = 0.15
    max_peaks: int = 8

    def __post_init__(self) -> None:
        if not 0.0 < self.rel_threshold <= 1.0:
            raise ValueError("rel_threshold must lie in (0, 1]")
        if self.max_peaks < 1:
            raise ValueError("max_peaks must be at least 1")


@dataclass(frozen=True)
class AngleSpectrum:
    """Normalized receive-DFT power spectrum over spatial frequency bins."""

    magnitudes: np.ndarray  # (n_fft,), max-normalized power
    omegas: np.ndarray  # signed spatial frequencies b/n_fft in [-0.5, 0.5)
    thetas_deg: np.ndarray  # angle of each bin (NaN where |sin| > 1)
    n_fft: int


@dataclass(frozen=True)
class AngleProfile:
    """Beamformer output and matched reference for one coarse angle."""

    theta_deg: float
    a_hat: np.ndarray  # (N, M) received profile
    a_prime: np.ndarray  # (N, M) transmit-side reference


@dataclass(frozen=True)
class CoarseEstimate:
    """One coarse target hypothesis: DFT-grid angle plus integer DD bin."""

    theta_deg: float
    k: int  # Doppler bin, wrapped to [0, N)
    l: int  # delay bin in [0, M)
    range_m: float
    velocity_mps: float
    score: float

    def k_signed(self, cfg: FrameConfig) -> int:
        return wrap_signed(self.k, cfg.N)


def _local_maxima_1d(s: np.ndarray) -> np.ndarray:
    left = np.roll(s, 1)
    right = np.roll(s, -1)
    return np.flatnonzero((s > left) & (s > right))


def _pick_peaks(values: np.ndarray, candidates: np.ndarray, cfg: PeakConfig) -> np.ndarray:
    if candidates.size == 0:
        return candidates
    keep = candidates[values[candidates] >= cfg.rel_threshold * values.max()]
    order = np.argsort(values[keep])[::-1]
    return keep[order][: cfg.max_peaks]


def spatial_frequency(theta_deg: float, arrays: ArrayConfig, frame: FrameConfig) -> float:
    """omega = g_r sin(theta) / wavelength, the per-element receive phase slope."""
    return arrays.g_r * np.sin(np.radians(theta_deg)) / frame.wavelength


def estimate_angles(
    rx_dd_frames,
    arrays: ArrayConfig,
    frame: FrameConfig,
    n_fft: int | None = None,
    peak_cfg: PeakConfig = PeakConfig(),
) -> tuple[AngleSpectrum, list[float]]:
    """Coarse angles from the per-bin DFT across receive elements.

    Parameters
    ----------
    rx_dd_frames : array-like, shape (n_r, N, M)
        DD observations of every receive element.
    n_fft : int, optional
        DFT length across the array (defaults to n_r; larger values
        zero-pad for a finer angle grid).

    Returns
    -------
    (AngleSpectrum, list of float)
        The accumulated spectrum and peak angles in degrees, strongest
        first.  DFT bin b maps to omega = b/n_fft (signed wrap for
        b > n_fft/2) and theta = arcsin(omega * wavelength / g_r).
    """
    y = np.asarray(rx_dd_frames, dtype=np.complex128)
    if y.ndim != 3 or y.shape[0] != arrays.n_r:
        raise ValueError(f"expected (n_r, N, M) observations, got shape {y.shape}")
    if arrays.n_r < 2:
        raise ValueError("angle estimation needs at least two receive elements")
    n_fft = arrays.n_r if n_fft is None else int(n_fft)
    if n_fft < arrays.n_r:
        raise ValueError(f"n_fft ({n_fft}) must be at least n_r ({arrays.n_r})")

    # The steering phase across elements is exp(-j2pi n_r omega), so the
    # conjugate-kernel DFT (ifft) peaks at bin omega * n_fft.
    beams = np.fft.ifft(y, n=n_fft, axis=0) * n_fft
    spectrum = np.sum(np.abs(beams) ** 2, axis=(1, 2))
    spectrum = spectrum / spectrum.max() if spectrum.max() > 0 else spectrum

    bins = np.arange(n_fft)
    omegas = np.where(bins < (n_fft + 1) // 2, bins, bins - n_fft) / n_fft
    sines = omegas * frame.wavelength / arrays.g_r
    thetas = np.degrees(np.arcsin(np.where(np.abs(sines) <= 1.0, sines, np.nan)))

    picked = _pick_peaks(spectrum, _local_maxima_1d(spectrum), peak_cfg)
    angles = [float(thetas[b]) for b in picked if np.isfinite(thetas[b])]
    return AngleSpectrum(magnitudes=spectrum, omegas=omegas, thetas_deg=thetas, n_fft=n_fft), angles


def extract_angle_profile(
    rx_dd_frames, theta_deg: float, arrays: ArrayConfig, frame: FrameConfig
) -> np.ndarray:
    """Beamform the received DD frames toward one angle.

    A_hat[k, l] = (1/n_r) sum_{n_r} y_{n_r}[k, l] exp(+j2pi n_r omega),
    which for an exactly-matched angle returns that target's composite
    profile with the steering removed.
    """
    y = np.asarray(rx_dd_frames, dtype=np.complex128)
    w = np.exp(2j * np.pi * np.arange(arrays.n_r) * spatial_frequency(theta_deg, arrays, frame))
    return np.tensordot(w, y, axes=(0, 0)) / arrays.n_r


def build_a_prime(
    tx_dd_frames, theta_deg: float, arrays: ArrayConfig, frame: FrameConfig
) -> np.ndarray:
    """Transmit-side reference A'[k, l] = sum_{n_t} exp(-j2pi n_t g_t sin(theta)/lambda) x_{n_t}[k, l]."""
    x = np.asarray(tx_dd_frames, dtype=np.complex128)
    s = np.sin(np.radians(theta_deg))
    w = np.exp(-2j * np.pi * np.arange(arrays.n_t) * arrays.g_t * s / frame.wavelength)
    return np.tensordot(w, x, axes=(0, 0))


def cross_correlation(a_hat: np.ndarray, a_prime: np.ndarray) -> np.ndarray:
    """Circular 2-d cross-correlation C[a, b] = sum_{k,l} A[k,l] conj(A'[k-a, l-b])."""
    if a_hat.shape != a_prime.shape:
        raise ValueError(f"profile shapes differ: {a_hat.shape} vs {a_prime.shape}")
    return np.fft.ifft2(np.fft.fft2(a_hat) * np.conj(np.fft.fft2(a_prime)))


def _local_maxima_2d(s: np.ndarray) -> np.ndarray:
    mask = np.ones_like(s, dtype=bool)
    for dk in (-1, 0, 1):
        for dl in (-1, 0, 1):
            if dk == 0 and dl == 0:
                continue
            mask &= s > np.roll(s, (dk, dl), axis=(0, 1))
    return np.argwhere(mask)


def correlate_2d(
    a_hat: np.ndarray, a_prime: np.ndarray, peak_cfg: PeakConfig = PeakConfig()
) -> tuple[list[tuple[int, int, float]], np.ndarray]:
    """Peaks of the circular cross-correlation between profile and reference.

    Returns ``(peaks, surface)`` where peaks are ``(k, l, score)`` tuples
    sorted by descending score and ``surface`` is the full magnitude map.
    An on-grid target shifted by (k_j, l_j) puts its peak exactly there.
    """
    surface = np.abs(cross_correlation(a_hat, a_prime))
    cand = _local_maxima_2d(surface)
    if cand.size == 0:
        return [], surface
    values = surface[cand[:, 0], cand[:, 1]]
    keep = values >= peak_cfg.rel_threshold * surface.max()
    cand, values = cand[keep], values[keep]
    order = np.argsort(values)[::-1][: peak_cfg.max_peaks]
    peaks = [(int(cand[i, 0]), int(cand[i, 1]), float(values[i])) for i in order]
    return peaks, surface


def indices_to_physical(k: int, l: int, frame: FrameConfig) -> tuple[float, float]:
    """Map integer DD bins to (range_m, velocity_mps); Doppler uses the signed wrap."""
    if not 0 <= l < frame.M:
        raise ValueError(f"delay index {l} outside [0, {frame.M})")
    k_signed = wrap_signed(k, frame.N)
    return l * frame.range_resolution, k_signed * frame.velocity_resolution


@dataclass(frozen=True)
class CoarseResult:
    """Full output of the coarse stage for one burst."""

    spectrum: AngleSpectrum
    profiles: tuple[AngleProfile, ...]
    estimates: tuple[CoarseEstimate, ...]


def estimate_coarse(
    rx_dd_frames,
    tx_dd_frames,
    frame: FrameConfig,
    arrays: ArrayConfig,
    n_fft: int | None = None,
    peak_cfg: PeakConfig = PeakConfig(),
) -> CoarseResult:
    """Run both coarse stages and pair every angle peak with its DD peaks."""
    spectrum, angles = estimate_angles(rx_dd_frames, arrays, frame, n_fft, peak_cfg)
    profiles = []
    estimates = []
    for theta in angles:
        a_hat = extract_angle_profile(rx_dd_frames, theta, arrays, frame)
        a_prime = build_a_prime(tx_dd_frames, theta, arrays, frame)
        profiles.append(AngleProfile(theta_deg=theta, a_hat=a_hat, a_prime=a_prime))
        peaks, _ = correlate_2d(a_hat, a_prime, peak_cfg)
        for k, l, score in peaks:
            rng_m, vel = indices_to_physical(k, l, frame)
            estimates.append(
                CoarseEstimate(
                    theta_deg=theta, k=k, l=l, range_m=rng_m, velocity_mps=vel, score=score
                )
            )
    return CoarseResult(
        spectrum=spectrum, profiles=tuple(profiles), estimates=tuple(estimates)
    )
