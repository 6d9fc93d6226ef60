"""MUSIC direction estimation on 4-channel FOA input.

The steering vector for a candidate direction is the FOA gain vector itself,
so a single plane wave makes each per-bin covariance rank one and the noise
subspace orthogonal to the steering vector at the true direction. Scores are
averaged over a speech-band bin range after per-bin normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import stft
from .foa import foa_gains
from .geometry import SphereGrid

__all__ = [
    "CovarianceSet",
    "spatial_covariance",
    "music_spectrum",
    "music_estimate",
]

SCORE_EPS = 1e-12
DEFAULT_BAND_HZ = (300.0, 4000.0)


@dataclass
class CovarianceSet:
    """Per-bin 4x4 Hermitian matrices averaged over frames."""

    matrices: np.ndarray  # (bins, 4, 4) complex
    frequencies: np.ndarray  # (bins,) Hz

    def __post_init__(self):
        m = self.matrices
        if m.ndim != 3 or m.shape[1:] != (4, 4):
            raise ValueError(f"expected (bins, 4, 4) matrices, got {m.shape}")
        herm = np.abs(m - np.conj(np.transpose(m, (0, 2, 1)))).max(initial=0.0)
        if herm > 1e-10:
            raise ValueError(f"covariance not Hermitian (max asymmetry {herm:.2e})")


def band_to_bins(spec, band_hz=DEFAULT_BAND_HZ):
    freqs = spec.frequencies()
    sel = np.nonzero((freqs >= band_hz[0]) & (freqs <= band_hz[1]))[0]
    if sel.size == 0:
        raise ValueError(f"no STFT bins inside band {band_hz}")
    return sel


def spatial_covariance(spec, bin_range=None):
    """R_f = (1/T) sum_t x(t, f) x(t, f)^H for each selected bin."""
    if spec.n_frames < 2:
        raise ValueError("need at least 2 frames to average a covariance")
    if bin_range is None:
        bin_range = band_to_bins(spec)
    bin_range = np.asarray(bin_range)
    x = spec.bins[:, :, bin_range]  # 4 x T x B
    mats = np.einsum("ctb,dtb->bcd", x, np.conj(x), optimize=True) / spec.n_frames
    return CovarianceSet(matrices=mats, frequencies=spec.frequencies()[bin_range])


def music_spectrum(cov: CovarianceSet, grid: SphereGrid, n_sources=1):
    """Noise-subspace scores per grid class.

    Per bin: eigendecompose R_f, take the eigenvectors beyond the largest
    ``n_sources`` as the noise subspace E_n, score(d) = 1 / (||E_n^H a(d)||^2
    + eps) with a(d) the FOA gain vector. Per-bin scores are normalized to a
    unit maximum before averaging so loud bins cannot dominate.
    """
    if not 1 <= n_sources <= 3:
        raise ValueError("n_sources must be in [1, 3]")
    steering = foa_gains(grid.directions)  # (n_classes, 4) real
    scores = np.zeros(len(grid))
    for r in cov.matrices:
        vals, vecs = np.linalg.eigh(r)
        if not np.all(np.isfinite(vals)):
            raise np.linalg.LinAlgError("eigendecomposition produced non-finite values")
        noise = vecs[:, : 4 - n_sources]  # eigh sorts ascending
        proj = np.abs(steering @ np.conj(noise)) ** 2  # (n_classes, n_noise)
        bin_scores = 1.0 / (proj.sum(axis=1) + SCORE_EPS)
        scores += bin_scores / bin_scores.max()
    return scores / len(cov.matrices)


def music_estimate(signal, grid: SphereGrid, band_hz=DEFAULT_BAND_HZ, window=1024):
    """Full pipeline: STFT, spatial covariance, subspace scan, argmax class."""
    hop = window // 2
    frames = (signal.channels.shape[1] - window) // hop + 1
    if frames < 2:
        raise ValueError("signal too short for a covariance average")
    spec = stft(signal, frames=frames, window=window)
    cov = spatial_covariance(spec, band_to_bins(spec, band_hz))
    scores = music_spectrum(cov, grid)
    return grid.directions[int(np.argmax(scores))], scores
