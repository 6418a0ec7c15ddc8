"""OTFS grid geometry and the delay-Doppler <-> time-frequency transform pair.

Index conventions, fixed package-wide:

* Delay-Doppler (DD) frames are (N, M) complex arrays indexed ``[k, l]``
  with ``k`` the Doppler bin and ``l`` the delay bin.  The vectorized form
  places ``x[k, l]`` at flat index ``l + k*M`` (plain C-order ravel).
* Time-frequency (TF) frames are (N, M) complex arrays indexed ``[n, m]``
  with ``n`` the time-slot index and ``m`` the subcarrier index; flat index
  ``m + n*M``.
* The DD -> TF transform (``isfft``) carries the full ``1/(N*M)``
  normalization; the inverse (``sfft``) absorbs the compensating factor, so
  ``sfft(isfft(x)) == x`` and ``norm(isfft(x))**2 == norm(x)**2 / (N*M)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import dft, get_lapack_funcs, lu_factor, lu_solve

from .errors import NumericsError

# Speed of light used by every range/velocity mapping in the package.  The
# round value keeps grid-index arithmetic in the reference scenarios exact.
SPEED_OF_LIGHT = 3.0e8

#: Largest N*M for which dense (NM x NM) modulation matrices may be built.
DENSE_MATRIX_CAP = 4096

#: Reduced-matrix condition estimates above this raise ``NumericsError``.
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class FrameConfig:
    """Geometry of one OTFS burst: N time slots/Doppler bins by M subcarriers/delay bins.

    Parameters
    ----------
    N : int
        Number of time slots (equivalently Doppler bins).
    M : int
        Number of subcarriers (equivalently delay bins).
    delta_f : float
        Subcarrier spacing in Hz.  The slot duration is ``1/delta_f``.
    f_c : float
        Carrier frequency in Hz.
    """

    N: int
    M: int
    delta_f: float
    f_c: float

    def __post_init__(self) -> None:
        if self.N < 1 or self.M < 1:
            raise ValueError(f"grid dimensions must be positive, got N={self.N}, M={self.M}")
        if self.delta_f <= 0.0:
            raise ValueError(f"subcarrier spacing must be positive, got {self.delta_f}")
        if self.f_c <= 0.0:
            raise ValueError(f"carrier frequency must be positive, got {self.f_c}")

    # -- elementary spacings ------------------------------------------------

    @property
    def delta_t(self) -> float:
        """Time-slot duration in seconds (orthogonality: delta_t * delta_f = 1)."""
        return 1.0 / self.delta_f

    @property
    def delta_nu(self) -> float:
        """Doppler resolution in Hz: 1 / (N * delta_t)."""
        return self.delta_f / self.N

    @property
    def delta_tau(self) -> float:
        """Delay resolution in seconds: 1 / (M * delta_f)."""
        return 1.0 / (self.M * self.delta_f)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def duration(self) -> float:
        """Burst duration N * delta_t in seconds."""
        return self.N * self.delta_t

    @property
    def bandwidth(self) -> float:
        """Occupied bandwidth M * delta_f in Hz."""
        return self.M * self.delta_f

    @property
    def grid_size(self) -> int:
        return self.N * self.M

    # -- radar mappings -----------------------------------------------------

    @property
    def range_resolution(self) -> float:
        """Range extent of one delay bin for a two-way path, in meters."""
        return SPEED_OF_LIGHT / (2.0 * self.M * self.delta_f)

    @property
    def velocity_resolution(self) -> float:
        """Radial-velocity extent of one Doppler bin for a two-way path, m/s."""
        return SPEED_OF_LIGHT / (2.0 * self.N * self.delta_t * self.f_c)

    @property
    def range_max(self) -> float:
        """Unambiguous range M * range_resolution, in meters."""
        return self.M * self.range_resolution

    @property
    def velocity_max(self) -> float:
        """Half-open unambiguous velocity span; indices live in [-N/2, N/2)."""
        return (self.N / 2.0) * self.velocity_resolution


def _as_frame(x: np.ndarray, cfg: FrameConfig | None) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-d frame, got shape {x.shape}")
    if cfg is not None and x.shape != (cfg.N, cfg.M):
        raise ValueError(f"frame shape {x.shape} does not match grid ({cfg.N}, {cfg.M})")
    return x


def isfft(x: np.ndarray, cfg: FrameConfig | None = None) -> np.ndarray:
    """Transform a DD frame to the TF domain.

    Computes ``X[n, m] = (1/NM) * sum_{k,l} x[k, l] exp(j2pi(kn/N - ml/M))``
    via an N-point inverse FFT along the Doppler axis and an M-point FFT
    along the delay axis.

    Parameters
    ----------
    x : ndarray, shape (N, M)
        DD frame indexed ``[k, l]``.
    cfg : FrameConfig, optional
        When given, the frame shape is validated against the grid.

    Returns
    -------
    ndarray, shape (N, M)
        TF frame indexed ``[n, m]``.
    """
    x = _as_frame(x, cfg)
    return np.fft.fft(np.fft.ifft(x, axis=0), axis=1) / x.shape[1]


def sfft(y: np.ndarray, cfg: FrameConfig | None = None) -> np.ndarray:
    """Transform a TF frame back to the DD domain (exact inverse of :func:`isfft`).

    Computes ``x[k, l] = sum_{n,m} Y[n, m] exp(-j2pi(nk/N - ml/M))``; the
    missing ``1/NM`` of the forward transform is absorbed here.
    """
    y = _as_frame(y, cfg)
    return np.fft.ifft(np.fft.fft(y, axis=0), axis=1) * y.shape[1]


def vec_dd(x: np.ndarray) -> np.ndarray:
    """Vectorize a DD frame: x[k, l] lands at flat index l + k*M."""
    return np.ravel(x)


def unvec_dd(v: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    return np.reshape(v, (cfg.N, cfg.M))


def vec_tf(x: np.ndarray) -> np.ndarray:
    """Vectorize a TF frame: X[n, m] lands at flat index m + n*M."""
    return np.ravel(x)


def unvec_tf(v: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    return np.reshape(v, (cfg.N, cfg.M))


def tf_flat_index(n: int, m: int, cfg: FrameConfig) -> int:
    return m + n * cfg.M


def dd_flat_index(k: int, l: int, cfg: FrameConfig) -> int:
    return l + k * cfg.M


def build_isfft_matrix(cfg: FrameConfig, cap: int = DENSE_MATRIX_CAP) -> np.ndarray:
    """Dense (NM x NM) matrix G with ``G @ vec_dd(x) == vec_tf(isfft(x))``.

    G is the Kronecker product of the conjugate-transposed N-point DFT
    matrix with the M-point DFT matrix, scaled by ``1/(N*M)`` to match the
    transform normalization.  Guarded by ``cap`` so production-size grids
    never densify by accident.
    """
    nm = cfg.grid_size
    if nm > cap:
        raise ValueError(f"grid size {nm} exceeds the dense-matrix cap {cap}")
    return np.kron(dft(cfg.N).conj().T, dft(cfg.M)) / nm


@dataclass(frozen=True)
class ReducedIsfftMatrix:
    """ISFFT matrix with selected TF rows and DD columns removed.

    Supports exact recovery of DD symbols when a transmitter nulls the TF
    bins listed in ``removed_rows`` and compensates with known zeros at the
    DD positions in ``removed_cols``: the square system
    ``reduced @ x_kept = X_kept`` is then solvable.

    Attributes
    ----------
    nm : int
        Full grid size N*M.
    removed_rows, removed_cols : tuple of int
        Flat TF / DD indices excluded from the system.
    kept_rows, kept_cols : ndarray of int
        Sorted complements of the removed sets.
    reduced : ndarray
        The square reduced matrix.
    condition : float
        1-norm condition estimate of ``reduced``.
    """

    nm: int
    removed_rows: tuple[int, ...]
    removed_cols: tuple[int, ...]
    kept_rows: np.ndarray
    kept_cols: np.ndarray
    reduced: np.ndarray
    condition: float
    _lu: tuple = field(repr=False)

    def solve(self, tf_kept: np.ndarray) -> np.ndarray:
        """Recover the kept DD entries from the kept TF observations."""
        tf_kept = np.asarray(tf_kept, dtype=np.complex128)
        if tf_kept.shape != (self.reduced.shape[0],):
            raise ValueError(
                f"expected {self.reduced.shape[0]} TF observations, got {tf_kept.shape}"
            )
        return lu_solve(self._lu, tf_kept)

    def embed(self, dd_kept: np.ndarray) -> np.ndarray:
        """Scatter recovered DD entries into a full NM vector (zeros elsewhere)."""
        out = np.zeros(self.nm, dtype=np.complex128)
        out[self.kept_cols] = dd_kept
        return out


def _flatten_bins(bins, cfg: FrameConfig, first_max: int, kind: str) -> tuple[int, ...]:
    flat = []
    for a, b in bins:
        if not (0 <= a < first_max and 0 <= b < cfg.M):
            raise ValueError(f"{kind} bin ({a}, {b}) out of range for grid ({cfg.N}, {cfg.M})")
        flat.append(b + a * cfg.M)
    if len(set(flat)) != len(flat):
        raise ValueError(f"duplicate {kind} bins: {bins}")
    return tuple(flat)


def build_reduced_matrix(
    cfg: FrameConfig,
    removed_tf_bins,
    removed_dd_bins,
    cap: int = DENSE_MATRIX_CAP,
) -> ReducedIsfftMatrix:
    """Build the reduced ISFFT matrix for given TF-bin and DD-bin exclusions.

    Parameters
    ----------
    cfg : FrameConfig
    removed_tf_bins : sequence of (n, m)
        TF bins whose rows are dropped (bins nulled by other users' privacy
        constraints, hence carrying no information about this frame).
    removed_dd_bins : sequence of (k, l)
        DD bins whose columns are dropped (symbols pinned to zero).

    Raises
    ------
    ValueError
        On count mismatch, out-of-range or duplicate bins, or oversize grid.
    NumericsError
        If the condition estimate of the reduced matrix exceeds
        ``CONDITION_LIMIT`` (recovery would not be trustworthy).
    """
    removed_tf_bins = list(removed_tf_bins)
    removed_dd_bins = list(removed_dd_bins)
    if len(removed_tf_bins) != len(removed_dd_bins):
        raise ValueError(
            f"row/column removal counts differ: {len(removed_tf_bins)} TF bins "
            f"vs {len(removed_dd_bins)} DD bins"
        )
    rows = _flatten_bins(removed_tf_bins, cfg, cfg.N, "TF")
    cols = _flatten_bins(removed_dd_bins, cfg, cfg.N, "DD")
    nm = cfg.grid_size
    if len(rows) >= nm:
        raise ValueError("cannot remove every row of the modulation matrix")

    base = build_isfft_matrix(cfg, cap)
    kept_rows = np.setdiff1d(np.arange(nm), np.asarray(rows, dtype=int))
    kept_cols = np.setdiff1d(np.arange(nm), np.asarray(cols, dtype=int))
    reduced = base[np.ix_(kept_rows, kept_cols)]

    lu = lu_factor(reduced)
    gecon = get_lapack_funcs("gecon", (reduced,))
    rcond, info = gecon(lu[0], np.linalg.norm(reduced, 1))
    if info != 0:
        raise NumericsError(f"condition estimation failed (LAPACK info={info})")
    condition = np.inf if rcond == 0.0 else 1.0 / float(rcond)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise NumericsError(
            f"reduced matrix is numerically singular (condition estimate {condition:.3e})"
        )
    return ReducedIsfftMatrix(
        nm=nm,
        removed_rows=rows,
        removed_cols=cols,
        kept_rows=kept_rows,
        kept_cols=kept_cols,
        reduced=reduced,
        condition=condition,
        _lu=lu,
    )
