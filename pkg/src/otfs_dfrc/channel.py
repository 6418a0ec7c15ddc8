"""Point-target channels and received-signal synthesis for the MIMO DFRC setup.

The radar channel is a sparse superposition of delay-Doppler shifts: each
target contributes

    y[k, l] += gain * exp(-j2pi k_j l_j / NM) * x[(k - k_j) mod N, (l - l_j) mod M]

together with transmit/receive ULA steering phases
``exp(-j2pi (n_r g_r + n_t g_t) sin(theta_j) / wavelength)``.  The same
point response expressed in the time-frequency domain is the multiplicative
factor

    H_j[n, m] = gain * exp(-j2pi nu_j tau_j) * exp(j2pi (nu_j n dt - m df tau_j))

and both descriptions agree exactly for on-grid targets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .grid import SPEED_OF_LIGHT, FrameConfig


@dataclass(frozen=True)
class ArrayConfig:
    """Antenna counts and ULA element spacings (in meters).

    n_t transmit elements are shared by both functions; n_r elements form
    the co-located radar receive array and n_c the communication receive
    array.
    """

    n_t: int
    n_r: int
    n_c: int
    g_t: float
    g_r: float

    def __post_init__(self) -> None:
        if min(self.n_t, self.n_r, self.n_c) < 1:
            raise ValueError("antenna counts must be at least 1")
        if self.g_t <= 0.0 or self.g_r <= 0.0:
            raise ValueError("element spacings must be positive")

    @classmethod
    def half_wavelength(cls, frame: FrameConfig, n_t: int, n_r: int, n_c: int) -> "ArrayConfig":
        """Arrays with the conventional half-wavelength element spacing."""
        d = frame.wavelength / 2.0
        return cls(n_t=n_t, n_r=n_r, n_c=n_c, g_t=d, g_r=d)


def ula_phases(theta_deg: float, n_elems: int, spacing: float, wavelength: float) -> np.ndarray:
    """Steering vector exp(-j2pi n g sin(theta)/lambda) for elements n = 0..n_elems-1."""
    s = np.sin(np.radians(theta_deg))
    return np.exp(-2j * np.pi * np.arange(n_elems) * spacing * s / wavelength)


@dataclass(frozen=True)
class Target:
    """A point scatterer snapped to the DD grid.

    ``k`` is the signed Doppler index (negative radial velocity gives a
    negative index; it wraps modulo N when used as an array shift) and
    ``l`` the delay index in ``[0, M)``.  ``nu``/``tau`` are the on-grid
    Doppler (Hz) and delay (s) implied by the indices.
    """

    theta_deg: float
    range_m: float
    velocity_mps: float
    gain: complex
    k: int
    l: int
    nu: float
    tau: float
    residual_k: float
    residual_l: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.theta_deg <= 90.0:
            raise ValueError(f"angle {self.theta_deg} deg outside [-90, 90]")

    @classmethod
    def from_physical(
        cls,
        frame: FrameConfig,
        theta_deg: float,
        range_m: float,
        velocity_mps: float,
        gain: complex = 1.0 + 0.0j,
    ) -> "Target":
        """Build a target from physical parameters, snapping to the nearest grid cell.

        The two-way mapping is ``nu = 2 v f_c / c`` and ``tau = 2 R / c``.
        Raises ``ValueError`` when the snapped indices fall outside the
        unambiguous grid span.
        """
        if range_m < 0.0:
            raise ValueError(f"range must be non-negative, got {range_m}")
        nu = 2.0 * velocity_mps * frame.f_c / SPEED_OF_LIGHT
        tau = 2.0 * range_m / SPEED_OF_LIGHT
        k_exact = nu / frame.delta_nu
        l_exact = tau / frame.delta_tau
        k = int(np.round(k_exact))
        l = int(np.round(l_exact))
        if not -frame.N / 2 <= k < frame.N / 2:
            raise ValueError(
                f"velocity {velocity_mps} m/s maps to Doppler index {k}, outside "
                f"[-{frame.N // 2}, {frame.N // 2})"
            )
        if not 0 <= l < frame.M:
            raise ValueError(f"range {range_m} m maps to delay index {l}, outside [0, {frame.M})")
        return cls(
            theta_deg=float(theta_deg),
            range_m=float(range_m),
            velocity_mps=float(velocity_mps),
            gain=complex(gain),
            k=k,
            l=l,
            nu=k * frame.delta_nu,
            tau=l * frame.delta_tau,
            residual_k=float(k_exact - k),
            residual_l=float(l_exact - l),
        )

    @classmethod
    def from_indices(
        cls,
        frame: FrameConfig,
        theta_deg: float,
        k: int,
        l: int,
        gain: complex = 1.0 + 0.0j,
    ) -> "Target":
        """Build a target directly from integer grid indices.

        ``k`` is kept verbatim (callers pick the signed or wrapped
        representative; phases use it as given).
        """
        if not 0 <= l < frame.M:
            raise ValueError(f"delay index {l} outside [0, {frame.M})")
        return cls(
            theta_deg=float(theta_deg),
            range_m=l * frame.range_resolution,
            velocity_mps=k * frame.velocity_resolution,
            gain=complex(gain),
            k=int(k),
            l=int(l),
            nu=k * frame.delta_nu,
            tau=l * frame.delta_tau,
            residual_k=0.0,
            residual_l=0.0,
        )

    def dd_phase(self, frame: FrameConfig) -> complex:
        """The constant exp(-j2pi k l / NM) carried by the DD shift."""
        return np.exp(-2j * np.pi * self.k * self.l / frame.grid_size)


def wrap_signed(k: int, n: int) -> int:
    """Map an integer Doppler index to the centered representative in [-n/2, n/2)."""
    return (int(k) + n // 2) % n - n // 2


@dataclass(frozen=True)
class Scenario:
    """Everything needed to synthesize one deterministic experiment.

    ``targets`` drive the radar path (per-target steering plus DD shift);
    ``comm_paths`` give the path geometry of the communication channel,
    whose per-(receive, transmit)-antenna gains are drawn independently at
    synthesis time.
    """

    frame: FrameConfig
    arrays: ArrayConfig
    targets: tuple[Target, ...] = ()
    comm_paths: tuple[Target, ...] = ()
    snr_db: float | None = None
    seed: int = 0

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        def tdict(t: Target) -> dict:
            return {
                "theta_deg": t.theta_deg,
                "range_m": t.range_m,
                "velocity_mps": t.velocity_mps,
                "gain": [t.gain.real, t.gain.imag],
            }

        return {
            "frame": {
                "N": self.frame.N,
                "M": self.frame.M,
                "delta_f": self.frame.delta_f,
                "f_c": self.frame.f_c,
            },
            "arrays": {
                "n_t": self.arrays.n_t,
                "n_r": self.arrays.n_r,
                "n_c": self.arrays.n_c,
                "g_t": self.arrays.g_t,
                "g_r": self.arrays.g_r,
            },
            "targets": [tdict(t) for t in self.targets],
            "comm_paths": [tdict(t) for t in self.comm_paths],
            "snr_db": self.snr_db,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        f = d["frame"]
        frame = FrameConfig(N=int(f["N"]), M=int(f["M"]), delta_f=float(f["delta_f"]), f_c=float(f["f_c"]))
        a = d.get("arrays", {})
        g_t = a.get("g_t")
        g_r = a.get("g_r")
        arrays = ArrayConfig(
            n_t=int(a.get("n_t", 1)),
            n_r=int(a.get("n_r", 1)),
            n_c=int(a.get("n_c", 1)),
            g_t=float(g_t) if g_t is not None else frame.wavelength / 2.0,
            g_r=float(g_r) if g_r is not None else frame.wavelength / 2.0,
        )

        def target(td: dict) -> Target:
            gain = td.get("gain", [1.0, 0.0])
            gain = complex(gain[0], gain[1]) if isinstance(gain, (list, tuple)) else complex(gain)
            if "k" in td or "l" in td:
                return Target.from_indices(
                    frame, float(td.get("theta_deg", 0.0)), int(td["k"]), int(td["l"]), gain
                )
            return Target.from_physical(
                frame,
                float(td.get("theta_deg", 0.0)),
                float(td["range_m"]),
                float(td["velocity_mps"]),
                gain,
            )

        snr = d.get("snr_db")
        return cls(
            frame=frame,
            arrays=arrays,
            targets=tuple(target(t) for t in d.get("targets", [])),
            comm_paths=tuple(target(t) for t in d.get("comm_paths", [])),
            snr_db=float(snr) if snr is not None else None,
            seed=int(d.get("seed", 0)),
        )

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load_json(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# delay-Doppler channel operators
# ---------------------------------------------------------------------------


def dd_channel_matrix(targets, cfg: FrameConfig) -> sparse.csr_matrix:
    """Sparse (NM x NM) DD channel matrix for a list of targets/paths.

    Row ``l + k*M`` holds, for each target j, the entry
    ``gain_j * exp(-j2pi k_j l_j / NM)`` at column
    ``((l - l_j) mod M) + ((k - k_j) mod N) * M``.
    """
    nm = cfg.grid_size
    rows_all = []
    cols_all = []
    data_all = []
    flat = np.arange(nm)
    k_grid, l_grid = np.divmod(flat, cfg.M)
    for t in targets:
        src_k = (k_grid - t.k) % cfg.N
        src_l = (l_grid - t.l) % cfg.M
        rows_all.append(flat)
        cols_all.append(src_l + src_k * cfg.M)
        data_all.append(np.full(nm, t.gain * t.dd_phase(cfg)))
    if not rows_all:
        return sparse.csr_matrix((nm, nm), dtype=np.complex128)
    h = sparse.coo_matrix(
        (np.concatenate(data_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(nm, nm),
        dtype=np.complex128,
    )
    return h.tocsr()


def apply_dd_channel(targets, x: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    """Apply the DD channel to a frame without materializing the matrix."""
    y = np.zeros((cfg.N, cfg.M), dtype=np.complex128)
    for t in targets:
        y += t.gain * t.dd_phase(cfg) * np.roll(x, (t.k, t.l), axis=(0, 1))
    return y


def tf_channel_factor(target: Target, cfg: FrameConfig) -> np.ndarray:
    """Multiplicative TF response H_j[n, m] of a single on-grid target."""
    n = np.arange(cfg.N)[:, None]
    m = np.arange(cfg.M)[None, :]
    ramp = np.exp(2j * np.pi * (target.k * n / cfg.N - m * target.l / cfg.M))
    return target.gain * target.dd_phase(cfg) * ramp


def complex_noise(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with total variance ``var``."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def noise_var_for_snr(signal: np.ndarray, snr_db: float) -> float:
    """Noise variance so that mean per-sample signal power / var == 10^(snr/10)."""
    power = float(np.mean(np.abs(signal) ** 2))
    return power / (10.0 ** (snr_db / 10.0))


def _stack_frames(frames, cfg: FrameConfig, count: int, what: str) -> np.ndarray:
    arr = np.asarray(frames, dtype=np.complex128)
    if arr.shape != (count, cfg.N, cfg.M):
        raise ValueError(f"expected {count} {what} frames of shape ({cfg.N}, {cfg.M}), got {arr.shape}")
    return arr


def radar_receive_dd(
    tx_dd_frames,
    scenario: Scenario,
    rng: np.random.Generator | None = None,
    noise_var: float | None = None,
) -> np.ndarray:
    """Noisy DD-domain radar observations at every receive element.

    Parameters
    ----------
    tx_dd_frames : array-like, shape (n_t, N, M)
        DD frames actually transmitted by each element.
    scenario : Scenario
        Supplies targets, array geometry and (optionally) the SNR.
    rng : numpy Generator, optional
        Required when noise is added.
    noise_var : float, optional
        Explicit per-sample complex noise variance; overrides the
        scenario's ``snr_db``-derived value.

    Returns
    -------
    ndarray, shape (n_r, N, M)
    """
    cfg, arrays = scenario.frame, scenario.arrays
    x = _stack_frames(tx_dd_frames, cfg, arrays.n_t, "transmit DD")
    lam = cfg.wavelength
    y = np.zeros((arrays.n_r, cfg.N, cfg.M), dtype=np.complex128)
    for t in scenario.targets:
        a_tx = ula_phases(t.theta_deg, arrays.n_t, arrays.g_t, lam)
        combined = np.zeros((cfg.N, cfg.M), dtype=np.complex128)
        for n_t in range(arrays.n_t):
            combined += a_tx[n_t] * np.roll(x[n_t], (t.k, t.l), axis=(0, 1))
        combined *= t.gain * t.dd_phase(cfg)
        a_rx = ula_phases(t.theta_deg, arrays.n_r, arrays.g_r, lam)
        y += a_rx[:, None, None] * combined[None, :, :]
    return _add_noise(y, scenario.snr_db, rng, noise_var)


def radar_receive_tf(
    tx_tf_frames,
    scenario: Scenario,
    rng: np.random.Generator | None = None,
    noise_var: float | None = None,
) -> np.ndarray:
    """TF-domain counterpart of :func:`radar_receive_dd` (same point response).

    For noiseless on-grid scenarios,
    ``sfft(radar_receive_tf(isfft(x))) == radar_receive_dd(x)`` to machine
    precision.
    """
    cfg, arrays = scenario.frame, scenario.arrays
    x = _stack_frames(tx_tf_frames, cfg, arrays.n_t, "transmit TF")
    lam = cfg.wavelength
    y = np.zeros((arrays.n_r, cfg.N, cfg.M), dtype=np.complex128)
    for t in scenario.targets:
        a_tx = ula_phases(t.theta_deg, arrays.n_t, arrays.g_t, lam)
        mixed = np.tensordot(a_tx, x, axes=(0, 0))
        mixed *= tf_channel_factor(t, cfg)
        a_rx = ula_phases(t.theta_deg, arrays.n_r, arrays.g_r, lam)
        y += a_rx[:, None, None] * mixed[None, :, :]
    return _add_noise(y, scenario.snr_db, rng, noise_var)


def _add_noise(y, snr_db, rng, noise_var):
    if noise_var is None:
        if snr_db is None:
            return y
        noise_var = noise_var_for_snr(y, snr_db)
    if noise_var < 0.0:
        raise ValueError(f"noise variance must be non-negative, got {noise_var}")
    if noise_var == 0.0:
        return y
    if rng is None:
        raise ValueError("an rng is required to add noise")
    return y + complex_noise(rng, y.shape, noise_var)


# ---------------------------------------------------------------------------
# MIMO communication channel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MimoChannel:
    """Block-sparse DD channel between n_t transmit and n_c receive elements.

    ``blocks[i][j]`` maps transmit frame j to receive frame i; ``matrix`` is
    the stacked (n_c*NM x n_t*NM) sparse operator acting on concatenated
    ``vec_dd`` frames.
    """

    blocks: tuple
    matrix: sparse.csr_matrix
    n_c: int
    n_t: int
    nm: int

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.matrix.conj().T @ y


def build_mimo_channel(
    scenario: Scenario, pair_gains: np.ndarray | None = None, rng: np.random.Generator | None = None
) -> MimoChannel:
    """Assemble the comm channel from shared path geometry and per-pair gains.

    ``pair_gains`` has shape (n_c, n_t, n_paths); when omitted, unit-modulus
    gains with uniform random phases are drawn from ``rng``.
    """
    cfg, arrays = scenario.frame, scenario.arrays
    paths = scenario.comm_paths
    if pair_gains is None:
        if paths and rng is None:
            raise ValueError("pair_gains or an rng is required to realize the comm channel")
        pair_gains = draw_pair_gains(rng, arrays.n_c, arrays.n_t, len(paths)) if paths else None
    elif np.shape(pair_gains) != (arrays.n_c, arrays.n_t, len(paths)):
        raise ValueError(
            f"pair_gains shape {np.shape(pair_gains)} does not match "
            f"({arrays.n_c}, {arrays.n_t}, {len(paths)})"
        )
    blocks = []
    for i in range(arrays.n_c):
        row = []
        for j in range(arrays.n_t):
            if paths:
                realized = [
                    Target.from_indices(cfg, p.theta_deg, p.k, p.l, gain=pair_gains[i, j, q] * p.gain)
                    for q, p in enumerate(paths)
                ]
                row.append(dd_channel_matrix(realized, cfg))
            else:
                row.append(sparse.csr_matrix((cfg.grid_size, cfg.grid_size), dtype=np.complex128))
        blocks.append(row)
    matrix = sparse.bmat(blocks, format="csr")
    return MimoChannel(
        blocks=tuple(tuple(r) for r in blocks),
        matrix=matrix,
        n_c=arrays.n_c,
        n_t=arrays.n_t,
        nm=cfg.grid_size,
    )


def draw_pair_gains(
    rng: np.random.Generator, n_c: int, n_t: int, n_paths: int
) -> np.ndarray:
    """Unit-modulus gains with iid uniform phases, one per (pair, path)."""
    return np.exp(2j * np.pi * rng.random((n_c, n_t, n_paths)))


def comm_receive_dd(
    tx_dd_frames,
    scenario: Scenario,
    rng: np.random.Generator | None = None,
    noise_var: float | None = None,
    channel: MimoChannel | None = None,
    pair_gains: np.ndarray | None = None,
):
    """DD observations at the communication receiver plus the channel used.

    Returns ``(rx_frames, channel, noise_var_used)`` where ``rx_frames`` has
    shape (n_c, N, M).  Pass ``channel`` (or ``pair_gains``) to reuse one
    realization across runs; otherwise gains are drawn from ``rng``.
    """
    cfg, arrays = scenario.frame, scenario.arrays
    x = _stack_frames(tx_dd_frames, cfg, arrays.n_t, "transmit DD")
    if channel is None:
        channel = build_mimo_channel(scenario, pair_gains=pair_gains, rng=rng)
    y_flat = channel.matvec(x.reshape(-1))
    y = y_flat.reshape(arrays.n_c, cfg.N, cfg.M)
    if noise_var is None:
        noise_var = 0.0 if scenario.snr_db is None else noise_var_for_snr(y, scenario.snr_db)
    y = _add_noise(y, None, rng, noise_var)
    return y, channel, noise_var
