"""Private TF bins, the virtual receive array, and sparse super-resolution.

Each transmit element may own one "private" TF bin that every other element
nulls; the receive-side ratios at those bins expose a virtual ULA of
``n_p * n_r`` elements whose phase structure depends jointly on angle,
Doppler and delay.  Targets are recovered by an l1-regularized least-squares
fit (LASSO, solved with a monotone accelerated proximal-gradient iteration)
against a dictionary of steering atoms on a discretized parameter grid,
refined by halving the angle spacing whenever the extraction is ambiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ArrayConfig, wrap_signed
from .coarse import CoarseEstimate
from .grid import FrameConfig, isfft


# ---------------------------------------------------------------------------
# private-bin plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrivateBinPlan:
    """Assignment of private TF bins to transmit elements plus DD zero layout.

    ``assignments[p] = (antenna, (n, m))`` lists the private bins in segment
    order.  ``dd_zeros[antenna]`` lists the DD bins that the antenna pins to
    zero so that its information symbols stay exactly recoverable after the
    TF nulling (one zero per nulled TF bin).

    The single-bin plan (n_p == 1) is the documented zero-overhead
    degenerate mode: nothing is nulled and no DD zeros are inserted, so the
    bin is shared rather than strictly private.  Detection then works on an
    angle-only dictionary because the transmit-data mixture at one bin
    folds into the per-target gains.
    """

    n_t: int
    n_p: int
    assignments: tuple[tuple[int, tuple[int, int]], ...]
    dd_zeros: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def assigned_antennas(self) -> tuple[int, ...]:
        return tuple(a for a, _ in self.assignments)

    def owner_bin(self, antenna: int) -> tuple[int, int] | None:
        for a, bin_ in self.assignments:
            if a == antenna:
                return bin_
        return None

    def null_bins(self, antenna: int) -> tuple[tuple[int, int], ...]:
        """TF bins this antenna must transmit as zero (others' private bins)."""
        if self.n_p <= 1:
            return ()
        return tuple(bin_ for a, bin_ in self.assignments if a != antenna)

    def info_count(self, antenna: int, cfg: FrameConfig) -> int:
        return cfg.grid_size - len(self.dd_zeros[antenna])


def make_private_plan(
    cfg: FrameConfig,
    arrays: ArrayConfig,
    n_p: int,
    tf_bins=None,
    dd_zeros=None,
) -> PrivateBinPlan:
    """Build a private-bin plan for ``n_p`` bins assigned to the first antennas.

    Defaults follow the diagonal convention: antenna i owns TF bin (i, i)
    and the DD zeros sit on the leading diagonal cells.  Antennas that own
    a bin need one DD zero per foreign private bin (n_p - 1); antennas
    without a bin null all n_p private bins and need n_p zeros.  ``n_p = 0``
    is the all-shared baseline; ``n_p = 1`` inserts no zeros at all.

    Custom ``tf_bins`` (sequence of n_p (n, m) pairs, antenna i getting the
    i-th) and ``dd_zeros`` (per-antenna sequences) are validated against the
    same counting rules.
    """
    if not 0 <= n_p <= arrays.n_t:
        raise ValueError(f"n_p must lie in [0, n_t={arrays.n_t}], got {n_p}")
    if tf_bins is None:
        if n_p > min(cfg.N, cfg.M):
            raise ValueError(
                f"default diagonal placement needs n_p <= min(N, M) = {min(cfg.N, cfg.M)}"
            )
        tf_bins = [(i, i) for i in range(n_p)]
    else:
        tf_bins = [tuple(map(int, b)) for b in tf_bins]
        if len(tf_bins) != n_p:
            raise ValueError(f"expected {n_p} TF bins, got {len(tf_bins)}")
        for n, m in tf_bins:
            if not (0 <= n < cfg.N and 0 <= m < cfg.M):
                raise ValueError(f"TF bin ({n}, {m}) out of range for grid ({cfg.N}, {cfg.M})")
        if len(set(tf_bins)) != n_p:
            raise ValueError(f"private TF bins must be distinct: {tf_bins}")

    def zero_count(antenna: int) -> int:
        if n_p <= 1:
            return 0
        return n_p - 1 if antenna < n_p else n_p

    if dd_zeros is None:
        dd_zeros = tuple(
            tuple((i, i) for i in range(zero_count(a))) for a in range(arrays.n_t)
        )
        if n_p >= 2 and n_p > min(cfg.N, cfg.M):
            raise ValueError("default diagonal DD zeros do not fit this grid")
    else:
        dd_zeros = tuple(tuple(tuple(map(int, z)) for z in za) for za in dd_zeros)
        if len(dd_zeros) != arrays.n_t:
            raise ValueError(f"dd_zeros must list all {arrays.n_t} antennas")
        for a, za in enumerate(dd_zeros):
            if len(za) != zero_count(a):
                raise ValueError(
                    f"antenna {a} needs {zero_count(a)} DD zeros for n_p={n_p}, got {len(za)}"
                )
            for k, l in za:
                if not (0 <= k < cfg.N and 0 <= l < cfg.M):
                    raise ValueError(f"DD zero ({k}, {l}) out of range")
            if len(set(za)) != len(za):
                raise ValueError(f"duplicate DD zeros for antenna {a}: {za}")

    assignments = tuple((i, tf_bins[i]) for i in range(n_p))
    return PrivateBinPlan(n_t=arrays.n_t, n_p=n_p, assignments=assignments, dd_zeros=dd_zeros)


def apply_plan(
    tx_dd_frames,
    plan: PrivateBinPlan,
    cfg: FrameConfig,
    probe: complex | None = None,
) -> np.ndarray:
    """ISFFT the per-antenna DD frames and impose the private-bin structure.

    Foreign private bins are overwritten with zero.  When ``probe`` is
    given, each owner additionally replaces its own bin with that known
    unit-modulus symbol; radar-only runs use this to keep the ratio
    denominators well away from zero.  Communication runs leave
    ``probe=None`` so the owner bin keeps its natural ISFFT value and the
    reduced-matrix recovery stays exact (an overwritten bin would destroy
    one linear equation's worth of information).

    Raises ``ValueError`` if a frame is non-zero at a planned DD zero.
    """
    x = np.asarray(tx_dd_frames, dtype=np.complex128)
    if x.shape != (plan.n_t, cfg.N, cfg.M):
        raise ValueError(f"expected ({plan.n_t}, {cfg.N}, {cfg.M}) DD frames, got {x.shape}")
    if probe is not None and not math.isclose(abs(probe), 1.0, rel_tol=1e-9):
        raise ValueError(f"probe symbol must be unit modulus, got |{probe}| = {abs(probe)}")
    tf = np.empty_like(x)
    for a in range(plan.n_t):
        for k, l in plan.dd_zeros[a]:
            if x[a, k, l] != 0:
                raise ValueError(
                    f"antenna {a} carries a non-zero symbol at planned DD zero ({k}, {l})"
                )
        tf[a] = isfft(x[a], cfg)
        for n, m in plan.null_bins(a):
            tf[a, n, m] = 0.0
        if probe is not None:
            own = plan.owner_bin(a)
            if own is not None:
                tf[a, own[0], own[1]] = probe
    return tf


def extract_virtual_measurement(
    rx_tf_frames, plan: PrivateBinPlan, tx_tf_frames
) -> np.ndarray:
    """Stack the receive/transmit ratios at every private bin.

    Segment p of the output holds ``Y_{n_r}[n_p, m_p] / X_p[n_p, m_p]`` for
    all n_r receive elements, using the bin value the owner actually
    transmitted (probe or natural ISFFT output).  Length is n_p * n_r.
    """
    rx = np.asarray(rx_tf_frames, dtype=np.complex128)
    tx = np.asarray(tx_tf_frames, dtype=np.complex128)
    if not plan.assignments:
        raise ValueError("plan has no private bins to measure")
    segments = []
    for antenna, (n, m) in plan.assignments:
        denom = tx[antenna, n, m]
        if abs(denom) < 1e-12:
            raise ValueError(
                f"antenna {antenna} transmitted a (near-)zero symbol at its private bin ({n}, {m})"
            )
        segments.append(rx[:, n, m] / denom)
    return np.concatenate(segments)


# ---------------------------------------------------------------------------
# dictionary on a discretized (angle, Doppler, delay) grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TargetGrid:
    """Atom parameter grid: the cartesian product of angles and DD pairs."""

    angles_deg: np.ndarray
    dd_pairs: tuple[tuple[int, int], ...]  # (signed Doppler, delay) per pair
    d_alpha: float
    kl_identifiable: bool

    @property
    def size(self) -> int:
        return len(self.angles_deg) * len(self.dd_pairs)


def _signature(k: int, l: int, plan: PrivateBinPlan, cfg: FrameConfig) -> tuple:
    """Per-segment phase pattern of a DD pair relative to the first segment.

    Two pairs with identical signatures produce dictionary columns that
    differ only by a global phase and are therefore indistinguishable.
    """
    bins = [bin_ for _, bin_ in plan.assignments]
    n0, m0 = bins[0]
    base = k * n0 / cfg.N - m0 * l / cfg.M
    sig = []
    for n, m in bins[1:]:
        rel = (k * n / cfg.N - m * l / cfg.M) - base
        sig.append(round(rel % 1.0, 9))
    return tuple(sig)


def make_refinement_grid(
    coarse,
    plan: PrivateBinPlan,
    cfg: FrameConfig,
    arrays: ArrayConfig,
    d_alpha: float,
    window_bins: float = 2.0,
    dd_window: int = 2,
    cap: int = 20000,
) -> TargetGrid:
    """Grid restricted around the coarse estimates.

    Angle points are the multiples of ``d_alpha`` (anchored at zero) inside
    a window of ``window_bins`` receive-DFT bins around every coarse angle.
    DD pairs span ``+-dd_window`` bins around every coarse (k, l).  Pairs
    whose dictionary columns would be identical up to a global phase are
    collapsed onto the representative closest to a coarse estimate.
    """
    coarse = list(coarse)
    if not coarse:
        raise ValueError("refinement grid needs at least one coarse estimate")
    if d_alpha <= 0:
        raise ValueError(f"angle spacing must be positive, got {d_alpha}")
    lam = cfg.wavelength
    half = window_bins / arrays.n_r

    idx = set()
    for theta in {round(c.theta_deg, 9) for c in coarse}:
        w = arrays.g_r * np.sin(np.radians(theta)) / lam
        lo = np.degrees(np.arcsin(np.clip((w - half) * lam / arrays.g_r, -1.0, 1.0)))
        hi = np.degrees(np.arcsin(np.clip((w + half) * lam / arrays.g_r, -1.0, 1.0)))
        idx.update(range(math.ceil(lo / d_alpha - 1e-12), math.floor(hi / d_alpha + 1e-12) + 1))
    angles = np.array(sorted(i * d_alpha for i in idx), dtype=float)
    angles = angles[(angles >= -90.0) & (angles <= 90.0)]

    centers = [(wrap_signed(c.k, cfg.N), c.l) for c in coarse]
    pairs = set()
    for kc, lc in centers:
        for dk in range(-dd_window, dd_window + 1):
            for dl in range(-dd_window, dd_window + 1):
                pairs.add((wrap_signed(kc + dk, cfg.N), (lc + dl) % cfg.M))

    def coarse_distance(pair: tuple[int, int]) -> int:
        k, l = pair
        best = None
        for kc, lc in centers:
            dk = abs(wrap_signed(k - kc, cfg.N))
            dl = min((l - lc) % cfg.M, (lc - l) % cfg.M)
            d = dk + dl
            best = d if best is None else min(best, d)
        return best

    groups: dict[tuple, tuple[int, int]] = {}
    for pair in sorted(pairs):
        sig = _signature(pair[0], pair[1], plan, cfg)
        held = groups.get(sig)
        if held is None or coarse_distance(pair) < coarse_distance(held):
            groups[sig] = pair
    dd_pairs = tuple(sorted(groups.values()))

    grid = TargetGrid(
        angles_deg=angles,
        dd_pairs=dd_pairs,
        d_alpha=float(d_alpha),
        kl_identifiable=plan.n_p >= 2,
    )
    if grid.size > cap:
        raise ValueError(f"grid size {grid.size} exceeds cap {cap}")
    if grid.size == 0:
        raise ValueError("refinement grid is empty")
    return grid


def build_dictionary(
    grid: TargetGrid, plan: PrivateBinPlan, cfg: FrameConfig, arrays: ArrayConfig
) -> tuple[np.ndarray, list[tuple[float, int, int]], np.ndarray]:
    """Unit-norm steering dictionary for the virtual measurement.

    Atom (theta, k, l) contributes, in the segment of private bin
    (n_p, m_p) owned by antenna p,

        exp(-j2pi (n_r g_r + p g_t) sin(theta)/lambda)
        * exp(-j2pi nu tau) * exp(j2pi (nu n_p dt - m_p df tau))

    with ``nu = k delta_nu`` (signed Doppler representative) and
    ``tau = l delta_tau``.  Returns ``(phi, atoms, scales)`` where columns
    of ``phi`` are unit norm, ``atoms[i] = (theta_deg, k, l)``, and
    ``scales[i]`` is the removed norm (de-normalize gains by
    ``beta / scales``).
    """
    if not plan.assignments:
        raise ValueError("plan has no private bins")
    thetas = np.asarray(grid.angles_deg, dtype=float)
    n_ang = thetas.size
    n_pairs = len(grid.dd_pairs)
    ks = np.array([p[0] for p in grid.dd_pairs])
    ls = np.array([p[1] for p in grid.dd_pairs])
    sines = np.sin(np.radians(thetas))
    lam = cfg.wavelength
    rows = plan.n_p * arrays.n_r
    phi = np.empty((rows, n_ang * n_pairs), dtype=np.complex128)
    elem = np.arange(arrays.n_r)[:, None]
    global_phase = np.exp(-2j * np.pi * ks * ls / cfg.grid_size)
    for seg, (antenna, (nb, mb)) in enumerate(plan.assignments):
        angle_part = np.exp(
            -2j * np.pi * (elem * arrays.g_r + antenna * arrays.g_t) * sines[None, :] / lam
        )
        dd_part = global_phase * np.exp(2j * np.pi * (ks * nb / cfg.N - mb * ls / cfg.M))
        block = angle_part[:, :, None] * dd_part[None, None, :]
        phi[seg * arrays.n_r : (seg + 1) * arrays.n_r] = block.reshape(arrays.n_r, -1)
    scales = np.linalg.norm(phi, axis=0)
    phi = phi / scales
    atoms = [
        (float(thetas[a]), int(ks[d]), int(ls[d]))
        for a in range(n_ang)
        for d in range(n_pairs)
    ]
    return phi, atoms, scales


# ---------------------------------------------------------------------------
# LASSO solver (monotone FISTA)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SsrSolution:
    """Result of one LASSO solve on the virtual measurement."""

    beta: np.ndarray  # coefficients w.r.t. the unit-norm dictionary
    support: np.ndarray  # indices with |beta| above the relative threshold
    residual_norm: float
    iterations: int
    converged: bool
    objective: np.ndarray  # recorded objective values, non-increasing


def _soft(x: np.ndarray, thr: float) -> np.ndarray:
    mag = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > thr, 1.0 - thr / np.where(mag > 0, mag, 1.0), 0.0)
    return x * scale


def _largest_sq_singular_value(phi: np.ndarray, iters: int = 60) -> float:
    """Power iteration on phi^H phi with a deterministic start vector."""
    cols = phi.shape[1]
    v = (1.0 + np.arange(cols) / max(cols, 1)).astype(np.complex128)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = phi.conj().T @ (phi @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def solve_ssr(
    r: np.ndarray,
    phi: np.ndarray,
    lasso_weight: float = 1e-5,
    tol: float = 1e-8,
    max_iter: int = 5000,
    support_rel: float = 0.05,
) -> SsrSolution:
    """Minimize ``||r - phi beta||_2^2 + lasso_weight * ||beta||_1`` (complex).

    Accelerated proximal gradient with step equal to the reciprocal of the
    gradient Lipschitz constant (twice the largest squared singular value)
    and an objective-increase safeguard: whenever the accelerated candidate
    would raise the objective, the iteration falls back to a plain
    proximal-gradient step and restarts the momentum, so the recorded
    objective sequence never increases.  Stops when the relative objective
    change drops below ``tol``.
    """
    r = np.asarray(r, dtype=np.complex128).ravel()
    if phi.shape[0] != r.size:
        raise ValueError(f"dictionary has {phi.shape[0]} rows but measurement has {r.size}")
    cols = phi.shape[1]
    if np.linalg.norm(r) == 0.0:
        beta = np.zeros(cols, dtype=np.complex128)
        return SsrSolution(
            beta=beta,
            support=np.array([], dtype=int),
            residual_norm=0.0,
            iterations=0,
            converged=True,
            objective=np.array([0.0]),
        )

    lip = 2.0 * _largest_sq_singular_value(phi) * 1.02
    if lip == 0.0:
        raise ValueError("dictionary is identically zero")
    step = 1.0 / lip
    thr = lasso_weight * step

    def objective(b: np.ndarray, resid: np.ndarray) -> float:
        return float(np.vdot(resid, resid).real + lasso_weight * np.abs(b).sum())

    beta = np.zeros(cols, dtype=np.complex128)
    z = beta
    t = 1.0
    obj_beta = objective(beta, r)
    history = [obj_beta]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = -2.0 * (phi.conj().T @ (r - phi @ z))
        cand = _soft(z - step * grad, thr)
        resid_cand = r - phi @ cand
        obj_cand = objective(cand, resid_cand)
        if obj_cand > obj_beta:
            # momentum overshoot: plain proximal step from the last iterate
            grad_b = -2.0 * (phi.conj().T @ (r - phi @ beta))
            cand = _soft(beta - step * grad_b, thr)
            resid_cand = r - phi @ cand
            obj_cand = objective(cand, resid_cand)
            t = 1.0
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = cand + ((t - 1.0) / t_next) * (cand - beta)
        beta = cand
        t = t_next
        history.append(obj_cand)
        if abs(obj_beta - obj_cand) <= tol * max(obj_beta, 1e-300):
            obj_beta = obj_cand
            converged = True
            break
        obj_beta = obj_cand

    mag = np.abs(beta)
    top = mag.max()
    support = np.flatnonzero(mag > support_rel * top) if top > 0 else np.array([], dtype=int)
    return SsrSolution(
        beta=beta,
        support=support,
        residual_norm=float(np.linalg.norm(r - phi @ beta)),
        iterations=it,
        converged=converged,
        objective=np.asarray(history),
    )


# ---------------------------------------------------------------------------
# detection with iterative grid refinement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionParams:
    """Knobs of the SSR detector; defaults follow the reference experiments."""

    lasso_weight: float = 1e-5
    d_alpha_init: float | None = None  # None: floor(90 / n_r) degrees
    d_alpha_min: float = 0.25
    window_bins: float = 2.0
    dd_window: int = 2
    support_rel: float = 0.05
    max_peaks: int = 8
    residual_accept: float = 0.15  # acceptable residual as a fraction of ||r||
    grid_cap: int = 20000
    fista_tol: float = 1e-8
    fista_max_iter: int = 5000


@dataclass(frozen=True)
class DetectedTarget:
    theta_deg: float
    k: int  # signed Doppler bin
    l: int  # delay bin
    gain: complex
    kl_identifiable: bool


@dataclass(frozen=True)
class DetectionResult:
    targets: tuple[DetectedTarget, ...]
    refined: bool
    final_d_alpha: float
    residual_fraction: float
    solver_converged: bool


def detect_with_refinement(
    r: np.ndarray,
    coarse,
    plan: PrivateBinPlan,
    cfg: FrameConfig,
    arrays: ArrayConfig,
    params: DetectionParams = DetectionParams(),
) -> DetectionResult:
    """Peel targets off the virtual measurement, refining the grid as needed.

    At each angle spacing the detector repeatedly solves the LASSO, takes
    the largest-coefficient atom, subtracts its contribution and continues.
    Two conditions mark the spacing as too coarse and halve it (down to
    ``d_alpha_min``): an already-extracted angle cell reappearing with a
    different (Doppler, delay) pair, or a final residual above
    ``residual_accept * ||r||``.
    """
    r = np.asarray(r, dtype=np.complex128).ravel()
    coarse = list(coarse)
    r_norm = float(np.linalg.norm(r))
    if r_norm == 0.0 or not coarse:
        return DetectionResult(
            targets=(),
            refined=False,
            final_d_alpha=params.d_alpha_init or 0.0,
            residual_fraction=0.0 if r_norm == 0.0 else 1.0,
            solver_converged=True,
        )

    d_alpha = params.d_alpha_init
    if d_alpha is None:
        d_alpha = float(max(math.floor(90.0 / arrays.n_r), 1))
    refined = False
    extracted: list[tuple[tuple[float, int, int], complex]] = []
    residual_fraction = 1.0
    all_converged = True

    while True:
        grid = make_refinement_grid(
            coarse,
            plan,
            cfg,
            arrays,
            d_alpha,
            window_bins=params.window_bins,
            dd_window=params.dd_window,
            cap=params.grid_cap,
        )
        phi, atoms, scales = build_dictionary(grid, plan, cfg, arrays)
        residual = r.copy()
        extracted = []
        reappeared = False
        first_peak = None
        for _ in range(params.max_peaks):
            sol = solve_ssr(
                residual,
                phi,
                lasso_weight=params.lasso_weight,
                tol=params.fista_tol,
                max_iter=params.fista_max_iter,
                support_rel=params.support_rel,
            )
            all_converged &= sol.converged
            mag = np.abs(sol.beta)
            if mag.max() == 0.0:
                break
            i = int(np.argmax(mag))
            if first_peak is None:
                first_peak = mag[i]
            elif mag[i] < params.support_rel * first_peak:
                break
            theta, k, l = atoms[i]
            if any(
                abs(th - theta) < 0.5 * d_alpha and (ak, al) != (k, l)
                for (th, ak, al), _ in extracted
            ):
                reappeared = True
                break
            extracted.append(((theta, k, l), sol.beta[i] / scales[i]))
            residual = residual - phi[:, i] * sol.beta[i]
            if np.linalg.norm(residual) <= params.residual_accept * r_norm:
                break
        residual_fraction = float(np.linalg.norm(residual)) / r_norm
        needs_refine = reappeared or residual_fraction > params.residual_accept
        if needs_refine and d_alpha / 2.0 >= params.d_alpha_min:
            d_alpha /= 2.0
            refined = True
            continue
        break

    best: dict[tuple[float, int, int], complex] = {}
    for key, gain in extracted:
        if key not in best or abs(gain) > abs(best[key]):
            best[key] = gain
    targets = tuple(
        DetectedTarget(
            theta_deg=key[0],
            k=key[1],
            l=key[2],
            gain=gain,
            kl_identifiable=grid.kl_identifiable,
        )
        for key, gain in sorted(best.items(), key=lambda kv: -abs(kv[1]))
    )
    return DetectionResult(
        targets=targets,
        refined=refined,
        final_d_alpha=d_alpha,
        residual_fraction=residual_fraction,
        solver_converged=all_converged,
    )
