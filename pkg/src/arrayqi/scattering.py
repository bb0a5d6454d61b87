"""Steady-state coupled-dipole scattering off finite atom arrays."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sl
from scipy.optimize import least_squares, minimize_scalar
from scipy.special import roots_legendre

from .errors import FitError, NumericalError, NumericalWarning, SingularMatrixError
from .geometry import ArrayRealization, GaussianBeam, mode_overlap_eta
from .greens import K_P, KERNEL_SCALE, collective_rate_2d, dipole_kernel, interlayer_kernel, projected_green

RESIDUAL_TOL = 1e-10
PLANE_DISTANCE = 5.0
SPECTRUM_CUTOFF = 14.0
MIN_SPECTRAL_WAIST = 2.5


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """Kernel with decay and local detunings on the diagonal, plus a probe detuning.

    The steady state solves ``matrix @ sigma = i * drive`` with
    ``matrix = base - i delta_p I``.
    """

    base: np.ndarray
    delta_p: float = 0.0

    @property
    def dimension(self) -> int:
        return self.base.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.base - 1j * self.delta_p * np.eye(self.dimension)

    def with_detuning(self, delta_p: float) -> "InteractionMatrix":
        return InteractionMatrix(self.base, delta_p)


def build_matrix(arr: ArrayRealization, delta_p: float = 0.0) -> InteractionMatrix:
    K = dipole_kernel(arr.positions, arr.orientation)
    K[np.diag_indices_from(K)] = 0.5 + arr.noncollective_rates / 2.0 - 1j * arr.detunings
    return InteractionMatrix(K, float(delta_p))


def drive_vector(arr: ArrayRealization, beam: GaussianBeam, direction: int = 1) -> np.ndarray:
    """Incident Gaussian amplitude at each atom, unity on the beam axis at z = 0."""
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if arr.lattice is not None and beam.waist < 2 * arr.lattice.a:
        warnings.warn("beam waist below two lattice constants", NumericalWarning, stacklevel=2)
    x, y, z = arr.positions.T
    return beam.envelope(x, y) * np.exp(1j * direction * K_P * z)


@dataclass(frozen=True, eq=False)
class SteadyStateSolution:
    dipoles: np.ndarray
    drive: np.ndarray
    residual_norm: float


def solve_steady_state(M: InteractionMatrix, drive) -> SteadyStateSolution:
    A = M.matrix
    b = 1j * np.asarray(drive, dtype=complex)
    with warnings.catch_warnings():
        warnings.simplefilter("error", sl.LinAlgWarning)
        try:
            sigma = sl.lu_solve(sl.lu_factor(A), b)
        except (sl.LinAlgWarning, ValueError, np.linalg.LinAlgError) as exc:
            raise SingularMatrixError(f"interaction matrix is singular (cond = {np.linalg.cond(A):.3e})") from exc
    scale = max(np.linalg.norm(b), 1e-300)
    res = float(np.linalg.norm(A @ sigma - b) / scale)
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise SingularMatrixError(f"residual {res:.2e} too large (cond = {np.linalg.cond(A):.3e})")
    return SteadyStateSolution(sigma, np.asarray(drive, dtype=complex), res)


@dataclass(frozen=True)
class PlaneGrid:
    """Square sampling grid centred on the beam axis."""

    half_width: float
    spacing: float = 0.25

    @classmethod
    def for_beam(cls, beam: GaussianBeam, extent: float = 3.0, spacing: float = 0.25) -> "PlaneGrid":
        return cls(extent * beam.waist, spacing)

    @property
    def axis(self) -> np.ndarray:
        n = int(np.ceil(self.half_width / self.spacing))
        return self.spacing * np.arange(-n, n + 1)

    def mesh(self):
        g = self.axis
        return np.meshgrid(g, g, indexing="ij")


def _check_spacing(grid: PlaneGrid):
    if grid.spacing > 0.25 + 1e-12:
        warnings.warn("plane sampling coarser than a quarter wavelength", NumericalWarning, stacklevel=3)


def scattered_field(sol: SteadyStateSolution, arr: ArrayRealization, plane_z: float, grid: PlaneGrid,
                    beam: Optional[GaussianBeam] = None, chunk: int = 64) -> np.ndarray:
    """Field radiated by the dipoles on the plane z = plane_z, in drive units.

    With ``beam`` given, the incident paraxial field is added.
    """
    _check_spacing(grid)
    X, Y = grid.mesh()
    pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, plane_z)], axis=-1)
    out = np.zeros(X.size, dtype=complex)
    for start in range(0, arr.n_atoms, chunk):
        sl_ = slice(start, start + chunk)
        d = pts[None, :, :] - arr.positions[sl_, None, :]
        out += sol.dipoles[sl_] @ projected_green(d, arr.orientation)
    out *= KERNEL_SCALE
    if beam is not None:
        out += np.sqrt(beam.mode_area) * beam.propagated_exact(pts[:, 0], pts[:, 1], plane_z) * np.exp(1j * K_P * plane_z)
    return out.reshape(X.shape)


def project_onto_mode(samples, grid: PlaneGrid, beam: GaussianBeam, plane_z: float) -> complex:
    """Overlap of sampled field with the target mode propagated to plane_z, carrier phase removed."""
    _check_spacing(grid)
    X, Y = grid.mesh()
    g = grid.axis
    integrand = np.asarray(samples) * np.conj(beam.propagated_exact(X, Y, plane_z))
    val = np.trapezoid(np.trapezoid(integrand, g, axis=1), g)
    return complex(val * np.exp(-1j * K_P * abs(plane_z)))


def _plane_projection(arr, beam, plane_z, grid, chunk):
    _check_spacing(grid)
    X, Y = grid.mesh()
    g = grid.axis
    w1 = np.full(len(g), grid.spacing)
    w1[[0, -1]] /= 2
    weights = (w1[:, None] * w1[None, :]).ravel()
    mode = np.conj(beam.propagated_exact(X, Y, plane_z)).ravel() * weights
    pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, plane_z)], axis=-1)
    p = np.empty(arr.n_atoms, dtype=complex)
    for start in range(0, arr.n_atoms, chunk):
        sl_ = slice(start, start + chunk)
        d = pts[None, :, :] - arr.positions[sl_, None, :]
        p[sl_] = projected_green(d, arr.orientation) @ mode
    return KERNEL_SCALE * p * np.exp(-1j * K_P * abs(plane_z))


def _spectral_projection(arr, beam, plane_z, chunk):
    """Same overlap evaluated in the plane-wave basis.

    The transverse integral is done analytically through the Weyl expansion of
    the dipole field, leaving a polar quadrature over the mode spectrum.
    """
    w = beam.waist
    q_max = SPECTRUM_CUTOFF / w
    x, y, z = arr.positions.T
    reach = q_max * float(np.hypot(x, y).max(initial=0.0))
    nq, nphi = int(reach / 2) + 32, int(reach) + 32
    xg, wg = roots_legendre(nq)
    q = (xg + 1.0) * q_max / 2.0
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    Q, PH = np.meshgrid(q, phi, indexing="ij")
    qx, qy = (Q * np.cos(PH)).ravel(), (Q * np.sin(PH)).ravel()
    weights = np.repeat(wg * q_max / 2.0 * q * 2.0 * np.pi / nphi, nphi)
    kz = np.sqrt(K_P**2 - qx**2 - qy**2)
    side = np.sign(plane_z)
    e = arr.orientation.array
    kdot = qx * e[0] + qy * e[1] + side * kz * e[2]
    spectrum = np.sqrt(2.0 * np.pi) * w * np.exp(-(qx**2 + qy**2) * w**2 / 4.0)
    base = weights * spectrum * (1.0 - np.abs(kdot) ** 2 / K_P**2) / kz
    p = np.empty(arr.n_atoms, dtype=complex)
    for start in range(0, arr.n_atoms, chunk):
        sl_ = slice(start, start + chunk)
        phase = np.outer(x[sl_], qx) + np.outer(y[sl_], qy) + side * np.outer(z[sl_], kz)
        p[sl_] = np.exp(-1j * phase) @ base
    return KERNEL_SCALE * 1j / (8.0 * np.pi**2) * p


def projection_vector(arr: ArrayRealization, beam: GaussianBeam, plane_z: float,
                      grid: Optional[PlaneGrid] = None, method: str = "auto", chunk: int = 64) -> np.ndarray:
    """Row vector p with project_onto_mode(scattered_field(sigma)) = p @ sigma.

    ``method`` is "plane" (sampled plane, trapezoidal rule), "spectral"
    (plane-wave quadrature, needs a waist of at least 2.5 wavelengths) or
    "auto", which picks spectral whenever it is valid and no grid is given.
    """
    if np.any(np.abs(arr.positions[:, 2]) >= abs(plane_z)):
        raise ValueError("projection plane must lie outside the atom slab")
    spectral_ok = beam.waist >= MIN_SPECTRAL_WAIST
    if method == "auto":
        method = "spectral" if spectral_ok and grid is None else "plane"
    if method == "spectral":
        if not spectral_ok:
            raise ValueError(f"spectral projection needs waist >= {MIN_SPECTRAL_WAIST}")
        return _spectral_projection(arr, beam, plane_z, 256)
    if method != "plane":
        raise ValueError(f"unknown projection method {method!r}")
    return _plane_projection(arr, beam, plane_z, PlaneGrid.for_beam(beam) if grid is None else grid, chunk)


def paraxial_reflection(arr: ArrayRealization, beam: GaussianBeam, dipoles) -> complex:
    """Reflected amplitude from the beam-weighted collective dipole of a planar array."""
    lat = arr.lattice
    x, y, _ = arr.positions.T
    gamma0 = collective_rate_2d(lat)
    return complex(1j * gamma0 / 2 * lat.a**2 * np.sum(beam.profile(x, y) * dipoles) / np.sqrt(beam.mode_area))


@dataclass(frozen=True)
class LorentzianFit:
    r0: float
    center: float
    width: float


def lorentzian_amplitude(delta, r0: float, center: float, width: float):
    """|r| of a single resonance with full width ``width``."""
    half = width / 2.0
    return r0 * half / np.sqrt(half**2 + (np.asarray(delta) - center) ** 2)


def fit_lorentzian(delta, amplitude) -> LorentzianFit:
    """Least-squares fit of |r(delta)| to a single Lorentzian amplitude."""
    d = np.asarray(delta, float)
    y = np.asarray(amplitude, float)
    i = int(np.argmax(y))
    above = d[y >= y[i] / np.sqrt(2.0)]
    w0 = max(above.max() - above.min(), np.min(np.diff(d)) if len(d) > 1 else 1.0)
    scale = max(w0, 1e-12)

    def resid(x):
        return lorentzian_amplitude(d, x[0], d[i] + x[1] * scale, abs(x[2]) * scale) - y

    sol = least_squares(resid, [y[i], 0.0, w0 / scale], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if not sol.success:
        raise FitError(f"Lorentzian fit failed: {sol.message}")
    r0, c, w = sol.x
    return LorentzianFit(float(r0), float(d[i] + c * scale), float(abs(w) * scale))


@dataclass(frozen=True)
class ResonanceFit:
    r0: float
    cooperativity: float
    delta_res: float
    linewidth: float

    @property
    def inverse_cooperativity(self) -> float:
        return (1.0 - self.r0) / self.r0


@dataclass(frozen=True, eq=False)
class SpectrumScan:
    detunings: np.ndarray
    r: np.ndarray
    t: np.ndarray
    fit: Optional[ResonanceFit] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.detunings, float)
        if d.ndim != 1 or np.any(np.diff(d) <= 0):
            raise ValueError("detuning grid must be strictly increasing")

    @property
    def R(self) -> np.ndarray:
        return np.abs(self.r) ** 2

    @property
    def T(self) -> np.ndarray:
        return np.abs(self.t) ** 2

    @property
    def L(self) -> np.ndarray:
        return 1.0 - self.R - self.T

    def write_csv(self, path, header: str = "") -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta_p", "R", "T", "L"])
            for row in zip(self.detunings, self.R, self.T, self.L):
                w.writerow([f"{v:.12e}" for v in row])

    def fit_dict(self) -> dict:
        if self.fit is None:
            return {}
        f = self.fit
        return {"r0": f.r0, "C": f.cooperativity, "inv_C": f.inverse_cooperativity,
                "delta_res": f.delta_res, "linewidth": f.linewidth}

    def write_json(self, path, extra: Optional[dict] = None) -> None:
        doc = {"fit": self.fit_dict(), **self.meta, **(extra or {})}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _resonance(amp, verify, scan: np.ndarray, width_hint: float) -> ResonanceFit:
    """Locate the |r| maximum: coarse grid, Brent refinement, direct verification."""
    coarse = np.array([amp(x) for x in scan])
    i = int(np.argmax(coarse))
    if coarse[i] ** 2 < 1e-4:
        raise FitError(f"peak reflectance {coarse[i] ** 2:.2e} below 1e-4")
    if i == 0 or i == len(scan) - 1:
        raise FitError("reflectivity peak lies on the scan boundary")
    res = minimize_scalar(lambda x: -amp(x), bracket=(scan[i - 1], scan[i], scan[i + 1]), tol=1e-10)
    center = float(res.x)
    r0 = verify(center)
    if abs(r0 + res.fun) > 1e-6 * max(r0, 1e-12):
        raise NumericalError(f"resolvent and direct solve disagree at the peak ({r0:.10f} vs {-res.fun:.10f})")
    win = np.linspace(center - width_hint / 2, center + width_hint / 2, 41)
    lor = fit_lorentzian(win, [amp(x) for x in win])
    if r0 >= 1.0:
        raise FitError(f"peak |r| = {r0:.6f} not below one")
    return ResonanceFit(r0=r0, cooperativity=r0 / (1.0 - r0), delta_res=center, linewidth=lor.width)


def reflectivity_spectrum(arr: ArrayRealization, beam: GaussianBeam, scan: Sequence[float],
                          plane_distance: float = PLANE_DISTANCE, grid: Optional[PlaneGrid] = None,
                          direction: int = 1, fit: bool = True) -> SpectrumScan:
    """Reflection and transmission amplitudes over ``scan`` with resonance extraction.

    Amplitudes come from the projections of the radiated field at distance
    ``plane_distance`` before and behind the array, onto the target mode
    propagated to those planes. The spectrum is evaluated through the
    eigen-decomposition resolvent and the peak is confirmed by a direct solve.
    """
    scan = np.asarray(scan, float)
    M = build_matrix(arr)
    drive = drive_vector(arr, beam, direction)
    back = projection_vector(arr, beam, -direction * plane_distance, grid)
    fwd = projection_vector(arr, beam, direction * plane_distance, grid)
    norm = np.sqrt(beam.mode_area)
    lam, V = sl.eig(M.base)
    beta = np.linalg.solve(V, 1j * drive)
    a_b, a_f = (back @ V) * beta, (fwd @ V) * beta

    def r_of(x):
        return np.sum(a_b / (lam - 1j * x)) / norm

    def t_of(x):
        return 1.0 + np.sum(a_f / (lam - 1j * x)) / norm

    def verify(x):
        sol = solve_steady_state(M.with_detuning(x), drive)
        return float(abs(back @ sol.dipoles) / norm)

    r = np.array([r_of(x) for x in scan])
    t = np.array([t_of(x) for x in scan])
    res = None
    if fit:
        span = scan[-1] - scan[0]
        res = _resonance(lambda x: abs(r_of(x)), verify, scan, span / 10.0)
    return SpectrumScan(scan, r, t, res, {"n_atoms": arr.n_atoms, "seed": arr.seed,
                                          "plane_distance": plane_distance, "waist": beam.waist})


@dataclass(frozen=True, eq=False)
class EigenmodeSet:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    overlaps: np.ndarray
    pattern_overlaps: Optional[np.ndarray] = None
    unnormalized: tuple = ()

    @property
    def decay_rates(self) -> np.ndarray:
        return 2.0 * self.eigenvalues.real

    @property
    def shifts(self) -> np.ndarray:
        return self.eigenvalues.imag


def _overlap(V, target):
    t = np.asarray(target, complex)
    t = t / np.linalg.norm(t)
    return np.abs(t @ V) ** 2


def eigenmodes(M: InteractionMatrix, target=None, pattern=None, cluster_tol: float = 1e-8) -> EigenmodeSet:
    """Eigenmodes of the kernel, normalized under the bilinear form sum v^2 = 1.

    Numerically degenerate clusters are re-orthogonalized with the inverse
    square root of their bilinear Gram matrix.
    """
    lam, V = sl.eig(M.base)
    scale = max(np.max(np.abs(lam)), 1.0)
    order = np.lexsort((lam.imag, lam.real))
    lam, V = lam[order], V[:, order]
    bad = []
    i = 0
    n = len(lam)
    while i < n:
        j = i + 1
        while j < n and abs(lam[j] - lam[i]) < cluster_tol * scale:
            j += 1
        block = V[:, i:j]
        G = block.T @ block
        if j - i == 1:
            nrm = np.sqrt(G[0, 0])
            if abs(G[0, 0]) < 1e-10:
                bad.append(i)
                warnings.warn(f"mode {i} is self-orthogonal; left unnormalized", NumericalWarning, stacklevel=2)
            else:
                V[:, i] = block[:, 0] / nrm
        else:
            if abs(np.linalg.det(G)) < 1e-10:
                bad.extend(range(i, j))
                warnings.warn(f"degenerate cluster {i}:{j} is near an exceptional point", NumericalWarning, stacklevel=2)
            else:
                V[:, i:j] = block @ sl.inv(sl.sqrtm(G))
        i = j
    ov = _overlap(V, target) if target is not None else np.zeros(n)
    pov = _overlap(V, pattern) if pattern is not None else None
    return EigenmodeSet(lam, V, ov, pov, tuple(bad))


def _layer_rhs(nz: int, a_z: float, direction: int = 1) -> np.ndarray:
    return np.exp(1j * direction * K_P * a_z * np.arange(nz))


def layer_matrix(arr: ArrayRealization) -> np.ndarray:
    """Inter-layer kernel for the beam-weighted layer dipoles (zero diagonal)."""
    lat = arr.lattice
    nz = arr.n_layers
    D = np.zeros((nz, nz), dtype=complex)
    for dn in range(1, nz):
        v = interlayer_kernel(lat, dn)
        idx = np.arange(nz - dn)
        D[idx, idx + dn] = v
        D[idx + dn, idx] = v
    return D


def multilayer_effective_solve(arr: ArrayRealization, beam: Optional[GaussianBeam], scan: Sequence[float],
                               gamma_s: float = 0.0, eta: Optional[float] = None, delta0: float = 0.0,
                               fit: bool = True) -> SpectrumScan:
    """Reflectivity of stacked layers from the layer-collective linear system.

    Each layer is one beam-weighted dipole with self-term
    Gamma_0/2 + gamma_s/2 + i(delta0 - delta_p), coupled through the full
    diffraction-order kernel. ``delta0`` defaults to zero so detunings are
    measured from the single-layer shift.
    """
    lat = arr.lattice
    if eta is None:
        eta = mode_overlap_eta(beam, arr.side_length)
    nz = arr.n_layers
    gamma0 = collective_rate_2d(lat)
    D = layer_matrix(arr)
    fwd = _layer_rhs(nz, lat.a_z)
    bwd = _layer_rhs(nz, lat.a_z, -1)
    base = D + np.diag(np.full(nz, gamma0 / 2 + gamma_s / 2 + 1j * delta0))
    pref = eta * 1j * gamma0 / 2

    def solve(x):
        s = np.linalg.solve(base - 1j * x * np.eye(nz), 1j * fwd)
        res = np.linalg.norm((base - 1j * x * np.eye(nz)) @ s - 1j * fwd) / np.linalg.norm(fwd)
        if res > RESIDUAL_TOL:
            raise SingularMatrixError(f"layer system residual {res:.2e}")
        return pref * np.sum(s * fwd), 1.0 + pref * np.sum(s * bwd)

    scan = np.asarray(scan, float)
    vals = [solve(x) for x in scan]
    r = np.array([v[0] for v in vals])
    t = np.array([v[1] for v in vals])
    res = None
    if fit:
        amp = lambda x: abs(solve(x)[0])
        res = _resonance(amp, amp, scan, (scan[-1] - scan[0]) / 10.0)
    return SpectrumScan(scan, r, t, res, {"n_layers": nz, "eta": eta, "gamma_s": gamma_s})
