"""Free-space dipole-dipole kernels and closed-form lattice quantities.

Units: wavelength = 1 and single-atom decay rate = 1.

Sign convention, used by every module: the dipole amplitudes obey

    d sigma_n / dt = (i delta_p - D_nn) sigma_n - sum_{m != n} D_nm sigma_m + i drive_n

with D_nm = -i (3 pi / k) G_nm, so that a mode with kernel eigenvalue ``lam``
decays at rate ``2 Re lam`` and is shifted by ``Im lam``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError, NumericalError, NumericalWarning

K_P = 2.0 * np.pi
KERNEL_SCALE = 3.0 * np.pi / K_P
EVANESCENT_RANGE = 20.0


@dataclass(frozen=True)
class DipoleOrientation:
    """Unit complex 3-vector of the transition dipole."""

    vector: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=complex)
        if v.shape != (3,):
            raise ValueError("orientation must be a 3-vector")
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("orientation must have unit norm")
        object.__setattr__(self, "vector", tuple(complex(c) for c in v))

    @classmethod
    def from_vector(cls, v) -> "DipoleOrientation":
        v = np.asarray(v, dtype=complex)
        return cls(tuple(v / np.linalg.norm(v)))

    @classmethod
    def named(cls, name: str) -> "DipoleOrientation":
        table = {
            "x": (1, 0, 0),
            "y": (0, 1, 0),
            "z": (0, 0, 1),
            "sigma+": (1 / np.sqrt(2), 1j / np.sqrt(2), 0),
            "sigma-": (1 / np.sqrt(2), -1j / np.sqrt(2), 0),
        }
        if name not in table:
            raise ValueError(f"unknown orientation {name!r}")
        return cls(table[name])

    @property
    def array(self) -> np.ndarray:
        return np.array(self.vector, dtype=complex)


@dataclass(frozen=True)
class LatticeParams:
    """Square lattice constant ``a``, layer spacing ``a_z`` and dipole orientation."""

    a: float
    a_z: float = 1.0
    orientation: DipoleOrientation = field(default_factory=DipoleOrientation)

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("lattice constant must be positive")
        if not self.a_z > 0:
            raise ValueError("layer spacing must be positive")


def projected_green(r, orientation: DipoleOrientation) -> np.ndarray:
    """Return e* . G(r) . e for displacement(s) ``r`` of shape (..., 3)."""
    r = np.asarray(r, dtype=float)
    dist = np.linalg.norm(r, axis=-1)
    if np.any(dist == 0):
        raise DomainError("projected Green's function is singular at r = 0")
    e = orientation.array
    kr = K_P * dist
    cos2 = np.abs((r @ e) / dist) ** 2
    near = 1.0 + (1j * kr - 1.0) / kr**2
    far = (3.0 - 3j * kr - kr**2) / kr**2
    return np.exp(1j * kr) / (4 * np.pi * dist) * (near + far * cos2)


def dipole_kernel(positions, orientation: DipoleOrientation, chunk: int = 512) -> np.ndarray:
    """Off-diagonal kernel D_nm for the given positions; the diagonal is zero."""
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    out = np.zeros((n, n), dtype=complex)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = pos[start:stop, None, :] - pos[None, :, :]
        rows = np.arange(stop - start)
        d[rows, rows + start, 0] = 1.0
        block = -1j * KERNEL_SCALE * projected_green(d, orientation)
        block[rows, rows + start] = 0.0
        out[start:stop] = block
    return out


def collective_rate_2d(lat: LatticeParams) -> float:
    """Collective emission rate of a uniformly excited infinite array."""
    return 3.0 / (4.0 * np.pi * lat.a**2)


@dataclass(frozen=True)
class LatticeShift:
    delta0: float
    error: float
    half_rate: float


def _windowed_lattice_sum(lat: LatticeParams, window: float) -> complex:
    radius = 5.0 * window
    m = int(np.ceil(radius / lat.a))
    ix, iy = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    xy = lat.a * np.stack([ix.ravel(), iy.ravel()], axis=-1).astype(float)
    rho = np.hypot(xy[:, 0], xy[:, 1])
    keep = (rho > 0) & (rho <= radius)
    xy, rho = xy[keep], rho[keep]
    order = np.lexsort((xy[:, 1], xy[:, 0], rho))
    xy, rho = xy[order], rho[order]
    r = np.column_stack([xy, np.zeros(len(xy))])
    terms = -1j * KERNEL_SCALE * projected_green(r, lat.orientation) * np.exp(-((rho / window) ** 2))
    return 0.5 + complex(np.sum(terms))


def collective_shift_2d(lat: LatticeParams, cutoff_radius: float = 50.0, tol: float = 1e-5) -> LatticeShift:
    """Infinite-array shift from a Gaussian-windowed real-space lattice sum.

    The window of width ``cutoff_radius / 5`` biases the sum by O(1/R^2); two
    Richardson-extrapolated values (cutoff and doubled cutoff) give the result
    and its error estimate.
    """
    if cutoff_radius < 50.0:
        raise DomainError("cutoff_radius must be at least 50 wavelengths")
    w = cutoff_radius / 5.0
    s1, s2, s4 = (_windowed_lattice_sum(lat, f * w) for f in (1.0, 2.0, 4.0))
    coarse = (4.0 * s2 - s1) / 3.0
    fine = (4.0 * s4 - s2) / 3.0
    err = abs(fine - coarse)
    if err > tol:
        raise ConvergenceError(f"lattice sum changed by {err:.3e} on doubling the cutoff")
    return LatticeShift(delta0=fine.imag, error=err, half_rate=fine.real)


def diffraction_orders(a: float, include_zero: bool = False) -> list[tuple[int, int]]:
    """Propagating diffraction orders (m_x, m_y) of a square lattice."""
    m = int(np.floor(a))
    out = []
    for mx in range(-m, m + 1):
        for my in range(-m, m + 1):
            if (mx, my) == (0, 0) and not include_zero:
                continue
            if mx * mx + my * my < a * a:
                out.append((mx, my))
    return sorted(out, key=lambda o: (o[0] ** 2 + o[1] ** 2, o))


def _numerator(lat: LatticeParams, mx, my):
    e = lat.orientation.array
    return 1.0 - np.abs(mx * e[0] + my * e[1]) ** 2 / lat.a**2


def diffraction_loss(lat: LatticeParams) -> float:
    """Loss rate into propagating diffraction orders other than (0, 0)."""
    a = lat.a
    m = int(np.floor(a)) + 1
    for mx in range(-m, m + 1):
        for my in range(-m, m + 1):
            if (mx, my) != (0, 0) and abs(mx * mx + my * my - a * a) < 1e-9:
                warnings.warn(f"order {(mx, my)} is grazing", NumericalWarning, stacklevel=2)
    total = 0.0
    for mx, my in diffraction_orders(a):
        q2 = (mx * mx + my * my) / a**2
        if 1.0 - q2 < 1e-12:
            continue
        total += float(np.real(_numerator(lat, mx, my))) / np.sqrt(1.0 - q2)
    return collective_rate_2d(lat) * total


@dataclass(frozen=True)
class OrderSum:
    """Diffraction-order sum with its truncation report."""

    value: complex
    orders: int
    first_excluded: float


def order_sum(lat: LatticeParams, dn: int, propagating: bool = True, evanescent: bool = True) -> OrderSum:
    """Sum of diffraction-order terms mediating the coupling between layers ``dn`` apart.

    Evanescent orders are kept while their decay length exceeds ``a_z |dn| / 20``.
    """
    if dn == 0:
        raise DomainError("layer separation must be nonzero")
    dist = lat.a_z * abs(dn)
    a = lat.a
    s_max = EVANESCENT_RANGE / (K_P * dist)
    m = int(np.ceil(a * np.sqrt(1.0 + s_max**2))) + 1
    mx, my = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    mx, my = mx.ravel(), my.ravel()
    order = np.lexsort((my, mx, mx**2 + my**2))
    mx, my = mx[order], my[order]
    q2 = (mx**2 + my**2) / a**2
    num = _numerator(lat, mx, my)
    half = collective_rate_2d(lat) / 2.0
    total = 0.0 + 0.0j
    used = 0
    excluded = 0.0
    for qq, nn in zip(q2, num):
        if qq < 1.0:
            if not propagating:
                continue
            kz = np.sqrt(1.0 - qq)
            if kz < 1e-12:
                warnings.warn("grazing diffraction order skipped", NumericalWarning, stacklevel=2)
                continue
            total += half * nn / kz * np.exp(1j * K_P * kz * dist)
            used += 1
        else:
            s = np.sqrt(qq - 1.0)
            if s < 1e-12:
                warnings.warn("grazing diffraction order skipped", NumericalWarning, stacklevel=2)
                continue
            term = -1j * half * nn / s * np.exp(-K_P * s * dist)
            if K_P * s * dist <= EVANESCENT_RANGE:
                if evanescent:
                    total += term
                    used += 1
            else:
                excluded = max(excluded, abs(term))
    return OrderSum(value=complex(total), orders=used, first_excluded=float(excluded))


def interlayer_kernel(lat: LatticeParams, dn: int) -> complex:
    """Effective coupling between the beam-weighted dipoles of two layers."""
    return order_sum(lat, dn).value


def evanescent_correction(lat: LatticeParams, dn: int) -> float:
    """Real correction eps such that the layer kernel is (G0/2) e^{ik a_z|dn|} + i eps."""
    if lat.a >= 1.0:
        raise DomainError("evanescent correction is defined for a < wavelength")
    return float(np.imag(order_sum(lat, dn, propagating=False).value))


def phase_matched_shift(lat: LatticeParams, nz: int) -> float:
    """First-order shift of the phase-matched multilayer mode."""
    if nz < 1:
        raise DomainError("layer count must be positive")
    if abs(2 * lat.a_z - round(2 * lat.a_z)) > 1e-9:
        raise DomainError("phase matching needs 2 a_z to be an integer")
    if nz == 1:
        return 0.0
    eps = {d: evanescent_correction(lat, d) for d in range(1, nz)}
    idx = np.arange(nz)
    diff = idx[:, None] - idx[None, :]
    phase = np.exp(1j * K_P * lat.a_z * diff)
    weights = np.zeros((nz, nz))
    off = diff != 0
    weights[off] = [eps[abs(d)] for d in diff[off]]
    val = np.sum(phase * weights) / nz
    if abs(val.imag) > 1e-8:
        raise NumericalError(f"phase-matched shift has imaginary residue {val.imag:.2e}")
    return float(val.real)
