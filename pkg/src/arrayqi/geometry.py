"""Array realizations, positional disorder, superlattice detunings and Gaussian beams."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import erf, j0, roots_legendre

from .greens import K_P, DipoleOrientation, LatticeParams

MIN_SEPARATION = 1e-6


def _frozen(x, dtype) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ArrayRealization:
    """One concrete atom configuration.

    ``indices`` holds the integer in-plane lattice labels (n_x, n_y) assigned at
    build time; they survive disorder so superlattice patterns stay defined.
    """

    positions: np.ndarray
    detunings: np.ndarray
    noncollective_rates: np.ndarray
    layer_index: np.ndarray
    seed: Optional[int] = None
    lattice: Optional[LatticeParams] = None
    indices: Optional[np.ndarray] = None
    n_side: Optional[int] = None

    def __post_init__(self):
        pos = _frozen(self.positions, float).reshape(-1, 3)
        n = len(pos)
        object.__setattr__(self, "positions", pos)
        for name, dtype in (("detunings", float), ("noncollective_rates", float), ("layer_index", int)):
            arr = _frozen(getattr(self, name), dtype)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have one entry per atom")
            object.__setattr__(self, name, arr)
        if self.indices is not None:
            idx = _frozen(self.indices, int)
            if idx.shape != (n, 2):
                raise ValueError("indices must have shape (N, 2)")
            object.__setattr__(self, "indices", idx)
        if np.any(self.noncollective_rates < 0):
            raise ValueError("non-collective rates must be non-negative")
        if n > 1 and cKDTree(pos).query_pairs(MIN_SEPARATION):
            raise ValueError("two atoms are closer than the minimum separation")

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    @property
    def orientation(self) -> DipoleOrientation:
        return self.lattice.orientation if self.lattice is not None else DipoleOrientation()

    @property
    def n_layers(self) -> int:
        return int(self.layer_index.max()) + 1 if self.n_atoms else 0

    @property
    def side_length(self) -> float:
        """Footprint width L_a = n_side * a."""
        if self.lattice is None or self.n_side is None:
            raise ValueError("array has no lattice metadata")
        return self.n_side * self.lattice.a

    @property
    def parity(self) -> np.ndarray:
        """Checkerboard sign (-1)^(n_x + n_y)."""
        if self.indices is None:
            raise ValueError("array has no lattice index metadata")
        return np.where(self.indices.sum(axis=1) % 2 == 0, 1.0, -1.0)

    def with_updates(self, **changes) -> "ArrayRealization":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        lat = None
        if self.lattice is not None:
            e = self.lattice.orientation.array
            lat = {
                "a": self.lattice.a,
                "a_z": self.lattice.a_z,
                "orientation": [[c.real, c.imag] for c in e],
            }
        return {
            "positions": self.positions.tolist(),
            "detunings": self.detunings.tolist(),
            "noncollective_rates": self.noncollective_rates.tolist(),
            "layer_index": self.layer_index.tolist(),
            "seed": self.seed,
            "lattice": lat,
            "indices": None if self.indices is None else self.indices.tolist(),
            "n_side": self.n_side,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayRealization":
        lat = d.get("lattice")
        if lat is not None:
            e = [complex(re, im) for re, im in lat["orientation"]]
            lat = LatticeParams(lat["a"], lat["a_z"], DipoleOrientation(tuple(e)))
        return cls(
            positions=np.asarray(d["positions"], float),
            detunings=np.asarray(d["detunings"], float),
            noncollective_rates=np.asarray(d["noncollective_rates"], float),
            layer_index=np.asarray(d["layer_index"], int),
            seed=d.get("seed"),
            lattice=lat,
            indices=None if d.get("indices") is None else np.asarray(d["indices"], int),
            n_side=d.get("n_side"),
        )

    @classmethod
    def from_json(cls, text: str) -> "ArrayRealization":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GaussianBeam:
    """Paraxial Gaussian target mode propagating along +z with its waist at z = 0."""

    waist: float

    def __post_init__(self):
        if not self.waist > 0:
            raise ValueError("waist must be positive")

    @property
    def mode_area(self) -> float:
        return np.pi * self.waist**2 / 2.0

    @property
    def rayleigh_range(self) -> float:
        return np.pi * self.waist**2

    def profile(self, x, y) -> np.ndarray:
        """Unit-normalized waist profile u(r_perp)."""
        r2 = np.asarray(x) ** 2 + np.asarray(y) ** 2
        return np.sqrt(2.0 / np.pi) / self.waist * np.exp(-r2 / self.waist**2)

    def envelope(self, x, y) -> np.ndarray:
        """Profile relative to its on-axis value."""
        r2 = np.asarray(x) ** 2 + np.asarray(y) ** 2
        return np.exp(-r2 / self.waist**2)

    def propagated(self, x, y, distance: float) -> np.ndarray:
        """Paraxial mode a distance ``|distance|`` from the waist, carrier phase removed."""
        s = abs(distance)
        if s == 0:
            return self.profile(x, y).astype(complex)
        zr = self.rayleigh_range
        ws = self.waist * np.sqrt(1.0 + (s / zr) ** 2)
        curv = s * (1.0 + (zr / s) ** 2)
        gouy = np.arctan(s / zr)
        r2 = np.asarray(x) ** 2 + np.asarray(y) ** 2
        amp = np.sqrt(2.0 / np.pi) / ws * np.exp(-r2 / ws**2)
        return amp * np.exp(1j * K_P * r2 / (2.0 * curv) - 1j * gouy)

    def propagated_exact(self, x, y, distance: float, nodes: int = 400) -> np.ndarray:
        """Mode propagated by its exact angular spectrum, carrier phase removed.

        Unlike :meth:`propagated` this is unitary, so projections onto it conserve
        energy to quadrature accuracy.
        """
        w = self.waist
        q_max = 14.0 / w
        xg, wg = roots_legendre(nodes)
        q = (xg + 1.0) * q_max / 2.0
        spectrum = np.sqrt(2.0 * np.pi) * w * np.exp(-((q * w) ** 2) / 4.0)
        kz = np.sqrt((K_P**2 - q**2).astype(complex))
        weights = spectrum * np.exp(1j * (kz - K_P) * abs(distance)) * q * wg * q_max / 2.0
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        rho = np.hypot(x, y).ravel()
        out = np.empty(rho.size, dtype=complex)
        for start in range(0, rho.size, 4096):
            chunk = rho[start:start + 4096]
            out[start:start + 4096] = j0(chunk[:, None] * q[None, :]) @ weights
        return out.reshape(shape) / (2.0 * np.pi)


@dataclass(frozen=True)
class DisorderSpec:
    """Independent positional jitter with standard deviation ``sigma`` per axis."""

    sigma: float
    realizations: int = 1
    base_seed: int = 0
    distribution: str = "normal"
    axes: str = "xyz"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.realizations < 1:
            raise ValueError("need at least one realization")
        if self.distribution not in ("normal", "uniform"):
            raise ValueError("distribution must be 'normal' or 'uniform'")
        if not self.axes or any(c not in "xyz" for c in self.axes):
            raise ValueError("axes must be a subset of 'xyz'")


def build_2d(lat: LatticeParams, n_side: int) -> ArrayRealization:
    """Square n_side x n_side array in the z = 0 plane, centroid at the origin."""
    if n_side < 1:
        raise ValueError("n_side must be at least 1")
    ix, iy = np.meshgrid(np.arange(n_side), np.arange(n_side), indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()
    c = (n_side - 1) / 2.0
    pos = np.column_stack([lat.a * (ix - c), lat.a * (iy - c), np.zeros(ix.size)])
    n = ix.size
    return ArrayRealization(
        positions=pos,
        detunings=np.zeros(n),
        noncollective_rates=np.zeros(n),
        layer_index=np.zeros(n, int),
        lattice=lat,
        indices=np.column_stack([ix, iy]),
        n_side=n_side,
    )


def build_3d(lat: LatticeParams, n_side: int, nz: int) -> ArrayRealization:
    """``nz`` copies of the 2D array stacked at z = a_z * n_z."""
    if nz < 1:
        raise ValueError("nz must be at least 1")
    layer = build_2d(lat, n_side)
    pos = np.concatenate([layer.positions + [0.0, 0.0, lat.a_z * k] for k in range(nz)])
    n = len(pos)
    return ArrayRealization(
        positions=pos,
        detunings=np.zeros(n),
        noncollective_rates=np.zeros(n),
        layer_index=np.repeat(np.arange(nz), layer.n_atoms),
        lattice=lat,
        indices=np.tile(layer.indices, (nz, 1)),
        n_side=n_side,
    )


def disorder_rng(base_seed: int, realization_index: int) -> np.random.Generator:
    """Independent stream for one realization, keyed by (base_seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), int(realization_index)]))


def apply_disorder(arr: ArrayRealization, spec: DisorderSpec, realization_index: int) -> ArrayRealization:
    """Return a new realization with every selected coordinate jittered."""
    rng = disorder_rng(spec.base_seed, realization_index)
    shape = (arr.n_atoms, 3)
    if spec.distribution == "normal":
        shift = rng.standard_normal(shape)
    else:
        shift = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), shape)
    mask = np.array([c in spec.axes for c in "xyz"], float)
    pos = arr.positions + spec.sigma * shift * mask
    seed = (int(spec.base_seed) * 1_000_003 + int(realization_index)) % 2**63
    return arr.with_updates(positions=pos, seed=seed)


def checkerboard_detuning(arr: ArrayRealization, V: float) -> ArrayRealization:
    """Set per-atom detunings to V (-1)^(n_x + n_y)."""
    return arr.with_updates(detunings=V * arr.parity)


def mode_overlap_eta(beam: GaussianBeam, L_a: float) -> float:
    """Fraction of the beam intensity falling on a square footprint of side L_a."""
    if L_a <= 0:
        raise ValueError("footprint must be positive")
    return float(erf(L_a / (np.sqrt(2.0) * beam.waist)) ** 2)


def eta_complement_asymptotic(beam: GaussianBeam, L_a: float) -> float:
    """Large-footprint asymptote of 1 - eta."""
    x = np.sqrt(2.0) * beam.waist / L_a
    return float(2.0 / np.sqrt(np.pi) * x * np.exp(-(L_a**2) / (2.0 * beam.waist**2)))


def footprint_overlap(profile: Callable, L_a: float, resolution: float = 0.125) -> float:
    """Integral of |profile|^2 over the square footprint, by trapezoidal quadrature."""
    n = int(np.ceil(L_a / resolution)) + 1
    g = np.linspace(-L_a / 2, L_a / 2, n)
    x, y = np.meshgrid(g, g, indexing="ij")
    inner = np.trapezoid(np.abs(profile(x, y)) ** 2, g, axis=1)
    return float(np.trapezoid(inner, g))
