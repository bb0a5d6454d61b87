"""Quantum-memory protocol on the 1D interface model.

The classical means of the dipole P and spin S obey

    dP/dt = -[(G + g_loss)/2 + i(D - d_p)] P + i Om S + i sqrt(G) E_in
    dS/dt = i d_2 S + i Om* P

and are integrated with fixed-step RK4, the input and control samples being
interpolated linearly between grid points.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson

from .errors import DomainError, InstabilityError, NumericalWarning
from .model1d import InterfaceParams

HALVING_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class PulseShape:
    """Complex samples on a uniform grid starting at t = 0."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.grid, dtype=float)
        v = np.array(self.values, dtype=complex)
        if t.ndim != 1 or t.shape != v.shape or len(t) < 2:
            raise ValueError("grid and values must be 1D arrays of equal length >= 2")
        step = np.diff(t)
        if not np.all(step > 0) or np.ptp(step) > 1e-9 * max(abs(t[-1]), 1.0):
            raise ValueError("grid must be uniform and increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "grid", t)
        object.__setattr__(self, "values", v)

    @property
    def duration(self) -> float:
        return float(self.grid[-1] - self.grid[0])

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def energy(self) -> float:
        return float(np.trapezoid(np.abs(self.values) ** 2, self.grid))

    def normalized(self) -> "PulseShape":
        return PulseShape(self.grid, self.values / np.sqrt(self.energy()))

    def scaled(self, factor: complex) -> "PulseShape":
        return PulseShape(self.grid, factor * self.values)


def exponential_pulse(rate: float, duration: Optional[float] = None, step: float = 0.05) -> PulseShape:
    """Normalized rising exponential exp(rate t / 2); default duration 20 / rate."""
    T = 20.0 / rate if duration is None else duration
    t = np.linspace(0.0, T, int(round(T / step)) + 1)
    return PulseShape(t, np.exp(rate * (t - T) / 2.0)).normalized()


def zero_pulse(like: PulseShape) -> PulseShape:
    return PulseShape(like.grid, np.zeros_like(like.values))


@dataclass(frozen=True, eq=False)
class MemoryRun:
    times: np.ndarray
    P: np.ndarray
    S: np.ndarray
    input: PulseShape
    control: PulseShape
    stored_excitation: float
    efficiency: float
    emitted: float


def optimal_storage_control(h0: PulseShape, p: InterfaceParams, delta_p: float,
                            clamp: float = 1e3, start_fraction: float = 1e-3) -> PulseShape:
    """Control that maps ``h0`` onto the spin with the maximal efficiency C/(1+C).

    The closed form diverges where the accumulated input energy vanishes; the
    control is held at zero before ``start_fraction * T`` and its magnitude is
    capped at ``clamp * (G + g_loss)``.
    """
    t = h0.grid
    T = t[-1]
    A = p.total_rate
    det = p.collective_shift - delta_p
    cum = cumulative_trapezoid(np.abs(h0.values) ** 2, t, initial=0.0)
    active = (t >= start_fraction * T) & (cum > 0)
    expo = (1.0 + 2j * det / A) / 2.0
    om = np.zeros(len(t), dtype=complex)
    pref = (-A / 2.0 - 1j * det) / np.sqrt(A)
    om[active] = pref * h0.values[active] / np.power(cum[active], expo)
    om *= np.exp(1j * p.two_photon_detuning * (T - t))
    cap = clamp * A
    big = np.abs(om) > cap
    if np.any(big):
        warnings.warn("optimal control clamped near the singular start", NumericalWarning, stacklevel=2)
        om[big] *= cap / np.abs(om[big])
    return PulseShape(t, om)


def time_reverse_control(control: PulseShape) -> PulseShape:
    """Conjugate time reverse Om*(T - t) on the same grid."""
    return PulseShape(control.grid, np.conj(control.values[::-1]))


def _coefficients(p: InterfaceParams, delta_p: float, h, om):
    """Matrix A(t) and source b(t) of y' = A y + b for y = (P, S)."""
    a = -p.total_rate / 2.0 - 1j * (p.collective_shift - delta_p)
    n = len(h)
    A = np.zeros((n, 2, 2), dtype=complex)
    A[:, 0, 0] = a
    A[:, 0, 1] = 1j * om
    A[:, 1, 0] = 1j * np.conj(om)
    A[:, 1, 1] = 1j * complex(p.two_photon_detuning)
    b = np.zeros((n, 2), dtype=complex)
    b[:, 0] = 1j * np.sqrt(p.gamma_target) * h
    return A, b


def _integrate(p: InterfaceParams, delta_p: float, t, h, om, P0: complex, S0: complex, sub: int):
    """RK4 with ``sub`` steps per sample interval.

    The system is linear, so each step is the exact RK4 update y -> Phi y + c;
    the propagators are built in bulk and only the recurrence runs serially.
    Returns P and S on the sample grid and the emitted target-mode energy.
    """
    t = np.asarray(t, float)
    x = np.arange(sub + 1) / sub
    h_f = np.concatenate([(h[:-1, None] + (h[1:] - h[:-1])[:, None] * x[:-1]).ravel(), h[-1:]])
    o_f = np.concatenate([(om[:-1, None] + (om[1:] - om[:-1])[:, None] * x[:-1]).ravel(), om[-1:]])
    xm = (np.arange(sub) + 0.5) / sub
    h_m = (h[:-1, None] + (h[1:] - h[:-1])[:, None] * xm).ravel()
    o_m = (om[:-1, None] + (om[1:] - om[:-1])[:, None] * xm).ravel()
    dt = np.repeat(np.diff(t) / sub, sub)[:, None, None]
    A_f, b_f = _coefficients(p, delta_p, h_f, o_f)
    A_m, b_m = _coefficients(p, delta_p, h_m, o_m)
    A0, A1, b0, b1 = A_f[:-1], A_f[1:], b_f[:-1], b_f[1:]
    eye = np.eye(2)
    mv = lambda M, v: np.einsum("nij,nj->ni", M, v)
    K1, c1 = A0, b0
    K2, c2 = A_m + dt / 2 * (A_m @ K1), dt[:, 0] / 2 * mv(A_m, c1) + b_m
    K3, c3 = A_m + dt / 2 * (A_m @ K2), dt[:, 0] / 2 * mv(A_m, c2) + b_m
    K4, c4 = A1 + dt * (A1 @ K3), dt[:, 0] * mv(A1, c3) + b1
    Phi = eye + dt / 6 * (K1 + 2 * K2 + 2 * K3 + K4)
    c = dt[:, 0] / 6 * (c1 + 2 * c2 + 2 * c3 + c4)
    f00, f01, f10, f11 = (Phi[:, i, j].tolist() for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))
    cp, cs = c[:, 0].tolist(), c[:, 1].tolist()
    P, S = complex(P0), complex(S0)
    Pf = [P]
    Sf = [S]
    for k in range(len(cp)):
        P, S = f00[k] * P + f01[k] * S + cp[k], f10[k] * P + f11[k] * S + cs[k]
        Pf.append(P)
        Sf.append(S)
    Pf = np.array(Pf)
    Sf = np.array(Sf)
    t_f = np.concatenate([(t[:-1, None] + np.diff(t)[:, None] * x[:-1]).ravel(), t[-1:]])
    out = h_f + 1j * np.sqrt(p.gamma_target) * Pf
    E = float(simpson(np.abs(out) ** 2, x=t_f)) if len(t_f) > 2 else float(np.trapezoid(np.abs(out) ** 2, t_f))
    return Pf[::sub], Sf[::sub], E


def _substeps(grid_step: float, dt: Optional[float], p: InterfaceParams, om) -> int:
    limit = 0.05 / max(p.total_rate, float(np.max(np.abs(om), initial=0.0)))
    if dt is None:
        dt = limit
    if dt > limit * (1 + 1e-9):
        raise DomainError(f"dt = {dt:.3g} exceeds the stability limit {limit:.3g}")
    return max(1, int(np.ceil(grid_step / dt - 1e-9)))


def _run(p, delta_p, h: PulseShape, control: PulseShape, P0, S0, dt, check):
    if not np.allclose(h.grid, control.grid):
        raise ValueError("input and control must share a grid")
    sub = _substeps(h.step, dt, p, control.values)
    P, S, E = _integrate(p, delta_p, h.grid, h.values, control.values, P0, S0, sub)
    if check:
        Pf, Sf, Ef = _integrate(p, delta_p, h.grid, h.values, control.values, P0, S0, 2 * sub)
        ref = max(abs(S0) ** 2, h.energy(), 1e-300)
        dev = max(abs(abs(S[-1]) ** 2 - abs(Sf[-1]) ** 2), abs(E - Ef)) / ref
        if dev > HALVING_TOL:
            raise InstabilityError(f"step halving changed the efficiency by {dev:.2e}")
    return P, S, E


def simulate_storage(h0: PulseShape, control: PulseShape, p: InterfaceParams, delta_p: float,
                     dt: Optional[float] = None, check: bool = True) -> MemoryRun:
    """Store ``h0`` with ``control``; efficiency is |S(T)|^2 over the input energy."""
    P, S, E = _run(p, delta_p, h0, control, 0.0, 0.0, dt, check)
    stored = float(abs(S[-1]) ** 2)
    return MemoryRun(h0.grid, P, S, h0, control, stored, stored / h0.energy(), E)


def simulate_retrieval(S0: complex, control: PulseShape, p: InterfaceParams, delta_p: float,
                       dt: Optional[float] = None, check: bool = True) -> MemoryRun:
    """Read out a spin amplitude ``S0``; efficiency is the target-mode output energy over |S0|^2."""
    if abs(S0) == 0:
        raise DomainError("retrieval needs a nonzero stored amplitude")
    if p.two_photon_detuning != 0:
        warnings.warn("retrieval with nonzero two-photon detuning is experimental", stacklevel=2)
    empty = zero_pulse(control)
    P, S, E = _run(p, delta_p, empty, control, 0.0, S0, dt, check)
    return MemoryRun(control.grid, P, S, empty, control, float(abs(S[-1]) ** 2), E / abs(S0) ** 2, E)


@dataclass(frozen=True)
class StoreRetrieveResult:
    storage: float
    retrieval: float
    total: float


def store_hold_retrieve(h0: PulseShape, control: PulseShape, p: InterfaceParams, delta_p: float,
                        hold: float, retrieval_control: Optional[PulseShape] = None,
                        dt: Optional[float] = None) -> StoreRetrieveResult:
    """Storage, a hold with the control off, then retrieval, as one continuous evolution."""
    ret = time_reverse_control(control) if retrieval_control is None else retrieval_control
    step = h0.step
    n_hold = max(1, int(round(hold / step)))
    t_hold = np.arange(n_hold + 1) * step
    store = simulate_storage(h0, control, p, delta_p, dt)
    held = _integrate(p, delta_p, t_hold, np.zeros(n_hold + 1, complex), np.zeros(n_hold + 1, complex),
                      store.P[-1], store.S[-1], _substeps(step, dt, p, control.values))
    P_r, S_r, E_r = _run(p, delta_p, zero_pulse(ret), ret, held[0][-1], held[1][-1], dt, True)
    retrieval = simulate_retrieval(store.S[-1], ret, p, delta_p, dt)
    return StoreRetrieveResult(store.efficiency, retrieval.efficiency, E_r / h0.energy())


def read_pulse_csv(path) -> PulseShape:
    """Read a pulse from a CSV file with columns t, re, im."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header = [c.strip() for c in rows[0]]
    if header != ["t", "re", "im"]:
        raise ValueError("pulse CSV must have header t,re,im")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return PulseShape(data[:, 0], data[:, 1] + 1j * data[:, 2])


def write_pulse_csv(pulse: PulseShape, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "re", "im"])
        for t, v in zip(pulse.grid, pulse.values):
            w.writerow([f"{t:.12e}", f"{v.real:.12e}", f"{v.imag:.12e}"])


def write_memory_run_csv(run: MemoryRun, path, header: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "re_P", "im_P", "re_S", "im_S", "re_control", "im_control", "re_input", "im_input"])
        for k, t in enumerate(run.times):
            vals = (run.P[k], run.S[k], run.control.values[k], run.input.values[k])
            w.writerow([f"{t:.12e}"] + [f"{x:.12e}" for v in vals for x in (v.real, v.imag)])


def storage_bound(p: InterfaceParams) -> float:
    """Optimal storage (and retrieval) efficiency C / (1 + C)."""
    return p.gamma_target / p.total_rate


def cumulative_spin_rate(h0: PulseShape) -> float:
    """Integral of the effective spin rate |h0|^2 / cumulative energy over the pulse."""
    cum = cumulative_trapezoid(np.abs(h0.values) ** 2, h0.grid, initial=0.0)
    start = np.argmax(cum > 0)
    return float(np.log(cum[-1] / cum[start]))
