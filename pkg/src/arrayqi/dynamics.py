"""Time-domain coupled-dipole dynamics and the subradiant-mode memory.

The dipoles obey

    d sigma / dt = -(K - i delta_p(t) - i V(t) diag(pattern)) sigma + i h(t) b

with K the kernel of :func:`scattering.build_matrix`, ``pattern`` the
checkerboard parity and ``b`` the spatial drive. When the array is symmetric
under the two in-plane reflections the state is expanded in reflection
sectors and only sectors reachable from the drive and the initial state are
integrated; the reduction is exact and checked against the kernel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import DomainError, InstabilityError
from .geometry import ArrayRealization, GaussianBeam, mode_overlap_eta
from .greens import K_P, collective_rate_2d, collective_shift_2d
from .memory import PulseShape, exponential_pulse, optimal_storage_control, time_reverse_control
from .model1d import InterfaceParams
from .scattering import build_matrix

HALVING_TOL = 1e-4
SYMMETRY_TOL = 1e-12
M_POINT_LIMIT = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class DriveSchedule:
    """Input envelope h(t), checkerboard amplitude V(t) and probe detuning on one grid."""

    grid: np.ndarray
    input: np.ndarray
    modulation: np.ndarray
    delta_p: np.ndarray

    def __post_init__(self):
        t = np.array(self.grid, float)
        n = len(t)
        if n < 2 or np.any(np.diff(t) <= 0) or np.ptp(np.diff(t)) > 1e-9 * max(abs(t[-1]), 1.0):
            raise ValueError("schedule grid must be uniform and increasing")
        fields = {"grid": t}
        for name, dtype in (("input", complex), ("modulation", float), ("delta_p", float)):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype), (n,)).copy()
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            fields[name] = arr
        for name, arr in fields.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def constant(cls, duration: float, step: float, input: complex = 0.0, modulation: float = 0.0,
                 delta_p: float = 0.0) -> "DriveSchedule":
        t = np.linspace(0.0, duration, int(round(duration / step)) + 1)
        return cls(t, input, modulation, delta_p)

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    P0: np.ndarray
    PM: np.ndarray
    total: np.ndarray
    emitted: np.ndarray
    final_state: np.ndarray

    def write_csv(self, path, header: str = "") -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "re_P0", "im_P0", "re_PM", "im_PM", "total", "emitted"])
            for k, t in enumerate(self.times):
                vals = (t, self.P0[k].real, self.P0[k].imag, self.PM[k].real, self.PM[k].imag,
                        self.total[k], self.emitted[k])
                w.writerow([f"{v:.12e}" for v in vals])


def memory_drive_vector(arr: ArrayRealization, beam: GaussianBeam) -> np.ndarray:
    """Spatial drive for a unit photon flux arriving symmetrically from both sides."""
    x, y, z = arr.positions.T
    gamma0 = collective_rate_2d(arr.lattice)
    amp = arr.lattice.a / 2.0 * np.sqrt(gamma0 / beam.mode_area)
    return amp * 2.0 * np.cos(K_P * z) * beam.envelope(x, y)


def collective_weights(arr: ArrayRealization, beam: GaussianBeam):
    """Weight vectors w0, wM with P0 = w0 . sigma and PM = wM . sigma, plus eta."""
    eta = mode_overlap_eta(beam, arr.side_length)
    x, y, _ = arr.positions.T
    w0 = arr.lattice.a / np.sqrt(eta) * beam.profile(x, y)
    return w0, w0 * arr.parity, eta


def _reflection_permutations(arr: ArrayRealization):
    """Index maps of the x -> -x and y -> -y reflections, or None if the array lacks them."""
    pos = arr.positions
    tree = cKDTree(pos)
    perms = []
    for axis in (0, 1):
        mirrored = pos.copy()
        mirrored[:, axis] *= -1
        dist, idx = tree.query(mirrored)
        if np.max(dist, initial=0.0) > 1e-9 or len(set(idx.tolist())) != len(idx):
            return None
        perms.append(idx)
    return perms


def _sector_basis(arr: ArrayRealization):
    """Real orthonormal basis blocks, one per reflection character (sx, sy)."""
    perms = _reflection_permutations(arr)
    n = arr.n_atoms
    if perms is None:
        return [np.eye(n)]
    px, py = perms
    pxy = px[py]
    blocks = []
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        cols = []
        seen = np.zeros(n, bool)
        for i in range(n):
            if seen[i]:
                continue
            seen[[i, px[i], py[i], pxy[i]]] = True
            v = np.zeros(n)
            for j, c in ((i, 1), (px[i], sx), (py[i], sy), (pxy[i], sx * sy)):
                v[j] += c
            nrm = np.linalg.norm(v)
            if nrm > 0.5:
                cols.append(v / nrm)
        if cols:
            blocks.append(np.array(cols).T)
    return blocks


@dataclass(frozen=True, eq=False)
class _Reduced:
    basis: np.ndarray
    kernel: np.ndarray
    pattern: sp.csr_matrix


def _reduce(arr: ArrayRealization, K: np.ndarray, pattern: np.ndarray, vectors, use_symmetry: bool) -> _Reduced:
    """Restrict the dynamics to the reflection sectors reachable from ``vectors``.

    Sectors coupled by the kernel or the pattern above round-off are added
    until the set is closed, so the restriction is exact for any input.
    """
    blocks = _sector_basis(arr) if use_symmetry else [np.eye(arr.n_atoms)]
    U = np.hstack(blocks)
    Kt = U.T @ K @ U
    Dt = U.T @ (pattern[:, None] * U)
    edges = np.cumsum([0] + [b.shape[1] for b in blocks])
    spans = [slice(edges[i], edges[i + 1]) for i in range(len(blocks))]
    scale = max(float(np.max(np.abs(K))), 1.0)
    active = set()
    for v in vectors:
        vt = U.T @ v
        ref = max(float(np.linalg.norm(vt)), 1e-300)
        active |= {i for i, s in enumerate(spans) if np.linalg.norm(vt[s]) > 1e-14 * ref}
    stack = list(active)
    while stack:
        i = stack.pop()
        for j, s in enumerate(spans):
            if j in active:
                continue
            c = max(np.max(np.abs(Kt[s, spans[i]])), np.max(np.abs(Dt[s, spans[i]])))
            if c > SYMMETRY_TOL * scale:
                active.add(j)
                stack.append(j)
    idx = np.concatenate([np.arange(edges[i], edges[i + 1]) for i in sorted(active)]) if active else np.arange(0)
    D = Dt[np.ix_(idx, idx)]
    D[np.abs(D) < 1e-14] = 0.0
    return _Reduced(U[:, idx], Kt[np.ix_(idx, idx)], sp.csr_matrix(D))


def _interp(values, sub):
    x = np.arange(sub) / sub
    v = np.asarray(values)
    return np.concatenate([(v[:-1, None] + (v[1:] - v[:-1])[:, None] * x).ravel(), v[-1:]])


def _midpoints(values, sub):
    x = (np.arange(sub) + 0.5) / sub
    v = np.asarray(values)
    return (v[:-1, None] + (v[1:] - v[:-1])[:, None] * x).ravel()


def _rk4(red: _Reduced, b, x0, sched: DriveSchedule, sub: int, w0, coupling: float):
    """Fixed-step RK4; returns states on the schedule grid and cumulative emitted energy."""
    K, D = red.kernel, red.pattern
    h_f, h_m = _interp(sched.input, sub), _midpoints(sched.input, sub)
    v_f, v_m = _interp(sched.modulation, sub), _midpoints(sched.modulation, sub)
    d_f, d_m = _interp(sched.delta_p, sub), _midpoints(sched.delta_p, sub)
    dt = sched.step / sub

    def f(x, h, v, d):
        return -(K @ x) + 1j * d * x + 1j * v * (D @ x) + 1j * h * b

    x = x0.astype(complex)
    n_f = len(h_f)
    out = np.empty(n_f, dtype=complex)
    states = [x.copy()]
    out[0] = h_f[0] + 1j * coupling * (w0 @ x)
    for k in range(n_f - 1):
        k1 = f(x, h_f[k], v_f[k], d_f[k])
        k2 = f(x + dt / 2 * k1, h_m[k], v_m[k], d_m[k])
        k3 = f(x + dt / 2 * k2, h_m[k], v_m[k], d_m[k])
        k4 = f(x + dt * k3, h_f[k + 1], v_f[k + 1], d_f[k + 1])
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = h_f[k + 1] + 1j * coupling * (w0 @ x)
        if (k + 1) % sub == 0:
            states.append(x.copy())
    flux = np.abs(out) ** 2
    cum = np.concatenate([[0.0], np.cumsum((flux[1:] + flux[:-1]) / 2 * dt)])
    return np.array(states), cum[::sub]


def _norm_bound(red: _Reduced, sched: DriveSchedule) -> float:
    kn = float(np.linalg.norm(red.kernel, 2)) if red.kernel.size else 0.0
    return kn + float(np.max(np.abs(sched.delta_p))) + float(np.max(np.abs(sched.modulation)))


def integrate(arr: ArrayRealization, beam: GaussianBeam, schedule: DriveSchedule, dt: Optional[float] = None,
              initial=None, drive=None, check: bool = True, use_symmetry: bool = True) -> Trajectory:
    """Integrate the driven dipoles over ``schedule``.

    ``drive`` defaults to :func:`memory_drive_vector`; ``initial`` to zero.
    With ``check`` the run is repeated at half the step and final observables
    must agree to 1e-4.
    """
    n = arr.n_atoms
    K = build_matrix(arr).base
    pattern = arr.parity if arr.indices is not None else np.ones(n)
    b = memory_drive_vector(arr, beam) if drive is None else np.asarray(drive, complex)
    x0 = np.zeros(n, complex) if initial is None else np.asarray(initial, complex)
    w0, wM, eta = collective_weights(arr, beam)
    coupling = np.sqrt(eta * collective_rate_2d(arr.lattice))
    vectors = [v for v in (b * np.any(schedule.input != 0), x0) if np.any(v != 0)]
    red = _reduce(arr, K, pattern, vectors, use_symmetry)
    U = red.basis
    limit = 0.02 / max(_norm_bound(red, schedule), 1e-12)
    if dt is None:
        sub = max(1, int(np.ceil(schedule.step / limit - 1e-9)))
    else:
        if dt > limit * (1 + 1e-9):
            raise DomainError(f"dt = {dt:.3g} exceeds 0.02/||M|| = {limit:.3g}")
        sub = int(round(schedule.step / dt))
        if sub < 1 or abs(sub * dt - schedule.step) > 1e-9 * schedule.step:
            raise DomainError("schedule step must be an integer multiple of dt")
    args = (red, U.T @ b, U.T @ x0, schedule)
    wr0, wrM = U.T @ w0, U.T @ wM
    states, emitted = _rk4(*args, sub, wr0, coupling)
    if check and U.shape[1]:
        fine, emitted_f = _rk4(*args, 2 * sub, wr0, coupling)
        obs = lambda s, e: np.array([abs(wrM @ s[-1]) ** 2, abs(wr0 @ s[-1]) ** 2, np.sum(abs(s[-1]) ** 2), e[-1]])
        a, c = obs(states, emitted), obs(fine, emitted_f)
        scale = max(float(np.max(np.sum(np.abs(states) ** 2, axis=1))), float(emitted[-1]), 1e-300)
        dev = float(np.max(np.abs(a - c))) / scale
        if dev > HALVING_TOL:
            raise InstabilityError(f"step halving changed final observables by {dev:.2e}")
    return Trajectory(
        times=schedule.grid.copy(),
        P0=states @ wr0,
        PM=states @ wrM,
        total=np.sum(np.abs(states) ** 2, axis=1),
        emitted=emitted,
        final_state=U @ states[-1],
    )


def fit_decay_rate(times, values) -> float:
    """Exponential decay rate from a least-squares line through log(values)."""
    t = np.asarray(times, float)
    y = np.log(np.asarray(values, float))
    return float(-np.polyfit(t, y, 1)[0])


def m_mode_shift(arr: ArrayRealization, beam: GaussianBeam) -> float:
    """Frequency of the beam-weighted checkerboard pattern, as a kernel expectation value."""
    K = build_matrix(arr).base
    _, m, _ = collective_weights(arr, beam)
    return float(np.imag(m @ K @ m / (m @ m)))


def mapping_params_subradiant(arr: ArrayRealization, beam: GaussianBeam) -> InterfaceParams:
    """Effective 1D parameters with the checkerboard mode playing the spin.

    The probe is taken on resonance with the bright mode, so the two-photon
    detuning is Delta_0 - Delta_M + i gamma_s / 2.
    """
    lat = arr.lattice
    if lat is None or arr.indices is None or arr.n_layers != 1:
        raise DomainError("mapping needs an ordered single-layer lattice")
    if lat.a >= M_POINT_LIMIT:
        raise DomainError(f"a = {lat.a} >= 1/sqrt(2): the checkerboard mode radiates")
    gamma0 = collective_rate_2d(lat)
    eta = mode_overlap_eta(beam, arr.side_length)
    gamma_s = float(np.mean(arr.noncollective_rates))
    delta0 = collective_shift_2d(lat).delta0
    delta_m = m_mode_shift(arr, beam)
    return InterfaceParams(
        gamma_target=eta * gamma0,
        gamma_loss=(1.0 - eta) * gamma0 + gamma_s,
        collective_shift=delta0,
        two_photon_detuning=delta0 - delta_m + 0.5j * gamma_s,
    )


def subradiant_control(arr: ArrayRealization, beam: GaussianBeam, h0: PulseShape) -> PulseShape:
    """Optimal storage control for the mapped model, in the frame co-rotating with the spin."""
    p = mapping_params_subradiant(arr, beam)
    rotating = InterfaceParams(p.gamma_target, p.gamma_loss, p.collective_shift, 1j * p.two_photon_detuning.imag)
    return optimal_storage_control(h0, rotating, p.collective_shift)


@dataclass(frozen=True, eq=False)
class SubradiantRun:
    storage_efficiency: float
    retrieval_efficiency: float
    trajectory: Trajectory
    storage_end: int
    retrieval_start: int
    output_overlap: float
    stored_total: float


def subradiant_memory_run(arr: ArrayRealization, beam: GaussianBeam, h0: PulseShape, V_pulse: PulseShape,
                          hold: float, dt: Optional[float] = None, check: bool = True) -> SubradiantRun:
    """Store, hold and retrieve with the checkerboard modulation as the control.

    The control envelope ``V_pulse`` acts through the real modulation
    V(t) = 2 Re(conj(Om(t)) exp(-i (Delta_M - delta_p) t)), which bridges the
    bright and checkerboard mode frequencies. Retrieval uses the conjugate
    time reverse of ``V_pulse``. The stored fraction is |PM(T)|^2 over the
    input energy and the retrieval efficiency is the target-mode energy
    emitted after the hold over |PM|^2 at its start.
    """
    p = mapping_params_subradiant(arr, beam)
    delta_p = p.collective_shift
    delta_m = delta_p - p.two_photon_detuning.real
    step = h0.step
    n_s = len(h0.grid)
    n_h = max(1, int(round(hold / step)))
    ret = time_reverse_control(V_pulse)
    t = step * np.arange(n_s + n_h + len(ret.grid) - 1)
    i_ret = n_s - 1 + n_h
    om = np.zeros(len(t), complex)
    om[:n_s] = V_pulse.values
    om[i_ret:] = ret.values
    h = np.zeros(len(t), complex)
    h[:n_s] = h0.values
    V = 2.0 * np.real(np.conj(om) * np.exp(-1j * (delta_m - delta_p) * t))
    traj = integrate(arr, beam, DriveSchedule(t, h, V, delta_p), dt=dt, check=check)
    i_s = n_s - 1
    e_s = abs(traj.PM[i_s]) ** 2 / h0.energy()
    stored = abs(traj.PM[i_ret]) ** 2
    e_r = (traj.emitted[-1] - traj.emitted[i_ret]) / stored
    out = 1j * np.sqrt(p.gamma_target) * traj.P0[i_ret:]
    target = np.conj(h0.values[::-1])
    overlap = abs(np.vdot(target, out)) / (np.linalg.norm(out) * np.linalg.norm(target))
    return SubradiantRun(float(e_s), float(e_r), traj, i_s, i_ret, float(overlap), float(traj.total[i_s]))


def default_storage_pulse(arr: ArrayRealization, rate_fraction: float = 0.1, step: Optional[float] = None) -> PulseShape:
    """Rising exponential with spin rate ``rate_fraction * Gamma_0`` and duration 20 / rate."""
    gamma0 = collective_rate_2d(arr.lattice)
    rate = rate_fraction * gamma0
    return exponential_pulse(rate, step=0.05 / gamma0 if step is None else step)
