"""Functional Schroedinger picture for a real scalar field on a mode lattice.

The field lives on a periodic box of length L (d = 1) and is truncated to M
real mode coordinates q_j with orthonormal profiles f_j(x):

    n = 0         f(x) = 1/sqrt(L)                       k = 0
    n > 0         f(x) = sqrt(2/L) cos(2 pi n x / L)     |k| = 2 pi n / L
    n < 0         f(x) = sqrt(2/L) sin(2 pi |n| x / L)

so phi(x) = sum_j q_j f_j(x) and omega_j = sqrt(k_j^2 + m^2).  The functional
basis over configurations q is the product of scaled Hermite functions

    B_occ(q) = prod_j h_{n_j}(sqrt(omega_j) q_j) omega_j^{1/4}

with per-mode occupation cutoff n_max.  Hamiltonian:

    H = sum_j omega_j (N_j + 1/2) + (lam/4) integral phi^4 dx

with the quartic assembled from exact per-mode ladder matrix elements
(computed with cutoff headroom, then restricted - no quadrature, no
above-cutoff truncation error in the matrix elements themselves).  The
vacuum energy E_0 = sum_j omega_j / 2 is kept; nothing is normal-ordered.

Guidance is first order, dq_j/dt = d S / d q_j with Psi = |Psi| e^{iS}; the
second-order form (q''_j = -omega_j^2 q_j + J_j - dQ/dq_j with
Q = -(1/2|Psi|) sum_j d^2|Psi|/dq_j^2 and J_j = -lam d/dq_j of the quartic)
is checked as a residual, not integrated.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from .relkin import NodeError, TWO_PI

__all__ = [
    "LatticeSpec",
    "FunctionalState",
    "occupations",
    "index_of",
    "basis_value",
    "mode_profiles",
    "field_on_grid",
    "modes_from_grid",
    "hamiltonian",
    "eigensystem",
    "evolve",
    "state_at",
    "sector_weights",
    "effectivity",
    "field_velocity",
    "integrate_field",
    "second_order_check",
    "vacuum_phase",
]

NODE_RTOL = 1e-12


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry + truncation of the mode lattice.

    wavenumbers are signed integers (sign selects cos/sin, 0 the constant
    mode); by default the first M of (0, 1, -1, 2, -2, ...).
    """

    L: float
    M: int
    m: float
    lam: float = 0.0
    n_max: int = 5
    wavenumbers: tuple = None
    basis_budget: int = 4096
    d: int = 1

    def __post_init__(self):
        if self.d != 1:
            raise ValueError("the mode lattice is implemented for d = 1")
        if self.L <= 0 or self.m <= 0 or self.lam < 0 or self.n_max < 1:
            raise ValueError("need L > 0, m > 0, lam >= 0, n_max >= 1")
        if self.wavenumbers is None:
            default = [0]
            step = 1
            while len(default) < self.M:
                default += [step, -step]
                step += 1
            object.__setattr__(self, "wavenumbers", tuple(default[: self.M]))
        else:
            object.__setattr__(self, "wavenumbers", tuple(int(n) for n in self.wavenumbers))
        if len(self.wavenumbers) != self.M:
            raise ValueError("need exactly M wavenumbers")
        if len(set(self.wavenumbers)) != self.M:
            raise ValueError("wavenumbers must be distinct")
        if (self.n_max + 1) ** self.M > self.basis_budget:
            raise ValueError(
                f"basis size {(self.n_max + 1) ** self.M} exceeds budget {self.basis_budget}"
            )

    @property
    def ks(self):
        return TWO_PI * np.abs(np.array(self.wavenumbers, dtype=float)) / self.L

    @property
    def omegas(self):
        return np.sqrt(self.ks**2 + self.m**2)

    @property
    def E0(self):
        """Vacuum energy, kept unsubtracted."""
        return float(np.sum(self.omegas) / 2.0)

    @property
    def basis_size(self):
        return (self.n_max + 1) ** self.M

    @property
    def node_scale(self):
        """Vacuum peak density prod_j sqrt(omega_j/pi); sets node threshold."""
        return float(np.prod(np.sqrt(self.omegas / math.pi)))


@lru_cache(maxsize=None)
def occupations(spec: LatticeSpec) -> np.ndarray:
    """All occupation tuples, shape (B, M), last mode varying fastest."""
    occ = np.array(
        list(itertools.product(range(spec.n_max + 1), repeat=spec.M)), dtype=int
    )
    occ.flags.writeable = False
    return occ


def index_of(spec: LatticeSpec, occ) -> int:
    occ = tuple(int(n) for n in occ)
    if len(occ) != spec.M or any(n < 0 or n > spec.n_max for n in occ):
        raise ValueError(f"occupation {occ} outside truncation")
    idx = 0
    for n in occ:
        idx = idx * (spec.n_max + 1) + n
    return idx


@dataclass(frozen=True)
class FunctionalState:
    """Normalized coefficient vector over the occupation basis at time t."""

    spec: LatticeSpec
    t: float
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=complex)
        if c.shape != (self.spec.basis_size,):
            raise ValueError(f"coefficients must have shape ({self.spec.basis_size},)")
        norm = np.sum(np.abs(c) ** 2)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"state norm {norm} deviates from 1 beyond 1e-10")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "c", c)

    @classmethod
    def from_occupations(cls, spec, weights, t=0.0):
        """State from {occupation tuple: complex amplitude}, normalized."""
        c = np.zeros(spec.basis_size, dtype=complex)
        for occ, a in weights.items():
            c[index_of(spec, occ)] = a
        c /= math.sqrt(np.sum(np.abs(c) ** 2))
        return cls(spec, t, c)


# ---------------------------------------------------------------------------
# mode profiles and grid transport


def mode_profiles(spec: LatticeSpec, xs) -> np.ndarray:
    """Orthonormal profiles f_j(x), shape (M, len(xs))."""
    xs = np.asarray(xs, dtype=float)
    out = np.empty((spec.M, xs.size))
    for j, n in enumerate(spec.wavenumbers):
        if n == 0:
            out[j] = 1.0 / math.sqrt(spec.L)
        elif n > 0:
            out[j] = math.sqrt(2.0 / spec.L) * np.cos(TWO_PI * n * xs / spec.L)
        else:
            out[j] = math.sqrt(2.0 / spec.L) * np.sin(TWO_PI * (-n) * xs / spec.L)
    return out


def mode_profile_derivs(spec: LatticeSpec, xs) -> np.ndarray:
    """d f_j / dx on the same layout as mode_profiles."""
    xs = np.asarray(xs, dtype=float)
    out = np.empty((spec.M, xs.size))
    for j, n in enumerate(spec.wavenumbers):
        k = TWO_PI * abs(n) / spec.L
        if n == 0:
            out[j] = 0.0
        elif n > 0:
            out[j] = -math.sqrt(2.0 / spec.L) * k * np.sin(k * xs)
        else:
            out[j] = math.sqrt(2.0 / spec.L) * k * np.cos(k * xs)
    return out


def uniform_cell_grid(spec: LatticeSpec, n_points: int) -> np.ndarray:
    return np.arange(n_points) * (spec.L / n_points)


def field_on_grid(spec: LatticeSpec, q, xs) -> np.ndarray:
    return np.asarray(q, dtype=float) @ mode_profiles(spec, xs)


def modes_from_grid(spec: LatticeSpec, phi_vals, n_points: int) -> np.ndarray:
    """Inverse of field_on_grid on a uniform cell grid (exact below Nyquist)."""
    n_abs = max((abs(n) for n in spec.wavenumbers), default=0)
    if n_points <= 2 * n_abs:
        raise ValueError("grid too coarse to invert the mode expansion")
    xs = uniform_cell_grid(spec, n_points)
    F = mode_profiles(spec, xs)
    return (F @ np.asarray(phi_vals, dtype=float)) * (spec.L / n_points)


# ---------------------------------------------------------------------------
# Hermite machinery


def _hermite_table(n_top: int, u: np.ndarray) -> np.ndarray:
    """Normalized Hermite functions h_0..h_{n_top} at u, shape (n_top+1, ...)."""
    u = np.asarray(u, dtype=float)
    out = np.empty((n_top + 1,) + u.shape)
    out[0] = math.pi**-0.25 * np.exp(-0.5 * u * u)
    if n_top >= 1:
        out[1] = math.sqrt(2.0) * u * out[0]
    for n in range(1, n_top):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * u * out[n] - math.sqrt(
            n / (n + 1)
        ) * out[n - 1]
    return out


def basis_value(spec: LatticeSpec, occ, q) -> float:
    """B_occ(q) = prod_j h_{n_j}(sqrt(omega_j) q_j) omega_j^{1/4}."""
    occ = tuple(int(n) for n in occ)
    q = np.asarray(q, dtype=float)
    val = 1.0
    for j, (n, w) in enumerate(zip(occ, spec.omegas)):
        if n < 0 or n > spec.n_max:
            raise ValueError("occupation outside truncation")
        u = math.sqrt(w) * q[j]
        val *= _hermite_table(n, np.array(u))[n].item() * w**0.25
    return val


def _psi_tables(state: FunctionalState, Q: np.ndarray, order: int):
    """Per-config value/derivative tables of Psi.

    Q has shape (S, M).  Returns (psi, grad, hess_diag) with shapes (S,),
    (S, M), (S, M); entries beyond the requested order are None.
    """
    spec = state.spec
    occ = occupations(spec)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    S = Q.shape[0]
    sq = np.sqrt(spec.omegas)
    norm = float(np.prod(spec.omegas**0.25))
    n_top = spec.n_max + 2
    H = [_hermite_table(n_top, sq[j] * Q[:, j]) for j in range(spec.M)]
    fac = np.stack([H[j][occ[:, j]] for j in range(spec.M)])  # (M, B, S)
    vals = fac.prod(axis=0) * norm  # (B, S)
    psi = state.c @ vals
    grad = hess = None
    if order >= 1:
        ns = occ.astype(float)
        grad = np.empty((S, spec.M), dtype=complex)
        hess = np.empty((S, spec.M), dtype=complex) if order >= 2 else None
        for j in range(spec.M):
            others = norm * np.ones_like(fac[0])
            for i in range(spec.M):
                if i != j:
                    others = others * fac[i]
            n = occ[:, j]
            # h' = (sqrt(n) h_{n-1} - sqrt(n+1) h_{n+1}) / sqrt(2), chain rule sqrt(w)
            lower = np.where((n > 0)[:, None], np.sqrt(ns[:, j])[:, None] * H[j][n - 1], 0.0)
            upper = np.sqrt(ns[:, j] + 1.0)[:, None] * H[j][n + 1]
            hp = (lower - upper) / math.sqrt(2.0) * sq[j]
            grad[:, j] = state.c @ (others * hp)
            if order >= 2:
                # h'' = [sqrt(n(n-1)) h_{n-2} + sqrt((n+1)(n+2)) h_{n+2} - (2n+1) h_n] / 2
                lo2 = np.where(
                    (n > 1)[:, None],
                    np.sqrt(ns[:, j] * (ns[:, j] - 1.0))[:, None] * H[j][np.maximum(n - 2, 0)],
                    0.0,
                )
                hi2 = np.sqrt((ns[:, j] + 1.0) * (ns[:, j] + 2.0))[:, None] * H[j][n + 2]
                mid = (2.0 * ns[:, j] + 1.0)[:, None] * H[j][n]
                hpp = (lo2 + hi2 - mid) / 2.0 * spec.omegas[j]
                hess[:, j] = state.c @ (others * hpp)
    return psi, grad, hess


def functional_value(state: FunctionalState, q) -> complex:
    psi, _, _ = _psi_tables(state, np.atleast_2d(q), order=0)
    return complex(psi[0])


# ---------------------------------------------------------------------------
# Hamiltonian and evolution


@lru_cache(maxsize=None)
def quartic_tensor(spec: LatticeSpec) -> np.ndarray:
    """C[j,k,l,mn] = integral f_j f_k f_l f_mn dx, exact (trig quadrature)."""
    n_abs = max(abs(n) for n in spec.wavenumbers)
    n_grid = 8 * max(n_abs, 1) + 1
    xs = uniform_cell_grid(spec, n_grid)
    F = mode_profiles(spec, xs)
    h = spec.L / n_grid
    return np.einsum("ax,bx,cx,dx->abcd", F, F, F, F) * h


@lru_cache(maxsize=None)
def _mode_position_powers(spec: LatticeSpec, headroom: int = 4):
    """Exact truncated matrices of q_j^p, p = 0..headroom, per mode.

    Built in an enlarged per-mode space and then restricted, so each entry is
    the exact full-space matrix element (no above-cutoff truncation error).
    """
    dim = spec.n_max + 1
    out = []
    for w in spec.omegas:
        big = dim + headroom
        a = np.diag(np.sqrt(np.arange(1, big)), k=1)
        qop = (a + a.T) / math.sqrt(2.0 * w)
        powers = [np.eye(big)]
        for _ in range(headroom):
            nxt = powers[-1] @ qop
            powers.append((nxt + nxt.T) / 2.0)  # exact object is symmetric
        out.append([p[:dim, :dim].copy() for p in powers])
    return out


@lru_cache(maxsize=None)
def hamiltonian(spec: LatticeSpec) -> np.ndarray:
    """H over the occupation basis: free diagonal + exact quartic block."""
    occ = occupations(spec)
    H = np.diag((occ + 0.5) @ spec.omegas).astype(float)
    if spec.lam > 0:
        C = quartic_tensor(spec)
        powers = _mode_position_powers(spec)
        coeffs = {}
        for combo in itertools.product(range(spec.M), repeat=4):
            key = tuple(combo.count(j) for j in range(spec.M))
            coeffs[key] = coeffs.get(key, 0.0) + C[combo]
        for key, coef in coeffs.items():
            if abs(coef) < 1e-15:
                continue
            op = np.array([[1.0]])
            for j, p in enumerate(key):
                op = np.kron(op, powers[j][p])
            H += (spec.lam / 4.0) * coef * op
    H.flags.writeable = False
    return H


@lru_cache(maxsize=None)
def eigensystem(spec: LatticeSpec):
    w, V = np.linalg.eigh(hamiltonian(spec))
    w.flags.writeable = False
    V.flags.writeable = False
    return w, V


def _coeffs_at(state: FunctionalState, t: float) -> np.ndarray:
    w, V = eigensystem(state.spec)
    return V @ (np.exp(-1j * w * (t - state.t)) * (V.T @ state.c))


def evolve(state: FunctionalState, dt: float) -> FunctionalState:
    """Exact truncated evolution by dt via the cached eigendecomposition."""
    c = _coeffs_at(state, state.t + dt)
    norm = np.sum(np.abs(c) ** 2)
    if abs(norm - 1.0) > 1e-10:
        raise RuntimeError(f"evolution drifted norm to {norm}")
    return FunctionalState(state.spec, state.t + dt, c)


def state_at(state: FunctionalState, t: float) -> FunctionalState:
    return evolve(state, t - state.t)


def sector_weights(state: FunctionalState) -> np.ndarray:
    """Total-occupation sector weights sum |c|^2, index = n."""
    totals = occupations(state.spec).sum(axis=1)
    out = np.zeros(state.spec.M * state.spec.n_max + 1)
    np.add.at(out, totals, np.abs(state.c) ** 2)
    return out


# ---------------------------------------------------------------------------
# effectivity and guidance


@dataclass(frozen=True)
class EffectivityVector:
    """e_n over total-occupation sectors; entries in [0,1], sum 1."""

    n_values: np.ndarray
    e: np.ndarray

    def top(self):
        i = int(np.argmax(self.e))
        return int(self.n_values[i]), float(self.e[i])


def effectivity(state: FunctionalState, q) -> EffectivityVector:
    """e_n(q) = |Psi_n(q)|^2 / sum_n' |Psi_n'(q)|^2 at configuration q."""
    spec = state.spec
    vals = _sector_amplitudes(state, np.atleast_2d(q))
    dens = np.abs(vals) ** 2
    total = dens.sum()
    if total < NODE_RTOL * spec.node_scale:
        raise NodeError("all sector amplitudes vanish at this configuration")
    return EffectivityVector(
        n_values=np.arange(spec.M * spec.n_max + 1), e=dens[:, 0] / total
    )


def _sector_amplitudes(state: FunctionalState, Q) -> np.ndarray:
    """tilde-Psi_n(q) for each total n; shape (n_sectors, S)."""
    spec = state.spec
    occ = occupations(spec)
    totals = occ.sum(axis=1)
    Q = np.atleast_2d(Q)
    S = Q.shape[0]
    sq = np.sqrt(spec.omegas)
    norm = float(np.prod(spec.omegas**0.25))
    H = [_hermite_table(spec.n_max, sq[j] * Q[:, j]) for j in range(spec.M)]
    fac = np.stack([H[j][occ[:, j]] for j in range(spec.M)])
    vals = fac.prod(axis=0) * norm  # (B, S)
    weighted = state.c[:, None] * vals
    out = np.zeros((spec.M * spec.n_max + 1, S), dtype=complex)
    np.add.at(out, totals, weighted)
    return out


def field_velocity(state: FunctionalState, q, t: float | None = None) -> np.ndarray:
    """First-order guidance dq_j/dt = Im(d_j Psi / Psi) at configuration q."""
    work = state if t is None or t == state.t else state_at(state, t)
    psi, grad, _ = _psi_tables(work, np.atleast_2d(q), order=1)
    rho = np.abs(psi[0]) ** 2
    if rho < NODE_RTOL * state.spec.node_scale:
        raise NodeError(f"|Psi|^2 = {rho:.3g} below node threshold")
    return np.imag(grad[0] / psi[0])


@dataclass
class FieldTrajectory:
    state: FunctionalState
    ts: np.ndarray
    qs: np.ndarray
    sol: object

    def q_at(self, t):
        return np.asarray(self.sol(t))


def integrate_field(state: FunctionalState, q0, t_span, rtol=1e-9, atol=1e-12,
                    max_step=math.inf) -> FieldTrajectory:
    """Integrate dq/dt = grad S with the exactly-evolved state behind it."""
    w, V = eigensystem(state.spec)
    base = V.T @ state.c

    def rhs(t, q):
        c = V @ (np.exp(-1j * w * (t - state.t)) * base)
        work = FunctionalState(state.spec, t, c)
        return field_velocity(work, q)

    res = solve_ivp(rhs, t_span, np.asarray(q0, dtype=float), method="RK45",
                    dense_output=True, rtol=rtol, atol=atol, max_step=max_step)
    if not res.success:
        raise RuntimeError(f"field integration failed: {res.message}")
    return FieldTrajectory(state=state, ts=res.t, qs=res.y.T, sol=res.sol)


def quantum_potential_field(state: FunctionalState, q, t: float | None = None) -> float:
    """Q(q, t) = -(1/2|Psi|) sum_j d^2 |Psi| / dq_j^2 (closed-form derivs)."""
    work = state if t is None or t == state.t else state_at(state, t)
    psi, grad, hess = _psi_tables(work, np.atleast_2d(q), order=2)
    p, g, h = psi[0], grad[0], hess[0]
    rho = abs(p) ** 2
    if rho < NODE_RTOL * state.spec.node_scale:
        raise NodeError("node: quantum potential undefined")
    R = math.sqrt(rho)
    dR = np.real(np.conj(p) * g) / R
    ddR = (np.abs(g) ** 2 + np.real(np.conj(p) * h)) / R - dR**2 / R
    return float(-np.sum(ddR) / (2.0 * R))


def second_order_check(ftraj: FieldTrajectory, fd_step: float, n_centers: int = 24) -> float:
    """max_j |q''_j + omega_j^2 q_j - J_j(q) + dQ/dq_j| along the trajectory.

    q'' is a central difference of the exact velocity field along the dense
    path; dQ/dq is a central difference of the closed-form Q.  Reported
    residual carries the fd_step used.
    """
    state = ftraj.state
    spec = state.spec
    h = fd_step
    lo, hi = ftraj.ts[0] + 2 * h, ftraj.ts[-1] - 2 * h
    C = quartic_tensor(spec) if spec.lam > 0 else None
    worst = 0.0
    for tc in np.linspace(lo, hi, n_centers):
        qc = ftraj.q_at(tc)
        v_plus = field_velocity(state, ftraj.q_at(tc + h), t=tc + h)
        v_minus = field_velocity(state, ftraj.q_at(tc - h), t=tc - h)
        accel = (v_plus - v_minus) / (2 * h)
        gradQ = np.empty(spec.M)
        for j in range(spec.M):
            e = np.zeros(spec.M)
            e[j] = h
            gradQ[j] = (
                quantum_potential_field(state, qc + e, t=tc)
                - quantum_potential_field(state, qc - e, t=tc)
            ) / (2 * h)
        if C is not None:
            J = -spec.lam * np.einsum("jklm,k,l,m->j", C, qc, qc, qc)
        else:
            J = np.zeros(spec.M)
        residual = accel + spec.omegas**2 * qc - J + gradQ
        worst = max(worst, float(np.max(np.abs(residual))))
    return worst


def vacuum_phase(spec: LatticeSpec, t: float):
    """(r_0, phi_0) with r_0 e^{i phi_0} = <vac| U(t) |vac>, branch-tracked.

    phi_0 is unwrapped from t = 0 with steps below pi/2 (the phase rate is
    bounded by the largest eigenvalue).  Free field: r_0 = 1, phi_0 = -E_0 t.
    """
    w, V = eigensystem(spec)
    weights = V[0, :] ** 2
    w_max = float(np.max(np.abs(w)))
    n_steps = max(1, int(math.ceil(abs(t) * w_max / (math.pi / 4))))
    phi = 0.0
    prev = 1.0 + 0.0j
    for s in range(1, n_steps + 1):
        ts = t * s / n_steps
        amp = np.sum(weights * np.exp(-1j * w * ts))
        step = np.angle(amp / prev)
        phi += step
        prev = amp
    return float(abs(prev)), float(phi)
