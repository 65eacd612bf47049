"""n-particle wave functions and particle-level guidance from functional states.

The unnormalized n-particle amplitude is the vacuum-projected matrix element

    psi_n(x_1 t_1, ..., x_n t_n) =
        e^{-i phi_0(t_1)} <vac| Phi(x_1) U(t_1 - t_2) Phi(x_2) ...
                                Phi(x_n) P_n U(t_n - t0) |state>

averaged over permutations of the (x_j, t_j) pairs (bosonic symmetrization),
where Phi(x) = sum_j f_j(x) q_hat_j as a matrix over the occupation basis,
U is the exact truncated propagator, phi_0 the branch-tracked vacuum phase
and P_n the projector onto total occupation n.  The projector makes the
vacuum-sector orthogonality exact: without it, products of field operators
pick up contractions from same-parity sectors below n.  Every Phi step moves
the total occupation by exactly 1, so the descent from the n-quanta sector to
the vacuum involves no above-cutoff intermediates and the ladder route is
exact at lam = 0.

A Gauss-Hermite functional quadrature over mode space is kept as a second,
independent route for equal times; the two must agree to near machine
precision on states inside the truncation.

psi_n is left unnormalized; velocities use only ratios, so rescaling any
sector's coefficients (and renormalizing the state) cancels out.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import qftfun as qf
from .qftfun import FunctionalState, LatticeSpec
from .traject import InfiniteVelocityError

__all__ = [
    "NParticleWF",
    "ParticleSet",
    "MassDensityField",
    "field_matrix",
    "field_deriv_matrix",
    "n_particle_wf",
    "n_particle_wf_evaluator",
    "gh_n_particle_wf",
    "orthogonality_check",
    "particle_velocity",
    "particle_velocities",
    "rescale_sector",
    "mass_density",
]


# ---------------------------------------------------------------------------
# field operator matrices over the occupation basis


@lru_cache(maxsize=None)
def _mode_q_matrices(spec: LatticeSpec):
    """Exact q_hat_j over the full occupation basis, one (B, B) per mode."""
    powers = qf._mode_position_powers(spec)
    dim = spec.n_max + 1
    out = []
    for j in range(spec.M):
        op = np.array([[1.0]])
        for i in range(spec.M):
            op = np.kron(op, powers[i][1] if i == j else np.eye(dim))
        out.append(op)
    return out


def field_matrix(spec: LatticeSpec, x: float) -> np.ndarray:
    """Phi(x) = sum_j f_j(x) q_hat_j."""
    f = qf.mode_profiles(spec, [x])[:, 0]
    qs = _mode_q_matrices(spec)
    return sum(f[j] * qs[j] for j in range(spec.M))


def field_deriv_matrix(spec: LatticeSpec, x: float, order: int = 1) -> np.ndarray:
    """d^order Phi / dx^order as a matrix (order 1 or 2, trig profiles)."""
    if order == 1:
        f = qf.mode_profile_derivs(spec, [x])[:, 0]
    elif order == 2:
        # trig profiles: f'' = -k^2 f
        f = -spec.ks**2 * qf.mode_profiles(spec, [x])[:, 0]
    else:
        raise ValueError("order must be 1 or 2")
    qs = _mode_q_matrices(spec)
    return sum(f[j] * qs[j] for j in range(spec.M))


@lru_cache(maxsize=None)
def _sector_masks(spec: LatticeSpec) -> np.ndarray:
    totals = qf.occupations(spec).sum(axis=1)
    return totals


def _project_sector(spec: LatticeSpec, c: np.ndarray, n: int) -> np.ndarray:
    out = np.where(_sector_masks(spec) == n, c, 0.0)
    return out


# ---------------------------------------------------------------------------
# ladder-matrix extraction


def _propagate(spec: LatticeSpec, c: np.ndarray, dt: float) -> np.ndarray:
    if dt == 0.0:
        return c
    w, V = qf.eigensystem(spec)
    return V @ (np.exp(-1j * w * dt) * (V.T @ c))


def _amplitude(state: FunctionalState, pairs, deriv_slot=None, deriv_order=1) -> complex:
    """<vac| Phi(x_1) U(t_1-t_2) ... Phi(x_n) P_n U(t_n - t0) |state>.

    pairs = [(x_1, t_1), ..., (x_n, t_n)] in operator order (leftmost first).
    deriv_slot (an index into pairs) swaps that Phi for its x-derivative.
    """
    spec = state.spec
    n = len(pairs)
    c = _propagate(spec, state.c, pairs[-1][1] - state.t)
    c = _project_sector(spec, c, n)
    for slot in range(n - 1, -1, -1):
        x, t = pairs[slot]
        if slot == deriv_slot:
            op = field_deriv_matrix(spec, x, deriv_order)
        else:
            op = field_matrix(spec, x)
        c = op @ c
        if slot > 0:
            c = _propagate(spec, c, pairs[slot - 1][1] - t)
    r0, phi0 = qf.vacuum_phase(spec, pairs[0][1])
    return complex(np.exp(-1j * phi0) * c[0])


def _normalize_times(n, times, default):
    if times is None:
        times = default
    ts = np.asarray(times, dtype=float)
    if ts.ndim == 0:
        ts = np.full(n, float(ts))
    if ts.shape != (n,):
        raise ValueError("need one time per particle (or a scalar)")
    return ts


def n_particle_wf(state: FunctionalState, n: int, positions, times=None,
                  deriv_index=None, deriv_order=1) -> complex:
    """Symmetrized unnormalized n-particle amplitude.

    positions: n spatial points; times: scalar (equal times) or n entries,
    default state.t.  deriv_index selects an x_j to differentiate
    analytically (used by the guidance law).
    """
    spec = state.spec
    if not 1 <= n <= spec.M * spec.n_max:
        raise ValueError(f"n = {n} outside the truncated tower")
    xs = np.asarray(positions, dtype=float)
    if xs.shape != (n,):
        raise ValueError(f"need exactly {n} positions")
    ts = _normalize_times(n, times, state.t)
    equal = np.all(ts == ts[0])
    if equal and deriv_index is None:
        # Phi's at one time commute: a single ordering is already symmetric
        return _amplitude(state, list(zip(xs, ts)))
    total = 0.0 + 0.0j
    perms = list(itertools.permutations(range(n)))
    for perm in perms:
        pairs = [(xs[i], ts[i]) for i in perm]
        slot = perm.index(deriv_index) if deriv_index is not None else None
        total += _amplitude(state, pairs, deriv_slot=slot, deriv_order=deriv_order)
    return total / len(perms)


@dataclass(frozen=True)
class NParticleWF:
    """Callable wrapper: (positions, times) -> complex, bosonic-symmetric."""

    state: FunctionalState
    n: int
    symmetrized: bool = True

    def __call__(self, positions, times=None) -> complex:
        return n_particle_wf(self.state, self.n, positions, times)


def n_particle_wf_evaluator(state: FunctionalState, n: int) -> NParticleWF:
    if not 1 <= n <= state.spec.M * state.spec.n_max:
        raise ValueError(f"n = {n} outside the truncated tower")
    return NParticleWF(state=state, n=n)


# ---------------------------------------------------------------------------
# Gauss-Hermite quadrature route (independent cross-check)


def _hermite_poly_table(n_top: int, u: np.ndarray) -> np.ndarray:
    """Hermite functions with the Gaussian stripped: p_n = h_n e^{u^2/2}."""
    u = np.asarray(u, dtype=float)
    out = np.empty((n_top + 1,) + u.shape)
    out[0] = math.pi**-0.25 * np.ones_like(u)
    if n_top >= 1:
        out[1] = math.sqrt(2.0) * u * out[0]
    for n in range(1, n_top):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * u * out[n] - math.sqrt(
            n / (n + 1)
        ) * out[n - 1]
    return out


def _gh_nodes(spec: LatticeSpec, order: int):
    """Tensor Gauss-Hermite nodes over mode space; returns (Q, W, U).

    Q: configurations (S, M); W: weights (S,) including the 1/sqrt(omega)
    Jacobian; the Gaussian factor is left inside the (polynomialized)
    integrand tables.
    """
    u1, w1 = np.polynomial.hermite.hermgauss(order)
    grids = np.meshgrid(*([u1] * spec.M), indexing="ij")
    U = np.stack([g.ravel() for g in grids], axis=1)  # (S, M)
    wg = np.meshgrid(*([w1] * spec.M), indexing="ij")
    W = np.prod(np.stack([g.ravel() for g in wg], axis=1), axis=1)
    W = W / np.prod(np.sqrt(spec.omegas))
    Q = U / np.sqrt(spec.omegas)[None, :]
    return Q, W, U


def _poly_basis_values(spec: LatticeSpec, coeffs: np.ndarray, U: np.ndarray) -> np.ndarray:
    """sum_idx c_idx B_idx(q) with the Gaussian e^{-|u|^2/2} stripped."""
    occ = qf.occupations(spec)
    norm = float(np.prod(spec.omegas**0.25))
    tabs = [_hermite_poly_table(spec.n_max, U[:, j]) for j in range(spec.M)]
    fac = np.stack([tabs[j][occ[:, j]] for j in range(spec.M)])
    vals = fac.prod(axis=0) * norm  # (B, S)
    return coeffs @ vals


def gh_n_particle_wf(state: FunctionalState, n: int, positions, t=None,
                     order=None) -> complex:
    """Equal-time psi_n by tensor Gauss-Hermite functional quadrature.

    Exact for polynomial integrands of per-mode degree <= 2*order - 1; the
    default order n_max + n + 1 covers the truncated state times n field
    insertions with margin.
    """
    spec = state.spec
    if not 1 <= n <= spec.M * spec.n_max:
        raise ValueError(f"n = {n} outside the truncated tower")
    xs = np.asarray(positions, dtype=float)
    if xs.shape != (n,):
        raise ValueError(f"need exactly {n} positions")
    if t is None:
        t = state.t
    if order is None:
        order = spec.n_max + n + 1
    if order < spec.n_max + n + 1:
        raise ValueError("quadrature order too low for exactness")
    c = _propagate(spec, state.c, t - state.t)
    c = _project_sector(spec, c, n)
    Q, W, U = _gh_nodes(spec, order)
    # vacuum functional (Gaussian stripped) = prod omega^{1/4} pi^{-1/4}
    vac = float(np.prod(spec.omegas**0.25)) * math.pi ** (-0.25 * spec.M)
    psi_vals = _poly_basis_values(spec, c, U)  # Psi-tilde_n, Gaussian stripped
    F = qf.mode_profiles(spec, xs)  # (M, n)
    phi_vals = Q @ F  # (S, n)
    integrand = vac * psi_vals * np.prod(phi_vals, axis=1)
    r0, phi0 = qf.vacuum_phase(spec, t)
    return complex(np.exp(-1j * phi0) * np.sum(W * integrand))


def orthogonality_check(spec: LatticeSpec, n_prime: int, n: int,
                        n_samples: int = 8, seed: int = 0, order=None) -> float:
    """max |integral Psi_0 phi(x_1)...phi(x_n') B_occ| over random draws.

    B_occ runs over random total-occupation-n basis functionals, positions
    over uniform draws in the box.  Vanishes for n' != n; the quadrature is
    exact, so violations are pure roundoff.
    """
    if order is None:
        order = spec.n_max + n_prime + 1
    if order < spec.n_max + n_prime + 1:
        raise ValueError("quadrature order too low for exactness")
    rng = np.random.default_rng(seed)
    occ_all = qf.occupations(spec)
    pool = np.flatnonzero(occ_all.sum(axis=1) == n)
    if pool.size == 0:
        raise ValueError(f"no basis states with total occupation {n}")
    Q, W, U = _gh_nodes(spec, order)
    vac = float(np.prod(spec.omegas**0.25)) * math.pi ** (-0.25 * spec.M)
    worst = 0.0
    for _ in range(n_samples):
        idx = int(rng.choice(pool))
        c = np.zeros(spec.basis_size)
        c[idx] = 1.0
        psi_vals = _poly_basis_values(spec, c, U)
        xs = rng.uniform(0.0, spec.L, size=n_prime)
        if n_prime > 0:
            F = qf.mode_profiles(spec, xs)
            field_prod = np.prod(Q @ F, axis=1)
        else:
            field_prod = np.ones(len(Q))
        val = np.sum(W * vac * psi_vals * field_prod)
        worst = max(worst, abs(float(val)))
    return worst


# ---------------------------------------------------------------------------
# particle-level guidance


def particle_velocity(state: FunctionalState, n: int, j: int, positions,
                      t=None, fd_step=None) -> float:
    """dx_j/dt for particle j of the n-particle level at equal times t.

    Ratio of the symmetrized amplitude's spatial phase flow to its temporal
    one; the spatial derivative is analytic (ladder matrices), the time
    derivative a central difference on the j-th time argument.
    """
    spec = state.spec
    if not 0 <= j < n:
        raise ValueError("particle index out of range")
    if t is None:
        t = state.t
    if fd_step is None:
        fd_step = 1e-4 / float(np.max(spec.omegas))
    psi = n_particle_wf(state, n, positions, t)
    dpsi_x = n_particle_wf(state, n, positions, t, deriv_index=j)
    ts = np.full(n, float(t))
    tp, tm = ts.copy(), ts.copy()
    tp[j] += fd_step
    tm[j] -= fd_step
    dpsi_t = (n_particle_wf(state, n, positions, tp)
              - n_particle_wf(state, n, positions, tm)) / (2 * fd_step)
    num = float(np.imag(np.conj(psi) * dpsi_x))
    den = -float(np.imag(np.conj(psi) * dpsi_t))
    scale = abs(psi) ** 2 * float(np.max(spec.omegas))
    if abs(den) <= 1e-14 * scale:
        raise InfiniteVelocityError(
            f"temporal phase flow vanishes at this configuration (den = {den:.3g})"
        )
    return num / den


def particle_velocities(state: FunctionalState, n: int, positions, t=None) -> np.ndarray:
    return np.array([
        particle_velocity(state, n, j, positions, t) for j in range(n)
    ])


def rescale_sector(state: FunctionalState, n: int, factor: complex) -> FunctionalState:
    """Scale the total-occupation-n coefficients, renormalize, same time.

    Velocities of level n are unchanged: both the sector factor and the
    global renormalization cancel in the guidance ratio.
    """
    totals = _sector_masks(state.spec)
    c = np.where(totals == n, state.c * factor, state.c)
    norm = math.sqrt(float(np.sum(np.abs(c) ** 2)))
    if norm == 0.0:
        raise ValueError("rescaling annihilated the state")
    return FunctionalState(state.spec, state.t, c / norm)


# ---------------------------------------------------------------------------
# particles and mass density


@dataclass(frozen=True)
class ParticleSet:
    """Positions for every occupied level n plus the current effectivity."""

    spec: LatticeSpec
    levels: dict
    effectivity: np.ndarray
    support_tol: float = 1e-30

    def __post_init__(self):
        e = np.asarray(self.effectivity, dtype=float)
        if e.ndim != 1 or len(e) != self.spec.M * self.spec.n_max + 1:
            raise ValueError("effectivity must cover every sector of the tower")
        if np.any(e < -1e-12) or abs(e.sum() - 1.0) > 1e-8:
            raise ValueError("effectivity entries must be a distribution")
        object.__setattr__(self, "effectivity", e)
        lv = {int(n): np.asarray(xs, dtype=float) for n, xs in self.levels.items()}
        for n, xs in lv.items():
            if n < 1 or xs.shape != (n,):
                raise ValueError(f"level {n} needs exactly {n} positions")
        for n in range(1, len(e)):
            if e[n] > self.support_tol and n not in lv:
                raise ValueError(f"level {n} has support but no positions")
        object.__setattr__(self, "levels", lv)


@dataclass(frozen=True)
class MassDensityField:
    """Weighted point masses {(x, m e_n)}; empty levels drop out."""

    positions: np.ndarray
    weights: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))


def mass_density(particles: ParticleSet) -> MassDensityField:
    """Each of the n positions in level n carries weight m e_n."""
    m = particles.spec.m
    xs, ws = [], []
    for n, pts in sorted(particles.levels.items()):
        w = m * particles.effectivity[n]
        if w == 0.0:
            continue
        xs.extend(pts.tolist())
        ws.extend([w] * n)
    return MassDensityField(
        positions=np.asarray(xs, dtype=float), weights=np.asarray(ws, dtype=float)
    )
