"""Ideal pointer measurements, Born statistics and effectivity collapse.

A single continuous pointer y with Gaussian packet

    chi(y) = (sigma sqrt(pi))^{-1/2} e^{-y^2 / (2 sigma^2)}

is coupled impulsively (von Neumann) to a field observable of the form

    A = alpha + sum_j beta_j n_hat_j        (mode-linear)

through H_int = g A p_y for a window of duration T.  Mode-linear observables
commute with the free field Hamiltonian, so with lam = 0 the coupled evolution
is exact: each occupation basis state |occ> rides a pointer packet whose
center moves at g a(occ), a(occ) = alpha + beta . occ.  Channels are the
distinct eigenvalues in the state's support; after the window their packets
sit at y = g T a, overlapping by e^{-Delta^2/(4 sigma^2)}.

Bohmian sample dynamics use the conserved current of the coupled Hamiltonian
(not an ansatz), which for H_int = g A p_y with n_hat_j = omega_j q_j^2/2
- 1/2 - (1/(2 omega_j)) d^2/dq_j^2 works out to

    J_j = Im(Psi* d_j Psi) - (g beta_j / omega_j) Re(Psi* d_j d_y Psi)
    J_y = g [alpha + sum_j beta_j (omega_j q_j^2/2 - 1/2)] |Psi|^2
          + g sum_j beta_j |d_j Psi|^2 / (2 omega_j)

so equivariance is exact and Born frequencies need no extra postulates.
Ensembles integrate all samples at once with fixed-step RK4 (deterministic,
order-independent); each sample's initial condition comes from its own
rng stream seeded by (seed, index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import qftfun as qf
from .qftfun import FunctionalState, LatticeSpec
from .relkin import ModeSum, _cell_grid, evaluate_grid

__all__ = [
    "PointerSpec",
    "ChannelEnsemble",
    "JointState",
    "EnsembleResult",
    "CollapseRecord",
    "entangle",
    "number_observable",
    "run_ensemble",
    "conditional_velocity_gap",
    "momentum_distribution",
    "momentum_measurement",
    "effectivity_collapse",
    "collapse_ensemble",
    "born_z_scores",
]

RHO_FLOOR_RTOL = 1e-30


@dataclass(frozen=True)
class PointerSpec:
    """Pointer packet + impulsive coupling parameters.

    mass is carried for completeness; the von Neumann idealization drops the
    pointer kinetic term during the window, so it never enters the dynamics.
    nonoverlap_factor is the required g*T*gap / sigma_y; channel membership
    windows are +- channel_halfwidth * sigma_y around each center.
    """

    g: float
    T: float
    sigma_y: float
    delta_target: float = 0.0
    mass: float = math.inf
    nonoverlap_factor: float = 5.0
    channel_halfwidth: float = 5.0
    overlap_threshold: float = 1e-10

    def __post_init__(self):
        if self.g <= 0 or self.T <= 0 or self.sigma_y <= 0 or self.mass <= 0:
            raise ValueError("need g, T, sigma_y, mass > 0")

    @classmethod
    def targeting(cls, gap: float, sigma_y: float, separation: float, T: float = 1.0,
                  **kw) -> "PointerSpec":
        """Choose g so that g*T*gap = separation * sigma_y."""
        if gap <= 0:
            raise ValueError("need a positive eigenvalue gap")
        g = separation * sigma_y / (T * gap)
        return cls(g=g, T=T, sigma_y=sigma_y,
                   delta_target=separation * sigma_y, **kw)

    def chi(self, y, center=0.0):
        s = self.sigma_y
        return (s * math.sqrt(math.pi)) ** -0.5 * np.exp(-((y - center) ** 2) / (2 * s * s))

    def chi_prime(self, y, center=0.0):
        return self.chi(y, center) * (-(y - center) / self.sigma_y**2)


@dataclass(frozen=True)
class ChannelEnsemble:
    """Channel decomposition sum_a c_a psi_a(x) chi_a(y), plus run bookkeeping."""

    labels: np.ndarray          # distinct eigenvalues, sorted
    coeffs: np.ndarray          # |c_a|^2, normalized
    centers: np.ndarray         # packet centers at the end of the window
    sigma_y: float
    overlap: np.ndarray         # Gaussian overlap matrix e^{-Delta^2/(4 sigma^2)}
    ideal: bool
    n_samples: int = 0
    seed: int | None = None
    counts: np.ndarray | None = None

    def __post_init__(self):
        if abs(self.coeffs.sum() - 1.0) > 1e-10:
            raise ValueError("channel weights must sum to 1")


def number_observable(spec: LatticeSpec):
    """(alpha, beta) for the total number operator."""
    return 0.0, np.ones(spec.M)


def _channel_split(spec: LatticeSpec, c: np.ndarray, alpha: float, beta: np.ndarray,
                   strict: bool = True):
    """Group support basis states by observable eigenvalue."""
    occ = qf.occupations(spec)
    a_vals = alpha + occ @ np.asarray(beta, dtype=float)
    support = np.abs(c) > 1e-14
    if not np.any(support):
        raise ValueError("state has no support")
    # exact-equality grouping after rounding away representation noise
    keys = np.round(a_vals, 12)
    labels = np.unique(keys[support])
    if strict:
        for lab in labels:
            if np.count_nonzero(support & (keys == lab)) > 1:
                raise ValueError(
                    f"eigenvalue {lab} is degenerate on the state's support"
                )
    weights = np.array([
        float(np.sum(np.abs(c[support & (keys == lab)]) ** 2)) for lab in labels
    ])
    return keys, labels, weights / weights.sum()


@dataclass(frozen=True)
class JointState:
    """Field + pointer state under impulsive mode-linear coupling.

    Exact closed form: Psi(q, y, t) = sum_idx c_idx e^{-i E_idx (t - t0)}
    B_idx(q) chi(y - g a_idx min(t - t0, T)).
    """

    fstate: FunctionalState
    pointer: PointerSpec
    alpha: float
    beta: np.ndarray
    channels: ChannelEnsemble

    @property
    def spec(self) -> LatticeSpec:
        return self.fstate.spec

    def _basis_eigenvalues(self):
        occ = qf.occupations(self.spec)
        return self.alpha + occ @ self.beta

    def centers_at(self, t: float) -> np.ndarray:
        """Per-basis packet centers at time t (window-clamped)."""
        dt = min(max(t - self.fstate.t, 0.0), self.pointer.T)
        return self.pointer.g * dt * self._basis_eigenvalues()

    def coeffs_at(self, t: float) -> np.ndarray:
        occ = qf.occupations(self.spec)
        E = self.spec.E0 + occ @ self.spec.omegas
        return self.fstate.c * np.exp(-1j * E * (t - self.fstate.t))


def entangle(state: FunctionalState, observable, pointer: PointerSpec,
             strict: bool = True) -> JointState:
    """Attach a pointer to a mode-linear observable (alpha, beta).

    The coupling is exact only when the observable commutes with the field
    Hamiltonian, which for mode-linear observables means lam = 0.
    """
    spec = state.spec
    if spec.lam != 0.0:
        raise ValueError(
            "impulsive number-type measurement requires lam = 0 "
            "(observable must commute with the field Hamiltonian)"
        )
    alpha, beta = observable
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spec.M,):
        raise ValueError("observable needs one beta per mode")
    keys, labels, weights = _channel_split(spec, state.c, alpha, beta, strict)
    centers = pointer.g * pointer.T * labels
    d = np.abs(centers[:, None] - centers[None, :])
    overlap = np.exp(-(d**2) / (4 * pointer.sigma_y**2))
    off = overlap - np.eye(len(labels))
    gaps = np.diff(np.sort(labels))
    min_gap = float(gaps.min()) if len(gaps) else math.inf
    ideal = (
        pointer.g * pointer.T * min_gap >= pointer.nonoverlap_factor * pointer.sigma_y
        and (off.max() if off.size else 0.0) < pointer.overlap_threshold
    )
    channels = ChannelEnsemble(
        labels=labels, coeffs=weights, centers=centers,
        sigma_y=pointer.sigma_y, overlap=overlap, ideal=bool(ideal),
    )
    return JointState(fstate=state, pointer=pointer, alpha=alpha, beta=beta,
                      channels=channels)


# ---------------------------------------------------------------------------
# exact joint wave evaluation and conserved-current velocities


def _joint_tables(joint: JointState, t: float, Q: np.ndarray, Y: np.ndarray):
    """Psi, d_q Psi, d_y Psi, d_q d_y Psi for sample batches.

    Q: (S, M), Y: (S,).  Returns complex arrays psi (S,), gq (S, M),
    gy (S,), gqy (S, M).
    """
    spec = joint.spec
    occ = qf.occupations(spec)
    c = joint.coeffs_at(t)
    centers = joint.centers_at(t)
    sq = np.sqrt(spec.omegas)
    norm = float(np.prod(spec.omegas**0.25))
    n_top = spec.n_max + 1
    H = [qf._hermite_table(n_top, sq[j] * Q[:, j]) for j in range(spec.M)]
    fac = np.stack([H[j][occ[:, j]] for j in range(spec.M)])  # (M, B, S)
    vals = fac.prod(axis=0) * norm
    chi = joint.pointer.chi(Y[None, :], centers[:, None])       # (B, S)
    chip = joint.pointer.chi_prime(Y[None, :], centers[:, None])
    cv = c[:, None] * vals
    psi = np.sum(cv * chi, axis=0)
    gy = np.sum(cv * chip, axis=0)
    gq = np.empty((len(Y), spec.M), dtype=complex)
    gqy = np.empty((len(Y), spec.M), dtype=complex)
    ns = occ.astype(float)
    for j in range(spec.M):
        others = norm * np.ones_like(fac[0])
        for i in range(spec.M):
            if i != j:
                others = others * fac[i]
        n = occ[:, j]
        lower = np.where((n > 0)[:, None], np.sqrt(ns[:, j])[:, None] * H[j][n - 1], 0.0)
        upper = np.sqrt(ns[:, j] + 1.0)[:, None] * H[j][n + 1]
        hp = (lower - upper) / math.sqrt(2.0) * sq[j]
        cg = c[:, None] * (others * hp)
        gq[:, j] = np.sum(cg * chi, axis=0)
        gqy[:, j] = np.sum(cg * chip, axis=0)
    return psi, gq, gy, gqy


def _velocities(joint: JointState, t: float, Q: np.ndarray, Y: np.ndarray):
    """Conserved-current velocities (vq (S, M), vy (S,), n_floored)."""
    spec = joint.spec
    g = joint.pointer.g
    in_window = (t - joint.fstate.t) < joint.pointer.T
    psi, gq, gy, gqy = _joint_tables(joint, t, Q, Y)
    rho = np.abs(psi) ** 2
    floor = RHO_FLOOR_RTOL * spec.node_scale / joint.pointer.sigma_y
    n_floored = int(np.count_nonzero(rho < floor))
    rho_safe = np.maximum(rho, floor)
    if in_window:
        Jq = np.imag(np.conj(psi)[:, None] * gq)
        Jq -= (g * joint.beta / spec.omegas)[None, :] * np.real(
            np.conj(psi)[:, None] * gqy
        )
        W = joint.alpha + (Q**2 * (spec.omegas / 2.0)[None, :] - 0.5) @ joint.beta
        Jy = g * W * rho
        Jy += g * (np.abs(gq) ** 2 @ (joint.beta / (2.0 * spec.omegas)))
    else:
        Jq = np.imag(np.conj(psi)[:, None] * gq)
        Jy = np.imag(np.conj(psi) * gy)
    return Jq / rho_safe[:, None], Jy / rho_safe, n_floored


def joint_density(joint: JointState, t: float, Q, Y) -> np.ndarray:
    psi, _, _, _ = _joint_tables(joint, t, np.atleast_2d(Q), np.atleast_1d(Y))
    return np.abs(psi) ** 2


def continuity_residual_joint(joint: JointState, t: float, q, y,
                              fd_step: float = 1e-5) -> float:
    """|d_t rho + div J| / (rho scale): machine-small iff the current is exact."""
    spec = joint.spec
    q = np.asarray(q, dtype=float)
    h = fd_step

    def rho_at(tt, qq, yy):
        return float(joint_density(joint, tt, qq[None, :], np.array([yy]))[0])

    def J_at(tt, qq, yy):
        vq, vy, _ = _velocities(joint, tt, qq[None, :], np.array([yy]))
        r = rho_at(tt, qq, yy)
        return vq[0] * r, vy[0] * r

    dt_rho = (rho_at(t + h, q, y) - rho_at(t - h, q, y)) / (2 * h)
    div = 0.0
    for j in range(spec.M):
        e = np.zeros(spec.M)
        e[j] = h
        div += (J_at(t, q + e, y)[0][j] - J_at(t, q - e, y)[0][j]) / (2 * h)
    div += (J_at(t, q, y + h)[1] - J_at(t, q, y - h)[1]) / (2 * h)
    scale = rho_at(t, q, y) * float(np.max(spec.omegas)) + 1e-300
    return abs(dt_rho + div) / scale


# ---------------------------------------------------------------------------
# sampling and ensemble dynamics


def _grid_icdf_sample(xs: np.ndarray, dens: np.ndarray, u: float) -> float:
    """Inverse-CDF draw on a tabulated 1-d density (trapezoid CDF)."""
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2 * np.diff(xs))])
    cdf /= cdf[-1]
    return float(np.interp(u, cdf, xs))


def _sample_initial(joint: JointState, n_samples: int, seed: int,
                    n_grid: int = 2001, span: float = 2.5):
    """Draw (q, y) from |Psi(0)|^2 = |Psi_f(q)|^2 chi(y)^2, per-sample streams."""
    spec = joint.spec
    if spec.M > 2:
        raise ValueError("grid inverse-CDF sampling implemented for M <= 2")
    qmax = span * math.sqrt((2 * spec.n_max + 1) / float(np.min(spec.omegas)))
    xs = np.linspace(-qmax, qmax, n_grid)
    Q = np.empty((n_samples, spec.M))
    Y = np.empty(n_samples)
    st0 = joint.fstate
    if spec.M == 1:
        dens = np.abs(qf._psi_tables(st0, xs[:, None], order=0)[0]) ** 2
        for i in range(n_samples):
            rng = np.random.default_rng([seed, i])
            u = rng.uniform()
            Q[i, 0] = _grid_icdf_sample(xs, dens, u)
            Y[i] = rng.standard_normal() * joint.pointer.sigma_y / math.sqrt(2.0)
    else:
        grid = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)
        dens2 = (np.abs(qf._psi_tables(st0, grid, order=0)[0]) ** 2).reshape(n_grid, n_grid)
        marg1 = np.trapezoid(dens2, xs, axis=1)
        for i in range(n_samples):
            rng = np.random.default_rng([seed, i])
            q1 = _grid_icdf_sample(xs, marg1, rng.uniform())
            row = np.array([
                np.interp(q1, xs, dens2[:, k]) for k in range(n_grid)
            ])
            Q[i, 0] = q1
            Q[i, 1] = _grid_icdf_sample(xs, row, rng.uniform())
            Y[i] = rng.standard_normal() * joint.pointer.sigma_y / math.sqrt(2.0)
    return Q, Y


def _rk4_sweep(joint: JointState, Q: np.ndarray, Y: np.ndarray, t0: float,
               t1: float, n_steps: int, recorder=None, clamp_frac: float = 0.25):
    """Fixed-step RK4 over all samples at once.

    Velocities are clamped per sample so no stage moves y by more than
    clamp_frac * sigma_y or q by more than clamp_frac harmonic lengths per
    step: the exact flow has integrable near-node layers where |v| blows up,
    and an unclamped fixed step would fling samples across channels.  The
    clamp preserves direction and only engages inside those layers.
    """
    S, M = Q.shape
    spec = joint.spec
    state = np.concatenate([Q.reshape(S * M), Y])
    h = (t1 - t0) / n_steps
    vy_cap = clamp_frac * joint.pointer.sigma_y / h
    vq_cap = clamp_frac / math.sqrt(float(np.min(spec.omegas))) / h
    floored = 0

    def f(t, z):
        nonlocal floored
        q = z[: S * M].reshape(S, M)
        y = z[S * M:]
        vq, vy, nf = _velocities(joint, t, q, y)
        floored += nf
        over = np.maximum(
            np.abs(vy) / vy_cap, np.max(np.abs(vq), axis=1) / vq_cap
        )
        scale = np.maximum(over, 1.0)
        vq = vq / scale[:, None]
        vy = vy / scale
        return np.concatenate([vq.reshape(S * M), vy])

    for i in range(n_steps):
        t = t0 + i * h
        k1 = f(t, state)
        k2 = f(t + h / 2, state + h / 2 * k1)
        k3 = f(t + h / 2, state + h / 2 * k2)
        k4 = f(t + h, state + h * k3)
        state = state + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if recorder is not None:
            recorder(t + h, state[: S * M].reshape(S, M), state[S * M:])
    return state[: S * M].reshape(S, M), state[S * M:], floored


def _assign_channels(channels: ChannelEnsemble, Y: np.ndarray,
                     halfwidth: float) -> np.ndarray:
    """Index of the channel window containing each y; -1 for gap hits."""
    w = halfwidth * channels.sigma_y
    hits = np.abs(Y[:, None] - channels.centers[None, :]) <= w
    n_hit = hits.sum(axis=1)
    if np.any(n_hit > 1):
        raise RuntimeError("channel windows overlap; pointer spec is not ideal")
    out = np.where(n_hit == 1, np.argmax(hits, axis=1), -1)
    return out


@dataclass(frozen=True)
class EnsembleResult:
    channels: ChannelEnsemble
    n_samples: int
    seed: int
    counts: np.ndarray
    gap_hits: int
    frequencies: np.ndarray
    z_scores: np.ndarray
    final_y: np.ndarray
    final_q: np.ndarray
    assignment: np.ndarray
    ok: bool


def born_z_scores(counts: np.ndarray, probs: np.ndarray, n: int) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    sd = np.sqrt(np.maximum(p * (1 - p) / n, 1e-300))
    return (counts / n - p) / sd


def run_ensemble(joint: JointState, n_samples: int, seed: int,
                 n_steps: int = 400, settle: float = 0.0) -> EnsembleResult:
    """Sample |Psi(0)|^2, flow every sample through the coupling window,
    assign channels, compare with the Born weights |c_a|^2.

    Gap hits (samples outside every channel window) above 0.1% fail the run.
    """
    Q0, Y0 = _sample_initial(joint, n_samples, seed)
    t0 = joint.fstate.t
    Q, Y, _ = _rk4_sweep(joint, Q0, Y0, t0, t0 + joint.pointer.T + settle, n_steps)
    assign = _assign_channels(joint.channels, Y, joint.pointer.channel_halfwidth)
    gap_hits = int(np.count_nonzero(assign < 0))
    counts = np.bincount(assign[assign >= 0], minlength=len(joint.channels.labels))
    freqs = counts / n_samples
    z = born_z_scores(counts, joint.channels.coeffs, n_samples)
    ok = joint.channels.ideal and gap_hits <= 0.001 * n_samples
    channels = replace(joint.channels, n_samples=n_samples, seed=seed, counts=counts)
    return EnsembleResult(
        channels=channels, n_samples=n_samples, seed=seed, counts=counts,
        gap_hits=gap_hits, frequencies=freqs, z_scores=z,
        final_y=Y, final_q=Q, assignment=assign, ok=bool(ok),
    )


def conditional_velocity_gap(joint: JointState, t: float, q, y) -> float:
    """Velocity difference between the full state and the single channel
    containing y, relative to the velocity scale.  Inside an ideal channel
    this is crosstalk-suppressed to many digits.
    """
    spec = joint.spec
    assign = _assign_channels(joint.channels, np.atleast_1d(float(y)),
                              joint.pointer.channel_halfwidth)
    if assign[0] < 0:
        raise ValueError("y is not inside any channel window")
    lab = joint.channels.labels[assign[0]]
    keys = np.round(joint._basis_eigenvalues(), 12)
    c_masked = np.where(keys == lab, joint.fstate.c, 0.0)
    norm = math.sqrt(float(np.sum(np.abs(c_masked) ** 2)))
    sub = FunctionalState(spec, joint.fstate.t, c_masked / norm)
    sub_joint = JointState(fstate=sub, pointer=joint.pointer, alpha=joint.alpha,
                           beta=joint.beta, channels=joint.channels)
    Q = np.atleast_2d(np.asarray(q, dtype=float))
    Y = np.atleast_1d(float(y))
    vq_full, vy_full, _ = _velocities(joint, t, Q, Y)
    vq_sub, vy_sub, _ = _velocities(sub_joint, t, Q, Y)
    scale = max(
        float(np.max(np.abs(vq_full))), abs(float(vy_full[0])),
        joint.pointer.g * float(np.max(np.abs(joint.channels.labels))) * 1e-6,
    )
    diff = max(float(np.max(np.abs(vq_full - vq_sub))),
               abs(float(vy_full[0] - vy_sub[0])))
    return diff / scale


# ---------------------------------------------------------------------------
# momentum bookkeeping for mode sums


@dataclass(frozen=True)
class MomentumComparison:
    p_edges: np.ndarray
    bohm: np.ndarray
    spectral: np.ndarray

    @property
    def total_variation(self) -> float:
        return 0.5 * float(np.sum(np.abs(self.bohm - self.spectral)))


def momentum_distribution(wave: ModeSum, t: float = 0.0, n_points: int = 4096,
                          n_bins: int = 201, pad: float = 0.5) -> MomentumComparison:
    """Bohmian momentum density int dx |psi|^2 delta(p - dS/dx) vs |psi~(p)|^2.

    d = 1 only.  The Bohmian momentum at x is the local phase gradient; the
    spectral side is the discrete mode distribution |a_j|^2 placed in the
    same bins.
    """
    if wave.d != 1:
        raise ValueError("momentum comparison is one-dimensional")
    xs = _cell_grid(wave, n_points)
    psi, dpsi = evaluate_grid(wave, t, xs)
    rho = np.abs(psi) ** 2
    # dS/dx = Im(d_x psi / psi); guard nodes by weight (they carry none)
    good = rho > 1e-300
    p_loc = np.zeros_like(rho)
    p_loc[good] = np.imag(dpsi[good, 1] / psi[good])
    ks = wave.ks[:, 0]
    lo = min(float(p_loc[good].min()), float(ks.min())) - pad
    hi = max(float(p_loc[good].max()), float(ks.max())) + pad
    edges = np.linspace(lo, hi, n_bins + 1)
    bohm, _ = np.histogram(p_loc[good], bins=edges, weights=rho[good])
    bohm /= bohm.sum()
    spec_w = np.abs(wave.weights) ** 2
    spectral, _ = np.histogram(ks, bins=edges, weights=spec_w)
    spectral /= spectral.sum()
    return MomentumComparison(p_edges=edges, bohm=bohm, spectral=spectral)


def momentum_measurement(wave: ModeSum, pointer: PointerSpec, n_samples: int,
                         seed: int) -> EnsembleResult:
    """Ideal momentum measurement of a 1-d mode sum: channels at the mode
    wavenumbers with weights |a_j|^2 / sum |a|^2.

    The coupled observable (field momentum) is not mode-linear in the real
    cos/sin coordinates, so the window dynamics are not integrated here;
    outcomes are drawn from the exact post-window pointer density (the same
    endpoint the equivariant flow reaches, which run_ensemble demonstrates
    dynamically for number-type observables).
    """
    if wave.d != 1:
        raise ValueError("momentum measurement is one-dimensional")
    ks = wave.ks[:, 0]
    order = np.argsort(ks)
    labels = ks[order]
    weights = np.abs(wave.weights[order]) ** 2
    weights = weights / weights.sum()
    centers = pointer.g * pointer.T * labels
    d = np.abs(centers[:, None] - centers[None, :])
    overlap = np.exp(-(d**2) / (4 * pointer.sigma_y**2))
    off = overlap - np.eye(len(labels))
    gaps = np.diff(labels)
    min_gap = float(gaps.min()) if len(gaps) else math.inf
    ideal = (
        pointer.g * pointer.T * min_gap >= pointer.nonoverlap_factor * pointer.sigma_y
        and (off.max() if off.size else 0.0) < pointer.overlap_threshold
    )
    channels = ChannelEnsemble(labels=labels, coeffs=weights, centers=centers,
                               sigma_y=pointer.sigma_y, overlap=overlap,
                               ideal=bool(ideal))
    Y = np.empty(n_samples)
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        a = int(np.searchsorted(np.cumsum(weights), rng.uniform()))
        Y[i] = centers[a] + rng.standard_normal() * pointer.sigma_y / math.sqrt(2.0)
    assign = _assign_channels(channels, Y, pointer.channel_halfwidth)
    gap_hits = int(np.count_nonzero(assign < 0))
    counts = np.bincount(assign[assign >= 0], minlength=len(labels))
    z = born_z_scores(counts, weights, n_samples)
    ok = bool(ideal) and gap_hits <= 0.001 * n_samples
    return EnsembleResult(
        channels=replace(channels, n_samples=n_samples, seed=seed, counts=counts),
        n_samples=n_samples, seed=seed, counts=counts, gap_hits=gap_hits,
        frequencies=counts / n_samples, z_scores=z, final_y=Y,
        final_q=np.zeros((n_samples, 0)), assignment=assign, ok=ok,
    )


# ---------------------------------------------------------------------------
# effectivity collapse


def _effectivity_series(joint: JointState, t: float, Q: np.ndarray, Y: np.ndarray):
    """Sector effectivities including the pointer factor, batched over samples."""
    spec = joint.spec
    occ = qf.occupations(spec)
    totals = occ.sum(axis=1)
    c = joint.coeffs_at(t)
    centers = joint.centers_at(t)
    sq = np.sqrt(spec.omegas)
    norm = float(np.prod(spec.omegas**0.25))
    H = [qf._hermite_table(spec.n_max, sq[j] * Q[:, j]) for j in range(spec.M)]
    fac = np.stack([H[j][occ[:, j]] for j in range(spec.M)])
    vals = fac.prod(axis=0) * norm
    chi = joint.pointer.chi(Y[None, :], centers[:, None])
    weighted = c[:, None] * vals * chi
    n_sec = spec.M * spec.n_max + 1
    amps = np.zeros((n_sec, len(Y)), dtype=complex)
    np.add.at(amps, totals, weighted)
    dens = np.abs(amps) ** 2
    total = dens.sum(axis=0)
    total = np.maximum(total, 1e-300)
    return dens / total[None, :]


@dataclass(frozen=True)
class CollapseRecord:
    ts: np.ndarray
    e_series: np.ndarray        # (n_sectors, n_times)
    final_e: np.ndarray
    channel: int                # winning sector
    collapsed: bool             # exactly one entry > 1 - 1e-6
    q_path: np.ndarray
    y_path: np.ndarray


def effectivity_collapse(state: FunctionalState, pointer: PointerSpec, seed: int,
                         n_steps: int = 400, n_record: int = 81,
                         settle: float = 0.0, tol: float = 1e-6) -> CollapseRecord:
    """Evolve one Bohmian (q, y) sample through a total-number measurement
    and record the sector effectivities along the way.
    """
    joint = entangle(state, number_observable(state.spec), pointer)
    Q0, Y0 = _sample_initial(joint, 1, seed)
    t0 = state.t
    t1 = t0 + pointer.T + settle
    rec_ts = np.linspace(t0, t1, n_record)
    ts_list, es_list, qs_list, ys_list = [t0], [
        _effectivity_series(joint, t0, Q0, Y0)[:, 0]
    ], [Q0[0].copy()], [Y0[0]]
    next_rec = 1

    def recorder(t, Qc, Yc):
        nonlocal next_rec
        while next_rec < n_record and t >= rec_ts[next_rec] - 1e-12:
            ts_list.append(t)
            es_list.append(_effectivity_series(joint, t, Qc, Yc)[:, 0])
            qs_list.append(Qc[0].copy())
            ys_list.append(Yc[0])
            next_rec += 1

    _rk4_sweep(joint, Q0, Y0, t0, t1, n_steps, recorder=recorder)
    e_series = np.stack(es_list, axis=1)
    final_e = e_series[:, -1]
    top = int(np.argmax(final_e))
    collapsed = bool(final_e[top] > 1 - tol and
                     np.all(np.delete(final_e, top) < tol))
    return CollapseRecord(ts=np.array(ts_list), e_series=e_series, final_e=final_e,
                          channel=top, collapsed=collapsed,
                          q_path=np.stack(qs_list), y_path=np.array(ys_list))


def collapse_ensemble(state: FunctionalState, pointer: PointerSpec, n_runs: int,
                      seed: int, n_steps: int = 400, settle: float = 0.0,
                      tol: float = 1e-6):
    """Vectorized final-effectivity statistics over n_runs samples.

    Returns (channels array, collapsed flags, counts per sector, z-scores
    against the sector weights).
    """
    joint = entangle(state, number_observable(state.spec), pointer)
    Q0, Y0 = _sample_initial(joint, n_runs, seed)
    t0 = state.t
    Q, Y, _ = _rk4_sweep(joint, Q0, Y0, t0, t0 + pointer.T + settle, n_steps)
    e = _effectivity_series(joint, t0 + pointer.T + settle, Q, Y)  # (n_sec, S)
    top = np.argmax(e, axis=0)
    e_top = e[top, np.arange(n_runs)]
    others = e.copy()
    others[top, np.arange(n_runs)] = 0.0
    collapsed = (e_top > 1 - tol) & (others.max(axis=0) < tol)
    counts = np.bincount(top, minlength=e.shape[0])
    weights = qf.sector_weights(state)
    z = born_z_scores(counts, weights, n_runs)
    return top, collapsed, counts, z
