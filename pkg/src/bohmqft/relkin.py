"""Relativistic one-particle kinematics for free Klein-Gordon mode sums.

Conventions (fixed for the whole package):
    metric            diag(1, -1, ..., -1), natural units hbar = c = 1
    four-vectors      plain numpy arrays [t, x1, ..., xd]; lowering/raising
                      an index flips the sign of the spatial entries
    positive-frequency wave
        psi(x) = sum_j a_j exp(-i k_j . x) / sqrt((2 pi)^d 2 k0_j)
    with k . x = k0 t - kvec . xvec and k0 = +sqrt(|kvec|^2 + m^2) on shell.

Derived fields:
    particle current   j_mu = i (psi* d_mu psi - psi d_mu psi*)
                            = -2 Im(psi* d_mu psi)          (real by construction)
    polar form         psi = R e^{iS},  d_mu S = j_mu / (-2 R^2)
    quantum potential  Q = (1/2m) (box R) / R,  box = d0^2 - laplacian

Number bookkeeping: the mode form is N = sum_j |a_j|^2.  Cell quadratures use
the measure (2 pi)^d / V_cell * d^d x, which makes the grid form agree with the
mode form exactly (cross terms integrate to zero over one periodicity cell of
the mode comb).  A single mode with a = 1 therefore carries N = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# |psi|^2 below NODE_RTOL times the mean per-mode intensity counts as a node:
# phase and guidance are undefined there and callers get a signal, not garbage.
NODE_RTOL = 1e-12


class NodeError(RuntimeError):
    """Evaluation at an amplitude node where phase/guidance is undefined."""


class GridError(ValueError):
    """Spatial grid cannot represent the requested wave (Nyquist or cell)."""


def spatial_flip(v):
    """Raise/lower one index: flip the sign of the spatial components."""
    out = np.array(v, dtype=v.dtype if hasattr(v, "dtype") else float)
    out[..., 1:] = -out[..., 1:]
    return out


def minkowski_dot(u, v):
    u = np.asarray(u)
    v = np.asarray(v)
    return u[..., 0] * v[..., 0] - np.sum(u[..., 1:] * v[..., 1:], axis=-1)


@dataclass(frozen=True)
class Mode:
    """One plane-wave mode: spatial wave vector and complex amplitude."""

    k: tuple
    a: complex

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(float(c) for c in np.atleast_1d(self.k)))
        object.__setattr__(self, "a", complex(self.a))


@dataclass(frozen=True)
class ModeSum:
    """Finite superposition of on-shell positive-frequency plane waves.

    ks has shape (n_modes, d); amps is complex (n_modes,).  k0 is always the
    positive root, so every mode is positive-frequency by construction.
    """

    m: float
    ks: np.ndarray
    amps: np.ndarray
    d: int = field(init=False)
    k0s: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)  # a / sqrt((2 pi)^d 2 k0)

    def __post_init__(self):
        ks = np.atleast_2d(np.asarray(self.ks, dtype=float))
        amps = np.atleast_1d(np.asarray(self.amps, dtype=complex))
        if self.m <= 0:
            raise ValueError("mass must be positive")
        if ks.shape[0] != amps.shape[0] or ks.shape[0] == 0:
            raise ValueError("need one amplitude per mode, at least one mode")
        d = ks.shape[1]
        if d not in (1, 3):
            raise ValueError(f"spatial dimension must be 1 or 3, got {d}")
        for i in range(ks.shape[0]):
            for j in range(i + 1, ks.shape[0]):
                if np.max(np.abs(ks[i] - ks[j])) < 1e-12:
                    raise ValueError("mode wave vectors must be pairwise distinct")
        k0s = np.sqrt(np.sum(ks * ks, axis=1) + self.m**2)
        weights = amps / np.sqrt(TWO_PI**d * 2.0 * k0s)
        ks.flags.writeable = False
        amps.flags.writeable = False
        k0s.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "ks", ks)
        object.__setattr__(self, "amps", amps)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "k0s", k0s)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_modes(cls, m, modes):
        ks = np.array([mo.k for mo in modes], dtype=float)
        amps = np.array([mo.a for mo in modes], dtype=complex)
        return cls(m, ks, amps)

    @classmethod
    def from_weights(cls, m, ks, weights):
        """Build from pointwise weights w_j, i.e. psi = sum w_j e^{-i k x}."""
        ks = np.atleast_2d(np.asarray(ks, dtype=float))
        weights = np.atleast_1d(np.asarray(weights, dtype=complex))
        k0s = np.sqrt(np.sum(ks * ks, axis=1) + m**2)
        amps = weights * np.sqrt(TWO_PI ** ks.shape[1] * 2.0 * k0s)
        return cls(m, ks, amps)

    @property
    def k_lower(self):
        """Covariant mode momenta k_mu = (k0, -kvec), shape (n_modes, d+1)."""
        kl = np.concatenate([self.k0s[:, None], -self.ks], axis=1)
        kl.flags.writeable = False
        return kl

    @property
    def node_scale(self):
        """Mean per-mode intensity; sets the node threshold."""
        return float(np.mean(np.abs(self.weights) ** 2))

    @property
    def node_threshold(self):
        return NODE_RTOL * self.node_scale


@dataclass(frozen=True)
class WaveSample:
    """psi and its closed-form derivatives at one spacetime point.

    dpsi[mu] = d_mu psi and ddpsi[mu, nu] = d_mu d_nu psi carry lower
    (covariant) indices throughout.
    """

    x: np.ndarray
    psi: complex
    dpsi: np.ndarray
    ddpsi: np.ndarray


@dataclass(frozen=True)
class PolarForm:
    """psi = R e^{iS} with branch-tracked S and closed-form d_mu S."""

    R: float
    S: float
    dS: np.ndarray


def evaluate(wave: ModeSum, x) -> WaveSample:
    """Evaluate psi, d_mu psi, d_mu d_nu psi at spacetime point x = [t, xvec]."""
    x = np.asarray(x, dtype=float)
    if x.shape != (wave.d + 1,):
        raise ValueError(f"expected point of shape ({wave.d + 1},), got {x.shape}")
    kl = wave.k_lower
    phases = wave.k0s * x[0] - wave.ks @ x[1:]
    terms = wave.weights * np.exp(-1j * phases)
    psi = terms.sum()
    dpsi = (-1j) * (kl * terms[:, None]).sum(axis=0)
    ddpsi = -(kl[:, :, None] * kl[:, None, :] * terms[:, None, None]).sum(axis=0)
    return WaveSample(x=x, psi=psi, dpsi=dpsi, ddpsi=ddpsi)


def evaluate_grid(wave: ModeSum, t: float, xs):
    """Vectorized psi and d_mu psi on spatial points xs (npts, d) at time t.

    Returns (psi (npts,), dpsi (npts, d+1)).  Second derivatives are not
    needed on grids and are omitted for speed.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    phases = wave.k0s[None, :] * t - xs @ wave.ks.T  # (npts, n_modes)
    terms = np.exp(-1j * phases) * wave.weights[None, :]
    psi = terms.sum(axis=1)
    dpsi = (-1j) * (terms @ wave.k_lower)
    return psi, dpsi


def kg_residual(wave: ModeSum, x) -> float:
    """|d0^2 psi - laplacian psi + m^2 psi| relative to m^2 |psi|."""
    s = evaluate(wave, x)
    box = s.ddpsi[0, 0] - np.trace(s.ddpsi[1:, 1:])
    denom = wave.m**2 * max(abs(s.psi), math.sqrt(wave.node_scale))
    return abs(box + wave.m**2 * s.psi) / denom


def current(sample: WaveSample) -> np.ndarray:
    """Covariant particle current j_mu = -2 Im(psi* d_mu psi), exactly real."""
    return -2.0 * np.imag(np.conj(sample.psi) * sample.dpsi)


def current_grid(psi, dpsi):
    """Batch version of current(); psi (npts,), dpsi (npts, d+1)."""
    return -2.0 * np.imag(np.conj(psi)[:, None] * dpsi)


def periodicity_cell(wave: ModeSum) -> np.ndarray:
    """Edge lengths of one periodicity cell of the mode comb, per dimension.

    Bilinears of psi oscillate at the pairwise beats dk; the cell edge along
    dimension i is 2 pi / gcd of the nonzero |dk_i|.  A dimension without
    beats is constant there and gets a unit edge.  Incommensurate beats have
    no finite cell and are rejected.
    """
    edges = np.empty(wave.d)
    n = wave.ks.shape[0]
    for i in range(wave.d):
        beats = [
            abs(wave.ks[a, i] - wave.ks[b, i])
            for a in range(n)
            for b in range(a + 1, n)
            if abs(wave.ks[a, i] - wave.ks[b, i]) > 1e-12
        ]
        if not beats:
            edges[i] = 1.0
            continue
        g = _float_gcd(beats)
        if g is None:
            raise GridError(f"incommensurate mode beats along dimension {i}")
        edges[i] = TWO_PI / g
    return edges


def _float_gcd(values, rtol=1e-9, max_iter=64):
    """Approximate positive gcd of floats via Euclid; None if it degenerates."""
    scale = max(values)
    g = values[0]
    for v in values[1:]:
        a, b = max(g, v), min(g, v)
        for _ in range(max_iter):
            if b < rtol * scale:
                break
            a, b = b, math.fmod(a, b)
        g = a
        if g < rtol * scale:
            return None
    # every beat must be an integer multiple of g
    for v in values:
        ratio = v / g
        if abs(ratio - round(ratio)) > 1e-6:
            return None
    return g


def _cell_grid(wave: ModeSum, n_points: int):
    """Uniform periodic grid over one cell; rejects Nyquist violations."""
    edges = periodicity_cell(wave)
    axes = []
    for i in range(wave.d):
        h = edges[i] / n_points
        beats = np.abs(wave.ks[:, None, i] - wave.ks[None, :, i])
        kmax = beats.max()
        if kmax > 1e-12 and h >= math.pi / kmax:
            raise GridError(
                f"grid spacing {h:.3g} does not resolve max beat {kmax:.3g} "
                f"along dimension {i} (Nyquist)"
            )
        axes.append(np.arange(n_points) * h)
    mesh = np.meshgrid(*axes, indexing="ij")
    xs = np.stack([mm.ravel() for mm in mesh], axis=1)
    return xs


def particle_number(wave: ModeSum) -> float:
    """Mode form: N = sum_j |a_j|^2.  Exact and time independent."""
    return float(np.sum(np.abs(wave.amps) ** 2))


def particle_number_grid(wave: ModeSum, t: float, n_points: int = 256) -> float:
    """Grid form: (2 pi)^d * cell average of j0 at fixed t.

    Trapezoid on a uniform periodic grid is exact for trig polynomials below
    Nyquist, so this agrees with the mode form to roundoff.
    """
    xs = _cell_grid(wave, n_points)
    psi, dpsi = evaluate_grid(wave, t, xs)
    j0 = -2.0 * np.imag(np.conj(psi) * dpsi[:, 0])
    return float(TWO_PI**wave.d * j0.mean())


def physical_particle_number(wave: ModeSum, t: float, n_points: int = 4096) -> float:
    """N_phys = (2 pi)^d * cell average of |j0|; >= |N|, not conserved."""
    xs = _cell_grid(wave, n_points)
    psi, dpsi = evaluate_grid(wave, t, xs)
    j0 = -2.0 * np.imag(np.conj(psi) * dpsi[:, 0])
    return float(TWO_PI**wave.d * np.abs(j0).mean())


def polar(sample: WaveSample, wave: ModeSum, prior: PolarForm | None = None) -> PolarForm:
    """Polar decomposition with nearest-branch phase tracking.

    The branch of S is chosen nearest to prior.S when a prior is given;
    callers stepping along a path must keep phase steps below pi/2 for the
    choice to be reliable.
    """
    rho = abs(sample.psi) ** 2
    if rho < wave.node_threshold:
        raise NodeError(f"|psi|^2 = {rho:.3g} below node threshold at x = {sample.x}")
    R = math.sqrt(rho)
    S = math.atan2(sample.psi.imag, sample.psi.real)
    if prior is not None:
        S += TWO_PI * round((prior.S - S) / TWO_PI)
    dS = np.imag(sample.dpsi / sample.psi)
    return PolarForm(R=R, S=S, dS=dS)


def _amplitude_second_derivs(sample: WaveSample):
    """R, d_mu R, d_mu d_nu R from the closed-form psi derivatives."""
    rho = abs(sample.psi) ** 2
    R = math.sqrt(rho)
    drho = 2.0 * np.real(np.conj(sample.psi) * sample.dpsi)
    ddrho = 2.0 * np.real(
        np.conj(sample.dpsi)[:, None] * sample.dpsi[None, :]
        + np.conj(sample.psi) * sample.ddpsi
    )
    dR = drho / (2.0 * R)
    ddR = ddrho / (2.0 * R) - drho[:, None] * drho[None, :] / (4.0 * R**3)
    return R, dR, ddR


def quantum_potential(wave: ModeSum, x) -> float:
    """Q = (box R) / (2 m R) from closed-form second derivatives."""
    sample = evaluate(wave, x)
    if abs(sample.psi) ** 2 < wave.node_threshold:
        raise NodeError(f"|psi|^2 below node threshold at x = {x}")
    R, _, ddR = _amplitude_second_derivs(sample)
    box_R = ddR[0, 0] - np.trace(ddR[1:, 1:])
    return float(box_R / (2.0 * wave.m * R))


def hamilton_jacobi_residual(wave: ModeSum, x) -> float:
    """-(dS.dS)/2m + m/2 + Q; identically zero for on-shell mode sums."""
    sample = evaluate(wave, x)
    form = polar(sample, wave)
    dS_sq = minkowski_dot(form.dS, form.dS)
    return float(-dS_sq / (2.0 * wave.m) + wave.m / 2.0 + quantum_potential(wave, x))


def continuity_residual(wave: ModeSum, x) -> float:
    """d^mu (R^2 d_mu S), normalized by m * j0-scale; zero for solutions."""
    sample = evaluate(wave, x)
    if abs(sample.psi) ** 2 < wave.node_threshold:
        raise NodeError(f"|psi|^2 below node threshold at x = {x}")
    R, dR, _ = _amplitude_second_derivs(sample)
    dS = np.imag(sample.dpsi / sample.psi)
    ddS = np.imag(
        sample.ddpsi / sample.psi
        - sample.dpsi[:, None] * sample.dpsi[None, :] / sample.psi**2
    )
    box_S = ddS[0, 0] - np.trace(ddS[1:, 1:])
    raw = 2.0 * R * minkowski_dot(dR, dS) + R**2 * box_S
    scale = wave.m * max(R**2 * wave.m, wave.node_scale)
    return float(raw / scale)


def boost(wave: ModeSum, rapidity: float) -> ModeSum:
    """Same physical wave in coordinates boosted by the given rapidity (d=1).

    Contravariant momenta transform with the coordinates and amplitudes pick
    up sqrt(k0'/k0), which keeps the pointwise weights (hence psi itself,
    evaluated at mapped points) identical.
    """
    if wave.d != 1:
        raise ValueError("boost is implemented for d = 1")
    ch, sh = math.cosh(rapidity), math.sinh(rapidity)
    k0p = ch * wave.k0s - sh * wave.ks[:, 0]
    k1p = -sh * wave.k0s + ch * wave.ks[:, 0]
    amps = wave.amps * np.sqrt(k0p / wave.k0s)
    return ModeSum(wave.m, k1p[:, None], amps)


def boost_point(x, rapidity: float) -> np.ndarray:
    """Map a d=1 spacetime point to the boosted coordinates."""
    x = np.asarray(x, dtype=float)
    ch, sh = math.cosh(rapidity), math.sinh(rapidity)
    return np.array([ch * x[0] - sh * x[1], -sh * x[0] + ch * x[1]])


def boost_matrix(rapidity: float) -> np.ndarray:
    ch, sh = math.cosh(rapidity), math.sinh(rapidity)
    return np.array([[ch, -sh], [-sh, ch]])
