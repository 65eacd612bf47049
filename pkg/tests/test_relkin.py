"""Mode sums, currents, number integrals, polar form, boosts."""

import math

import numpy as np
import pytest

from bohmqft import relkin as rk

TWO_PI = 2.0 * math.pi


def random_wave(rng, d=1, n_modes=3, kmax=3):
    """Random integer-lattice mode sum; integer ks keep the cell finite."""
    while True:
        ks = rng.integers(-kmax, kmax + 1, size=(n_modes, d))
        if len({tuple(k) for k in ks}) == n_modes:
            break
    amps = rng.normal(size=n_modes) + 1j * rng.normal(size=n_modes)
    return rk.ModeSum(1.0 + rng.uniform(0.0, 1.0), ks.astype(float), amps)


def test_single_mode_value():
    # psi = a e^{-i(k0 t - k x)} / sqrt((2 pi)^d 2 k0), evaluated independently
    wave = rk.ModeSum(1.5, [[2.0]], [0.7 - 0.3j])
    k0 = math.sqrt(4.0 + 1.5**2)
    x = np.array([0.31, -1.2])
    expected = (0.7 - 0.3j) * np.exp(-1j * (k0 * x[0] - 2.0 * x[1])) / math.sqrt(
        TWO_PI * 2.0 * k0
    )
    s = rk.evaluate(wave, x)
    assert abs(s.psi - expected) < 1e-14


def test_evaluate_grid_matches_pointwise():
    rng = np.random.default_rng(3)
    wave = random_wave(rng)
    xs = rng.uniform(-2, 2, size=(17, 1))
    psi, dpsi = rk.evaluate_grid(wave, 0.6, xs)
    for i in range(17):
        s = rk.evaluate(wave, np.concatenate([[0.6], xs[i]]))
        assert abs(psi[i] - s.psi) < 1e-14
        assert np.max(np.abs(dpsi[i] - s.dpsi)) < 1e-14


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(4)
    wave = random_wave(rng)
    x = np.array([0.2, 0.9])
    s = rk.evaluate(wave, x)
    for mu in range(2):
        h = 1e-5
        e = np.zeros(2)
        e[mu] = h
        fd = (rk.evaluate(wave, x + e).psi - rk.evaluate(wave, x - e).psi) / (2 * h)
        assert abs(fd - s.dpsi[mu]) < 1e-8
        h = 1e-4  # second differences need the larger step against roundoff
        e[mu] = h
        fd2 = (
            rk.evaluate(wave, x + e).psi
            - 2 * s.psi
            + rk.evaluate(wave, x - e).psi
        ) / h**2
        assert abs(fd2 - s.ddpsi[mu, mu]) < 1e-5


def test_on_shell_kg_residual():
    rng = np.random.default_rng(5)
    for _ in range(5):
        wave = random_wave(rng)
        x = rng.uniform(-3, 3, size=2)
        assert rk.kg_residual(wave, x) < 1e-12


def test_current_is_real_and_matches_formula():
    # two modes: j0 = 2 sum k0_j |w_j|^2 + cross term with cos of the beat
    wave = rk.ModeSum.from_weights(1.0, [[1.0], [0.0]], [1.0, 1.2])
    k01, k02 = math.sqrt(2.0), 1.0
    x = np.array([0.7, 1.3])
    beat = (k01 - k02) * x[0] - 1.0 * x[1]
    expected_j0 = 2 * k01 + 2 * 1.44 * k02 + 2 * 1.2 * (k01 + k02) * math.cos(beat)
    j = rk.current(rk.evaluate(wave, x))
    assert abs(j[0] - expected_j0) < 1e-12
    assert j.dtype == np.float64


def test_mode_vs_grid_number():
    rng = np.random.default_rng(6)
    for _ in range(20):
        wave = random_wave(rng, n_modes=int(rng.integers(1, 5)))
        n_mode = rk.particle_number(wave)
        t = float(rng.uniform(0, 5))
        n_grid = rk.particle_number_grid(wave, t, 128)
        assert abs(n_grid - n_mode) < 1e-10 * max(1.0, abs(n_mode))


def test_number_is_conserved_on_grid():
    rng = np.random.default_rng(7)
    wave = random_wave(rng, n_modes=4)
    vals = [rk.particle_number_grid(wave, t, 256) for t in np.linspace(0, 7, 9)]
    assert np.ptp(vals) < 1e-10 * max(1.0, abs(vals[0]))


def test_physical_number_bounds():
    # the 1 + 1.2 fold wave has a negative-j0 stripe, so N_phys > N strictly
    wave = rk.ModeSum.from_weights(1.0, [[1.0], [0.0]], [1.0, 1.2])
    n = rk.particle_number_grid(wave, 0.0, 512)
    n_phys = rk.physical_particle_number(wave, 0.0, 4096)
    assert n_phys > abs(n) + 1e-3
    # single mode: |j0| = j0 everywhere, the two coincide
    mono = rk.ModeSum(1.0, [[2.0]], [0.9 + 0.1j])
    assert abs(
        rk.physical_particle_number(mono, 1.0, 64) - rk.particle_number(mono)
    ) < 1e-10


def test_periodicity_cell():
    w1 = rk.ModeSum(1.0, [[1.0], [0.0]], [1.0, 1.0])
    assert np.allclose(rk.periodicity_cell(w1), [TWO_PI])
    w2 = rk.ModeSum(1.0, [[0.5], [0.0]], [1.0, 1.0])
    assert np.allclose(rk.periodicity_cell(w2), [2 * TWO_PI])
    # beats 0.4, 0.7, 0.3 -> gcd 0.1
    w3 = rk.ModeSum(1.0, [[0.3], [0.7], [0.0]], [1.0, 1.0, 1.0])
    assert np.allclose(rk.periodicity_cell(w3), [10 * TWO_PI])
    mono = rk.ModeSum(1.0, [[2.0]], [1.0])
    assert np.allclose(rk.periodicity_cell(mono), [1.0])


def test_incommensurate_beats_rejected():
    # two beats with irrational ratio (1 and sqrt 2) have no common period;
    # a single irrational beat alone is still periodic and must be accepted
    wave = rk.ModeSum(1.0, [[0.0], [1.0], [math.sqrt(2.0)]], [1.0, 1.0, 1.0])
    with pytest.raises(rk.GridError):
        rk.periodicity_cell(wave)
    pair = rk.ModeSum(1.0, [[0.0], [math.sqrt(2.0)]], [1.0, 1.0])
    assert np.allclose(rk.periodicity_cell(pair), [TWO_PI / math.sqrt(2.0)])


def test_nyquist_rejection():
    wave = rk.ModeSum(1.0, [[3.0], [0.0]], [1.0, 1.0])
    with pytest.raises(rk.GridError):
        rk._cell_grid(wave, 2)
    rk._cell_grid(wave, 16)  # fine


def test_three_dimensional_smoke():
    rng = np.random.default_rng(8)
    wave = random_wave(rng, d=3, n_modes=3, kmax=2)
    x = np.concatenate([[0.4], rng.uniform(-1, 1, 3)])
    assert rk.kg_residual(wave, x) < 1e-12
    n_grid = rk.particle_number_grid(wave, 0.3, 24)
    assert abs(n_grid - rk.particle_number(wave)) < 1e-9 * max(
        1.0, rk.particle_number(wave)
    )


def test_dimension_validation():
    with pytest.raises(ValueError):
        rk.ModeSum(1.0, [[1.0, 0.0]], [1.0])  # d = 2
    with pytest.raises(ValueError):
        rk.ModeSum(-1.0, [[1.0]], [1.0])
    with pytest.raises(ValueError):
        rk.ModeSum(1.0, [[1.0], [1.0]], [1.0, 2.0])  # duplicate k
    with pytest.raises(ValueError):
        rk.evaluate(rk.ModeSum(1.0, [[1.0]], [1.0]), [0.0, 0.0, 0.0])


def test_polar_identities():
    rng = np.random.default_rng(9)
    wave = random_wave(rng)
    x = np.array([1.1, 0.4])
    s = rk.evaluate(wave, x)
    form = rk.polar(s, wave)
    assert abs(form.R - abs(s.psi)) < 1e-14
    assert abs(form.R * np.exp(1j * form.S) - s.psi) < 1e-14
    # dS = Im(dpsi / psi)
    assert np.max(np.abs(form.dS - np.imag(s.dpsi / s.psi))) < 1e-13


def test_polar_branch_tracking():
    # plane wave: S = -k0 t, should unwind smoothly past -2 pi
    wave = rk.ModeSum(1.0, [[0.0]], [1.0])
    prior = None
    for t in np.linspace(0.0, 10.0, 101):
        prior = rk.polar(rk.evaluate(wave, [t, 0.0]), wave, prior)
        assert abs(prior.S - (-1.0 * t)) < 1e-10


def test_node_raises():
    # standing wave, amplitude node at k x = pi/2
    wave = rk.ModeSum.from_weights(1.0, [[1.0], [-1.0]], [1.0, 1.0])
    node = np.array([0.0, math.pi / 2])
    with pytest.raises(rk.NodeError):
        rk.polar(rk.evaluate(wave, node), wave)
    with pytest.raises(rk.NodeError):
        rk.quantum_potential(wave, node)


def test_quantum_potential_against_fd():
    # independent route: box R / (2 m R) with R = |psi| differentiated by FD
    wave = rk.ModeSum.from_weights(1.0, [[1.0], [0.0]], [1.0, 1.2])
    x = np.array([0.8, 2.1])
    h = 1e-3

    def R(pt):
        return abs(rk.evaluate(wave, pt).psi)

    box = 0.0
    for mu, sign in ((0, 1.0), (1, -1.0)):
        e = np.zeros(2)
        e[mu] = h
        box += sign * (R(x + e) - 2 * R(x) + R(x - e)) / h**2
    q_fd = box / (2 * wave.m * R(x))
    assert abs(rk.quantum_potential(wave, x) - q_fd) < 1e-4


def test_hamilton_jacobi_and_continuity_hold():
    rng = np.random.default_rng(10)
    wave = rk.ModeSum.from_weights(1.0, [[1.0], [0.0]], [1.0, 1.2])
    for _ in range(20):
        x = rng.uniform(0, 5, size=2)
        if abs(rk.evaluate(wave, x).psi) ** 2 < 1e-3:
            continue
        assert abs(rk.hamilton_jacobi_residual(wave, x)) < 1e-7
        assert abs(rk.continuity_residual(wave, x)) < 1e-10


def test_boost_leaves_wave_invariant():
    rng = np.random.default_rng(11)
    wave = random_wave(rng)
    eta = 0.37
    boosted = rk.boost(wave, eta)
    lam = rk.boost_matrix(eta)
    for _ in range(10):
        x = rng.uniform(-2, 2, size=2)
        xp = rk.boost_point(x, eta)
        s, sp = rk.evaluate(wave, x), rk.evaluate(boosted, xp)
        assert abs(sp.psi - s.psi) < 1e-10
        # lower-index current transforms with the inverse-transpose block
        lam_lower = np.array([[lam[0, 0], -lam[0, 1]], [-lam[1, 0], lam[1, 1]]])
        assert np.max(np.abs(rk.current(sp) - lam_lower @ rk.current(s))) < 1e-10


def test_boost_requires_one_dimension():
    rng = np.random.default_rng(12)
    with pytest.raises(ValueError):
        rk.boost(random_wave(rng, d=3), 0.2)
