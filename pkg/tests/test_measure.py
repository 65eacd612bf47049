"""Pointer-coupling measurements: channels, Born statistics, collapse."""

import math

import numpy as np
import pytest

import bohmqft.measure as ms
import bohmqft.qftfun as qf
from bohmqft.qftfun import FunctionalState, LatticeSpec
from bohmqft.relkin import ModeSum


def one_mode_spec(n_max=4, lam=0.0):
    return LatticeSpec(L=2 * np.pi, M=1, m=1.0, lam=lam, n_max=n_max,
                       wavenumbers=(0,))


def born_state(spec):
    # sqrt(0.3)|0> + sqrt(0.7)|1>
    return FunctionalState.from_occupations(
        spec, {(0,): math.sqrt(0.3), (1,): math.sqrt(0.7)})


def born_pointer():
    # centers 0 and 14 for unit eigenvalue gap, 14 sigma apart
    return ms.PointerSpec(g=14.0, T=1.0, sigma_y=1.0)


def born_joint():
    spec = one_mode_spec()
    return ms.entangle(born_state(spec), ms.number_observable(spec),
                       born_pointer())


# ---------------------------------------------------------------------------
# pointer spec and channel decomposition


def test_number_observable():
    spec = LatticeSpec(L=2 * np.pi, M=2, m=1.0, lam=0.0, n_max=3,
                       wavenumbers=(1, -1))
    alpha, beta = ms.number_observable(spec)
    assert alpha == 0.0
    assert np.array_equal(beta, np.ones(2))


def test_pointer_validation_and_targeting():
    with pytest.raises(ValueError):
        ms.PointerSpec(g=0.0, T=1.0, sigma_y=1.0)
    with pytest.raises(ValueError):
        ms.PointerSpec(g=1.0, T=1.0, sigma_y=-2.0)
    p = ms.PointerSpec.targeting(gap=2.0, sigma_y=1.0, separation=10.0, T=1.0)
    assert p.g == pytest.approx(5.0)
    assert p.delta_target == pytest.approx(10.0)
    # g*T*gap hits the requested separation in pointer widths
    assert p.g * p.T * 2.0 == pytest.approx(10.0 * p.sigma_y)
    with pytest.raises(ValueError):
        ms.PointerSpec.targeting(gap=0.0, sigma_y=1.0, separation=10.0)


def test_chi_normalization_and_derivative():
    p = ms.PointerSpec(g=1.0, T=1.0, sigma_y=0.7)
    ys = np.linspace(-12, 12, 20001)
    assert np.trapezoid(p.chi(ys, 1.3) ** 2, ys) == pytest.approx(1.0, abs=1e-12)
    h = 1e-6
    fd = (p.chi(0.4 + h, 1.3) - p.chi(0.4 - h, 1.3)) / (2 * h)
    assert p.chi_prime(0.4, 1.3) == pytest.approx(fd, rel=1e-8)


def test_entangle_channels():
    joint = born_joint()
    ch = joint.channels
    assert np.array_equal(ch.labels, [0.0, 1.0])
    assert np.allclose(ch.coeffs, [0.3, 0.7], atol=1e-12)
    assert np.allclose(ch.centers, [0.0, 14.0])
    assert ch.ideal
    off = ch.overlap - np.eye(2)
    assert off.max() < 1e-10


def test_entangle_requires_free_hamiltonian():
    spec = one_mode_spec(lam=0.5)
    with pytest.raises(ValueError):
        ms.entangle(born_state(spec), ms.number_observable(spec),
                    born_pointer())


def test_entangle_validates_beta_shape():
    spec = one_mode_spec()
    with pytest.raises(ValueError):
        ms.entangle(born_state(spec), (0.0, np.ones(3)), born_pointer())


def test_degenerate_support_rejected():
    # |1,0> and |0,1> share total number 1: strict mode must refuse
    spec = LatticeSpec(L=2 * np.pi, M=2, m=1.0, lam=0.0, n_max=3,
                       wavenumbers=(1, -1))
    state = FunctionalState.from_occupations(
        spec, {(1, 0): 1.0, (0, 1): 1.0})
    with pytest.raises(ValueError, match="degenerate"):
        ms.entangle(state, ms.number_observable(spec), born_pointer())
    joint = ms.entangle(state, ms.number_observable(spec), born_pointer(),
                        strict=False)
    assert np.array_equal(joint.channels.labels, [1.0])
    assert joint.channels.coeffs[0] == pytest.approx(1.0)


def test_coeffs_and_centers_evolution():
    joint = born_joint()
    c0 = joint.coeffs_at(0.0)
    c1 = joint.coeffs_at(0.83)
    assert np.allclose(np.abs(c1), np.abs(c0), atol=1e-14)
    occ = qf.occupations(joint.spec)
    E = joint.spec.E0 + occ @ joint.spec.omegas
    assert np.allclose(c1, c0 * np.exp(-1j * E * 0.83), atol=1e-14)
    eigs = occ @ np.ones(1)
    assert np.array_equal(joint.centers_at(-2.0), np.zeros(len(eigs)))
    assert np.allclose(joint.centers_at(0.5), 14.0 * 0.5 * eigs)
    # window ends at T; centers freeze afterwards
    assert np.allclose(joint.centers_at(7.0), 14.0 * eigs)


# ---------------------------------------------------------------------------
# exact current


def test_joint_continuity_second_order():
    # mid-window probe; the in-window current carries the coupling flux
    joint = born_joint()
    res = [ms.continuity_residual_joint(joint, 0.5, [0.4], 7.2, fd_step=h)
           for h in (2e-4, 1e-4, 5e-5)]
    assert res[0] / res[1] == pytest.approx(4.0, abs=0.8)
    assert res[1] / res[2] == pytest.approx(4.0, abs=0.8)
    assert res[2] < 1e-5


def test_joint_continuity_post_window():
    joint = born_joint()
    res = ms.continuity_residual_joint(joint, 1.4, [0.3], 13.6, fd_step=1e-4)
    assert res < 1e-6


# ---------------------------------------------------------------------------
# ensemble statistics


def test_born_z_scores_formula():
    z = ms.born_z_scores(np.array([30, 70]), np.array([0.3, 0.7]), 100)
    assert np.allclose(z, 0.0)
    z = ms.born_z_scores(np.array([40, 60]), np.array([0.3, 0.7]), 100)
    assert z[0] == pytest.approx(0.1 / math.sqrt(0.21 / 100))
    # impossible channel with zero count: defined, not inf
    z = ms.born_z_scores(np.array([0, 100]), np.array([0.0, 1.0]), 100)
    assert z[0] == 0.0 and z[1] == 0.0


def test_run_ensemble_small():
    res = ms.run_ensemble(born_joint(), 200, seed=3)
    assert res.ok
    assert res.gap_hits == 0
    assert res.counts.sum() == 200
    assert np.all(np.abs(res.z_scores) < 4.0)
    assert np.allclose(res.frequencies, res.counts / 200)
    assert res.final_y.shape == (200,)
    assert res.final_q.shape == (200, 1)
    # every retained sample sits in the window it was assigned to
    for a, y in zip(res.assignment, res.final_y):
        assert abs(y - res.channels.centers[a]) <= 5.0


def test_ensemble_per_sample_substreams():
    # sample i depends on (seed, i) only, so prefixes agree across run sizes
    joint = born_joint()
    r1 = ms.run_ensemble(joint, 30, seed=12, n_steps=120)
    r2 = ms.run_ensemble(joint, 60, seed=12, n_steps=120)
    assert np.array_equal(r1.final_y, r2.final_y[:30])
    assert np.array_equal(r1.final_q, r2.final_q[:30])


def test_label_permutation_swaps_frequencies():
    spec = one_mode_spec()
    state = FunctionalState.from_occupations(
        spec, {(0,): math.sqrt(0.7), (1,): math.sqrt(0.3)})
    joint = ms.entangle(state, ms.number_observable(spec), born_pointer())
    res = ms.run_ensemble(joint, 500, seed=11)
    assert res.ok
    assert np.allclose(res.channels.coeffs, [0.7, 0.3], atol=1e-12)
    assert np.all(np.abs(res.z_scores) < 4.0)


def test_gap_hits_fail_the_run():
    # shrink the windows until settled samples start missing them
    spec = one_mode_spec()
    pointer = ms.PointerSpec(g=14.0, T=1.0, sigma_y=1.0,
                             channel_halfwidth=0.05)
    joint = ms.entangle(born_state(spec), ms.number_observable(spec), pointer)
    res = ms.run_ensemble(joint, 40, seed=2, n_steps=200)
    assert res.gap_hits > 0
    assert not res.ok


def test_overlapping_windows_raise():
    spec = one_mode_spec()
    pointer = ms.PointerSpec(g=0.5, T=1.0, sigma_y=1.0)
    joint = ms.entangle(born_state(spec), ms.number_observable(spec), pointer)
    assert not joint.channels.ideal
    with pytest.raises(RuntimeError, match="overlap"):
        ms.run_ensemble(joint, 10, seed=0, n_steps=50)


def test_sample_initial_mode_guard():
    spec = LatticeSpec(L=2 * np.pi, M=3, m=1.0, lam=0.0, n_max=2,
                       wavenumbers=(0, 1, -1))
    state = FunctionalState.from_occupations(spec, {(0, 0, 0): 1.0})
    joint = ms.entangle(state, ms.number_observable(spec), born_pointer())
    with pytest.raises(ValueError, match="M <= 2"):
        ms._sample_initial(joint, 4, seed=0)


# ---------------------------------------------------------------------------
# channel autonomy


def test_conditional_velocity_gap_small():
    # after the window, deep inside channel 1: crosstalk from the empty
    # channel is Gaussian-suppressed far below the working tolerance
    joint = born_joint()
    gap = ms.conditional_velocity_gap(joint, 1.0, [0.4], 13.5)
    assert gap < 1e-6
    with pytest.raises(ValueError, match="window"):
        ms.conditional_velocity_gap(joint, 1.0, [0.4], 7.0)


def test_empty_channel_is_inert():
    # configuration riding channel 1 moves exactly as if channel 0 were
    # absent; q = 0 is excluded (h_1 node, both velocity fields diverge)
    joint = born_joint()
    spec = joint.spec
    sub = FunctionalState.from_occupations(spec, {(1,): 1.0})
    sub_joint = ms.JointState(fstate=sub, pointer=joint.pointer,
                              alpha=joint.alpha, beta=joint.beta,
                              channels=joint.channels)
    Q = np.array([[0.45], [-0.45], [0.9], [-0.9]])
    worst = 0.0
    for t in (0.7, 0.9, 1.0):
        for off in (-0.3, 0.3):
            Y = np.full(4, 14.0 * min(t, 1.0) + off)
            vq_f, vy_f, _ = ms._velocities(joint, t, Q, Y)
            vq_s, vy_s, _ = ms._velocities(sub_joint, t, Q, Y)
            worst = max(worst,
                        float(np.max(np.abs(vq_f - vq_s))),
                        float(np.max(np.abs(vy_f - vy_s))))
    assert worst < 1e-8


# ---------------------------------------------------------------------------
# momentum channels for mode sums


def test_momentum_tv_plane_vs_standing():
    plane = ModeSum(1.0, [[1.0]], [1.0])
    cmp_p = ms.momentum_distribution(plane)
    assert cmp_p.total_variation < 0.05
    standing = ModeSum(1.0, [[1.0], [-1.0]], [1.0, 1.0])
    cmp_s = ms.momentum_distribution(standing)
    assert cmp_s.total_variation > 0.95
    with pytest.raises(ValueError):
        ms.momentum_distribution(ModeSum(1.0, [[1.0, 0.0, 0.0]], [1.0]))


def test_momentum_measurement_frequencies():
    wave = ModeSum(1.0, [[1.0], [-1.0]], [2.0, 1.0])
    pointer = ms.PointerSpec(g=5.0, T=1.0, sigma_y=1.0)
    res = ms.momentum_measurement(wave, pointer, 400, seed=5)
    assert res.ok
    assert np.array_equal(res.channels.labels, [-1.0, 1.0])
    assert np.allclose(res.channels.coeffs, [0.2, 0.8])
    assert np.all(np.abs(res.z_scores) < 4.0)
    assert res.counts.sum() + res.gap_hits == 400


# ---------------------------------------------------------------------------
# effectivity collapse


def collapse_state():
    spec = one_mode_spec()
    return FunctionalState.from_occupations(
        spec, {(0,): 1.0, (2,): 1.0})


def collapse_pointer():
    # eigenvalue gap 2, so centers sit 14 sigma apart
    return ms.PointerSpec(g=7.0, T=1.0, sigma_y=1.0)


def test_effectivity_series_partition():
    state = collapse_state()
    joint = ms.entangle(state, ms.number_observable(state.spec),
                        collapse_pointer())
    Q = np.array([[0.3], [-0.7], [1.1]])
    Y = np.array([0.1, -0.2, 0.05])
    e = ms._effectivity_series(joint, 0.0, Q, Y)
    assert e.shape == (state.spec.M * state.spec.n_max + 1, 3)
    assert np.allclose(e.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(e >= 0.0)
    # only sectors 0 and 2 carry support
    assert np.allclose(e[[1, 3, 4]], 0.0)


def test_collapse_single_runs():
    state = collapse_state()
    pointer = collapse_pointer()
    for seed in (0, 1, 2):
        rec = ms.effectivity_collapse(state, pointer, seed=seed)
        assert rec.collapsed
        assert rec.channel in (0, 2)
        assert rec.final_e[rec.channel] > 1 - 1e-6
        assert rec.e_series.shape[0] == 5
        assert len(rec.ts) == len(rec.y_path) == rec.e_series.shape[1]
        # starts genuinely undecided, ends decided
        e0 = rec.e_series[rec.channel, 0]
        assert 1e-6 < e0 < 1 - 1e-6


def test_collapse_ensemble_statistics():
    state = collapse_state()
    top, collapsed, counts, z = ms.collapse_ensemble(
        state, collapse_pointer(), n_runs=60, seed=9)
    assert collapsed.all()
    assert np.all(np.isin(top, [0, 2]))
    assert counts.sum() == 60
    assert np.all(np.abs(z) < 4.0)


def test_collapse_is_idempotent():
    # re-measuring a collapsed state reproduces its sector with certainty
    state = collapse_state()
    pointer = collapse_pointer()
    rec = ms.effectivity_collapse(state, pointer, seed=4)
    assert rec.collapsed
    occ = qf.occupations(state.spec)
    mask = occ.sum(axis=1) == rec.channel
    c = np.where(mask, state.c, 0.0)
    projected = FunctionalState(state.spec, 0.0,
                                c / math.sqrt(float(np.sum(np.abs(c) ** 2))))
    top, collapsed, counts, _ = ms.collapse_ensemble(
        projected, pointer, n_runs=20, seed=123)
    assert collapsed.all()
    assert counts[rec.channel] == 20
