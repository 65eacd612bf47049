"""Scenario runner: batch configs in, delimited data tables + manifest out.

Configs are TOML with a [scenario] section (kind, seed, output_dir) and a
[params] section whose keys depend on the kind; [check] holds thresholds for
check mode.  Built-in presets cover every acceptance scenario; `run --preset
fig1` and `run --config my.toml` go through the same pipeline.

Every run writes plain numeric tab-separated tables (format %.17g, '#'
comment headers, no timestamps) plus a manifest.json written atomically at
the end (config hash, code version, seed, wall times, file list).  Identical
config + seed reproduces the data files byte for byte; the manifest differs
only in its wall times.

All randomness flows from the single 64-bit seed through named substreams
(sample i of an ensemble uses numpy default_rng([seed, i])).

Exit codes: 0 success, 2 config/validation error (including Nyquist
rejection), 3 numerical failure (node hit, diverged run, gap-hit overflow),
4 threshold failure in check mode.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from . import extract as ex
from . import measure as ms
from . import qftfun as qf
from . import relkin as rk
from . import traject as tj

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4

OUT_ENV_VAR = "BOHMQFT_OUT"

KINDS = (
    "evolve", "trajectory", "fig1", "nonrel", "qft-evolve",
    "extract", "measure", "born", "collapse",
)


class ConfigError(ValueError):
    """Configuration or schema problem; maps to exit code 2."""


# ---------------------------------------------------------------------------
# presets


def _fold_wave_params():
    wave = tj.fold_wave()
    return {
        "m": wave.m,
        "ks": [list(map(float, k)) for k in wave.ks],
        "weights": [[float(np.real(w)), float(np.imag(w))] for w in wave.weights],
    }


PRESETS = {
    "fig1": {
        "description": "frozen two-mode fold: creation/annihilation pair and "
                       "the three-crossing time slice",
        "scenario": {"kind": "fig1", "seed": 0},
        "params": {
            **_fold_wave_params(),
            "x0": list(tj.FOLD_X0),
            "tau_span": list(tj.FOLD_TAU_SPAN),
            "slice_t": tj.FOLD_SLICE_T,
        },
        "check": {"count": 3, "net": 1, "signs": [1, -1, 1], "j0_tol": 1e-8},
    },
    "two-mode-drift": {
        "description": "two-mode wave with a negative-density stripe: "
                       "densities and the three number integrals over time",
        "scenario": {"kind": "evolve", "seed": 0},
        "params": {
            "m": 1.0,
            "ks": [[1.0], [0.0]],
            "weights": [[1.0, 0.0], [1.2, 0.0]],
            "times": [0.0, 0.4, 0.8, 1.2, 1.6, 2.0],
            "n_points": 64,
        },
        "check": {"dn_rel_tol": 1e-8, "require_nphys_exceeds": True},
    },
    "fold-trajectory": {
        "description": "proper-time trajectory through the fold with "
                       "reversal events and residual diagnostics",
        "scenario": {"kind": "trajectory", "seed": 0},
        "params": {
            **_fold_wave_params(),
            "x0": list(tj.FOLD_X0),
            "tau_span": list(tj.FOLD_TAU_SPAN),
        },
        "check": {"hj_tol": 1e-7, "expect_reversals": 2},
    },
    "nonrel-order": {
        "description": "slow two-mode packets: KG vs Schroedinger guidance "
                       "deviation order in the velocity parameter",
        "scenario": {"kind": "nonrel", "seed": 0},
        "params": {
            "eps": [0.1, 0.05, 0.025],
            "weights": [1.0, 0.8],
            "x0": [0.3],
            "t_scale": 2.0,
        },
        "check": {"order_min": 1.7, "order_max": 2.3},
    },
    "free-field": {
        "description": "free mode lattice: coefficient moduli frozen, "
                       "phases advance at the exact eigenfrequencies",
        "scenario": {"kind": "qft-evolve", "seed": 0},
        "params": {
            "L": 2 * math.pi, "M": 2, "m": 1.0, "lam": 0.0, "n_max": 5,
            "state": {"1,2": [1.0, 0.0], "0,0": [1.0, 0.0]},
            "times": [0.0, 0.7, 1.4, 2.1, 2.8, 3.5],
        },
        "check": {"mod_tol": 1e-10, "phase_tol": 1e-8},
    },
    "quartic-shift": {
        "description": "quartic self-coupling moves total-number sector "
                       "weights; doubled cutoff confirms resolution",
        "scenario": {"kind": "qft-evolve", "seed": 0},
        "params": {
            "L": 2 * math.pi, "M": 2, "m": 1.0, "lam": 0.5, "n_max": 13,
            "basis_budget": 1000000,
            "state": {"1,1": [1.0, 0.0]},
            "times": [0.0, 0.5, 1.0, 1.5, 2.0],
        },
        "check": {"shift_min": 1e-3, "truncation_rel_tol": 1e-4},
    },
    "one-particle": {
        "description": "traveling one-quantum state: extracted wave on a "
                       "grid, guidance velocity, quadrature cross-check",
        "scenario": {"kind": "extract", "seed": 0},
        "params": {
            "L": 2 * math.pi, "M": 2, "m": 1.0, "lam": 0.0, "n_max": 5,
            "wavenumbers": [1, -1],
            "state": {"1,0": [1.0, 0.0], "0,1": [0.0, 1.0]},
            "n": 1, "t": 0.6, "n_points": 60,
        },
        "check": {"route_tol": 1e-8, "orthogonality_tol": 1e-10},
    },
    "standing-vs-plane": {
        "description": "Bohmian vs spectral momentum distributions for a "
                       "plane wave and a standing wave",
        "scenario": {"kind": "measure", "seed": 0},
        "params": {
            "m": 1.0,
            "plane_k": 0.7,
            "standing_k": 0.7,
            "n_points": 4096,
            "n_bins": 201,
        },
        "check": {"plane_tv_max": 0.05, "standing_tv_min": 0.95},
    },
    "born-3070": {
        "description": "number measurement of sqrt(0.3)|0> + sqrt(0.7)|1>: "
                       "Born frequencies from the equivariant flow",
        "scenario": {"kind": "born", "seed": 42},
        "params": {
            "L": 2 * math.pi, "M": 1, "m": 1.0, "n_max": 4,
            "state": {"0": [0.5477225575051661, 0.0], "1": [0.8366600265340756, 0.0]},
            "g": 14.0, "T": 1.0, "sigma_y": 1.0,
            "n_samples": 10000, "n_steps": 400,
        },
        "check": {"z_max": 4.0, "gap_frac_max": 0.001},
    },
    "collapse-02": {
        "description": "(|0> + |2 quanta>)/sqrt(2) under a number pointer: "
                       "every run collapses one effectivity to 1",
        "scenario": {"kind": "collapse", "seed": 7},
        "params": {
            "L": 2 * math.pi, "M": 1, "m": 1.0, "n_max": 4,
            "state": {"0": [1.0, 0.0], "2": [1.0, 0.0]},
            "g": 7.0, "T": 1.0, "sigma_y": 1.0,
            "n_runs": 1000, "n_steps": 400, "n_record": 81,
        },
        "check": {"collapse_tol": 1e-6, "z_max": 4.0},
    },
}


# ---------------------------------------------------------------------------
# config plumbing


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config does not parse: {e}") from e


def resolve_scenario(config: dict, seed_override=None, out_override=None,
                     name: str = "scenario") -> dict:
    if not isinstance(config, dict) or "scenario" not in config:
        raise ConfigError("config needs a [scenario] section")
    sc = dict(config["scenario"])
    kind = sc.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"scenario.kind must be one of {KINDS}, got {kind!r}")
    seed = seed_override if seed_override is not None else sc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    out_dir = (
        out_override
        or os.environ.get(OUT_ENV_VAR)
        or sc.get("output_dir")
        or os.path.join(os.getcwd(), "bohmqft-runs", name)
    )
    params = config.get("params")
    if not isinstance(params, dict) or not params:
        raise ConfigError("config needs a nonempty [params] section")
    return {
        "name": name,
        "kind": kind,
        "seed": seed,
        "out_dir": str(out_dir),
        "params": params,
        "check": dict(config.get("check", {})),
    }


def config_hash(scenario: dict) -> str:
    payload = {k: scenario[k] for k in ("kind", "seed", "params", "check")}
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def _require(params: dict, keys, kind: str):
    missing = [k for k in keys if k not in params]
    if missing:
        raise ConfigError(f"{kind}: missing params {missing}")


def _complex_list(raw, what: str) -> np.ndarray:
    out = []
    for item in raw:
        if isinstance(item, (int, float)):
            out.append(complex(item))
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            out.append(complex(item[0], item[1]))
        else:
            raise ConfigError(f"{what}: entries must be numbers or [re, im] pairs")
    return np.array(out, dtype=complex)


def _build_modesum(params: dict) -> rk.ModeSum:
    _require(params, ("m", "ks", "weights"), "mode sum")
    try:
        return rk.ModeSum.from_weights(
            params["m"], params["ks"], _complex_list(params["weights"], "weights")
        )
    except rk.GridError:
        raise
    except ValueError as e:
        raise ConfigError(f"mode sum: {e}") from e


def _build_lattice(params: dict) -> qf.LatticeSpec:
    _require(params, ("L", "M", "m", "n_max"), "lattice")
    kw = {}
    if "wavenumbers" in params:
        kw["wavenumbers"] = tuple(params["wavenumbers"])
    if "basis_budget" in params:
        kw["basis_budget"] = int(params["basis_budget"])
    try:
        return qf.LatticeSpec(
            L=float(params["L"]), M=int(params["M"]), m=float(params["m"]),
            lam=float(params.get("lam", 0.0)), n_max=int(params["n_max"]), **kw
        )
    except ValueError as e:
        raise ConfigError(f"lattice: {e}") from e


def _build_state(spec: qf.LatticeSpec, raw: dict, t: float = 0.0) -> qf.FunctionalState:
    if not isinstance(raw, dict) or not raw:
        raise ConfigError("state: need a table of occupation -> amplitude")
    weights = {}
    for key, amp in raw.items():
        try:
            occ = tuple(int(s) for s in str(key).split(","))
        except ValueError as e:
            raise ConfigError(f"state: bad occupation key {key!r}") from e
        if isinstance(amp, (int, float)):
            weights[occ] = complex(amp)
        elif isinstance(amp, (list, tuple)) and len(amp) == 2:
            weights[occ] = complex(amp[0], amp[1])
        else:
            raise ConfigError(f"state: amplitude for {key!r} must be number or [re, im]")
    try:
        return qf.FunctionalState.from_occupations(spec, weights, t=t)
    except ValueError as e:
        raise ConfigError(f"state: {e}") from e


# ---------------------------------------------------------------------------
# output plumbing


def _write_table(path: str, columns: str, rows: np.ndarray, title: str):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    np.savetxt(path, rows, fmt="%.17g", delimiter="\t",
               header=f"bohmqft {title}\ncolumns: {columns}")


def _write_manifest(out_dir: str, scenario: dict, files, extras: dict,
                    t_start: float, t_end: float):
    manifest = {
        "config_hash": config_hash(scenario),
        "code_version": __version__,
        "kind": scenario["kind"],
        "name": scenario["name"],
        "seed": scenario["seed"],
        "start_time": t_start,
        "end_time": t_end,
        "outputs": sorted(files),
        "extras": extras,
    }
    tmp = os.path.join(out_dir, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))


# ---------------------------------------------------------------------------
# runners: scenario -> (files, extras) written into out_dir


def _run_evolve(sc: dict, out: str):
    p = sc["params"]
    wave = _build_modesum(p)
    times = [float(t) for t in p.get("times", [0.0])]
    n_points = int(p.get("n_points", 64))
    xs = rk._cell_grid(wave, n_points)
    dens_rows, num_rows = [], []
    for t in times:
        psi, dpsi = rk.evaluate_grid(wave, t, xs)
        j0 = rk.current_grid(psi, dpsi)[:, 0]
        for x, j, a in zip(xs, j0, np.abs(psi) ** 2):
            dens_rows.append([t, *x, j, a])
        num_rows.append([
            t, rk.particle_number(wave), rk.particle_number_grid(wave, t, n_points),
            rk.physical_particle_number(wave, t, n_points),
        ])
    xcols = " ".join(f"x{i}" for i in range(wave.d))
    _write_table(os.path.join(out, "density.tsv"),
                 f"t {xcols} j0 abs_psi_sq", dens_rows, "evolve density")
    _write_table(os.path.join(out, "number.tsv"),
                 "t n_mode n_grid n_phys", num_rows, "evolve number integrals")
    arr = np.array(num_rows)
    extras = {
        "max_dn_rel": float(np.max(np.abs(arr[:, 2] - arr[0, 1])) / abs(arr[0, 1])),
        "nphys_exceeds_n": bool(np.all(arr[:, 3] >= np.abs(arr[:, 2]) - 1e-12)
                                and np.any(arr[:, 3] > np.abs(arr[:, 2]) + 1e-9)),
    }
    return ["density.tsv", "number.tsv"], extras


def _trajectory_tables(wave, traj, out):
    rows = [
        [pt.tau, pt.x[0], *pt.x[1:], pt.u[0], *pt.u[1:], pt.j0_sign]
        for pt in traj.points
    ]
    d = wave.d
    xcols = " ".join(f"x{i}" for i in range(d))
    ucols = " ".join(f"u{i}" for i in range(d))
    _write_table(os.path.join(out, "trajectory.tsv"),
                 f"tau t {xcols} u_t {ucols} j0_sign", rows, "trajectory")
    ev_rows = [[tau, x[0], *x[1:]] for tau, x in traj.reversal_events]
    if ev_rows:
        _write_table(os.path.join(out, "events.tsv"),
                     f"tau t {xcols}", ev_rows, "time-reversal events")
        return ["trajectory.tsv", "events.tsv"]
    return ["trajectory.tsv"]


def _integrate_checked(wave, p):
    _require(p, ("x0", "tau_span"), "trajectory")
    traj = tj.integrate(wave, p["x0"], tuple(p["tau_span"]))
    if traj.status != "completed":
        raise RuntimeError(f"trajectory ended early: {traj.status}")
    return traj


def _run_trajectory(sc: dict, out: str):
    p = sc["params"]
    wave = _build_modesum(p)
    traj = _integrate_checked(wave, p)
    files = _trajectory_tables(wave, traj, out)
    extras = {"status": traj.status, "n_reversals": len(traj.reversal_events)}
    return files, extras


def _run_fig1(sc: dict, out: str):
    p = sc["params"]
    wave = _build_modesum(p)
    _require(p, ("slice_t",), "fig1")
    traj = _integrate_checked(wave, p)
    rec = tj.crossings(traj, float(p["slice_t"]))
    files = _trajectory_tables(wave, traj, out)
    cross_rows = [
        [i, tau, float(p["slice_t"]), *pos, sign]
        for i, (tau, pos, sign) in enumerate(zip(rec.taus, rec.positions, rec.signs))
    ]
    _write_table(os.path.join(out, "crossings.tsv"),
                 "index tau t_star x sign", cross_rows, "slice crossings")
    files.append("crossings.tsv")
    ev_j0 = [
        float(np.abs(rk.current(rk.evaluate(wave, x))[0]))
        for _, x in traj.reversal_events
    ]
    extras = {
        "count": rec.count, "net": rec.net,
        "signs": [int(s) for s in rec.signs],
        "event_j0": ev_j0,
        "n_reversals": len(traj.reversal_events),
    }
    return files, extras


def _run_nonrel(sc: dict, out: str):
    p = sc["params"]
    _require(p, ("eps", "weights", "x0"), "nonrel")
    t_scale = float(p.get("t_scale", 2.0))
    rows = []
    for eps in p["eps"]:
        eps = float(eps)
        wave = rk.ModeSum.from_weights(
            1.0, [[eps], [-0.5 * eps]], _complex_list(p["weights"], "weights")
        )
        dev, _ = tj.nonrel_compare(wave, p["x0"], (0.0, t_scale / eps))
        rows.append([eps, dev])
    _write_table(os.path.join(out, "nonrel.tsv"), "eps deviation",
                 rows, "nonrelativistic deviation")
    arr = np.array(rows)
    orders = np.log(arr[:-1, 1] / arr[1:, 1]) / np.log(arr[:-1, 0] / arr[1:, 0])
    _write_table(os.path.join(out, "orders.tsv"), "order", orders[:, None],
                 "pairwise convergence orders")
    return ["nonrel.tsv", "orders.tsv"], {"orders": [float(o) for o in orders]}


def _sector_rows(spec, state, times):
    coef_rows, sec_rows = [], []
    for t in times:
        stt = qf.state_at(state, float(t))
        for idx, c in enumerate(stt.c):
            if abs(c) > 1e-14:
                coef_rows.append([t, idx, c.real, c.imag, abs(c)])
        for n, w in enumerate(qf.sector_weights(stt)):
            sec_rows.append([t, n, w])
    return coef_rows, sec_rows


def _run_qft_evolve(sc: dict, out: str):
    p = sc["params"]
    spec = _build_lattice(p)
    state = _build_state(spec, p.get("state", {}))
    times = [float(t) for t in p.get("times", [0.0, 1.0])]
    coef_rows, sec_rows = _sector_rows(spec, state, times)
    _write_table(os.path.join(out, "coefficients.tsv"),
                 "t idx re im abs", coef_rows, "basis coefficients")
    _write_table(os.path.join(out, "sectors.tsv"),
                 "t n weight", sec_rows, "total-occupation sector weights")
    sec = np.array(sec_rows)
    w0 = sec[sec[:, 0] == times[0], 2]
    shift = max(
        float(np.max(np.abs(sec[sec[:, 0] == t, 2] - w0))) for t in times
    )
    extras = {"sector_shift": shift}
    return ["coefficients.tsv", "sectors.tsv"], extras


def _run_extract(sc: dict, out: str):
    p = sc["params"]
    spec = _build_lattice(p)
    state = _build_state(spec, p.get("state", {}))
    n = int(p.get("n", 1))
    t = float(p.get("t", 0.0))
    n_points = int(p.get("n_points", 60))
    xs = np.linspace(0.0, spec.L, n_points, endpoint=False)
    fixed = [float(v) for v in p.get("fixed_positions", [])]
    if len(fixed) != n - 1:
        raise ConfigError("extract: need n-1 fixed_positions")
    rows = []
    for x in xs:
        pos = np.array([x] + fixed)
        val = ex.n_particle_wf(state, n, pos, t)
        vel = ex.particle_velocity(state, n, 0, pos, t)
        rows.append([x, val.real, val.imag, abs(val), vel])
    _write_table(os.path.join(out, "wavefunction.tsv"),
                 "x re im abs velocity", rows, f"{n}-particle wave")
    return ["wavefunction.tsv"], {"n": n, "t": t}


def _run_measure(sc: dict, out: str):
    p = sc["params"]
    _require(p, ("m", "plane_k", "standing_k"), "measure")
    m = float(p["m"])
    n_points = int(p.get("n_points", 4096))
    n_bins = int(p.get("n_bins", 201))
    plane = rk.ModeSum.from_weights(m, [[float(p["plane_k"])]], [1.0])
    standing = rk.ModeSum.from_weights(
        m, [[float(p["standing_k"])], [-float(p["standing_k"])]], [1.0, 1.0]
    )
    files = []
    tvs = {}
    for label, wave in (("plane", plane), ("standing", standing)):
        mc = ms.momentum_distribution(wave, n_points=n_points, n_bins=n_bins)
        rows = np.column_stack([mc.p_edges[:-1], mc.p_edges[1:], mc.bohm, mc.spectral])
        fname = f"momentum_{label}.tsv"
        _write_table(os.path.join(out, fname),
                     "p_lo p_hi bohm spectral", rows, f"momentum comparison {label}")
        files.append(fname)
        tvs[label] = mc.total_variation
    return files, {"tv": tvs}


def _born_pointer(p: dict) -> ms.PointerSpec:
    return ms.PointerSpec(g=float(p.get("g", 14.0)), T=float(p.get("T", 1.0)),
                          sigma_y=float(p.get("sigma_y", 1.0)))


def _run_born(sc: dict, out: str):
    p = sc["params"]
    spec = _build_lattice(p)
    state = _build_state(spec, p.get("state", {}))
    pointer = _born_pointer(p)
    joint = ms.entangle(state, ms.number_observable(spec), pointer)
    res = ms.run_ensemble(joint, int(p.get("n_samples", 10000)), sc["seed"],
                          n_steps=int(p.get("n_steps", 400)))
    ch = res.channels
    if not res.ok:
        raise RuntimeError(
            f"ensemble not trustworthy: ideal={ch.ideal} gap_hits={res.gap_hits}"
        )
    rows = np.column_stack([ch.labels, ch.coeffs, res.counts,
                            res.frequencies, res.z_scores])
    _write_table(os.path.join(out, "channels.tsv"),
                 "label prob count freq z", rows, "channel frequencies")
    srows = np.column_stack([
        np.arange(res.n_samples), res.final_y, res.assignment,
    ])
    _write_table(os.path.join(out, "samples.tsv"),
                 "sample y_final channel", srows, "ensemble samples")
    extras = {
        "z_scores": [float(z) for z in res.z_scores],
        "gap_hits": res.gap_hits, "ideal": ch.ideal, "ok": res.ok,
    }
    return ["channels.tsv", "samples.tsv"], extras


def _run_collapse(sc: dict, out: str):
    p = sc["params"]
    spec = _build_lattice(p)
    state = _build_state(spec, p.get("state", {}))
    pointer = _born_pointer(p)
    tol = float(sc["check"].get("collapse_tol", 1e-6))
    rec = ms.effectivity_collapse(state, pointer, seed=sc["seed"],
                                  n_steps=int(p.get("n_steps", 400)),
                                  n_record=int(p.get("n_record", 81)), tol=tol)
    n_runs = int(p.get("n_runs", 1000))
    top, collapsed, counts, z = ms.collapse_ensemble(
        state, pointer, n_runs, sc["seed"], n_steps=int(p.get("n_steps", 400)),
        tol=tol)
    series = np.column_stack([rec.ts, rec.e_series.T])
    ecols = " ".join(f"e{n}" for n in range(rec.e_series.shape[0]))
    _write_table(os.path.join(out, "series.tsv"), f"t {ecols}",
                 series, "effectivity along one run")
    runs_rows = np.column_stack([np.arange(n_runs), top, collapsed.astype(float)])
    _write_table(os.path.join(out, "runs.tsv"), "run sector collapsed",
                 runs_rows, "per-run collapse outcomes")
    weights = qf.sector_weights(state)
    split_rows = np.column_stack([np.arange(len(counts)), weights, counts, z])
    _write_table(os.path.join(out, "splits.tsv"), "sector weight count z",
                 split_rows, "sector split statistics")
    extras = {
        "all_collapsed": bool(collapsed.all()),
        "split_z": [float(v) for v in z[weights > 0]],
        "first_run_channel": rec.channel,
    }
    return ["series.tsv", "runs.tsv", "splits.tsv"], extras


RUNNERS = {
    "evolve": _run_evolve,
    "trajectory": _run_trajectory,
    "fig1": _run_fig1,
    "nonrel": _run_nonrel,
    "qft-evolve": _run_qft_evolve,
    "extract": _run_extract,
    "measure": _run_measure,
    "born": _run_born,
    "collapse": _run_collapse,
}


# ---------------------------------------------------------------------------
# check mode: per-kind threshold evaluation


def _check_rows(sc: dict, extras: dict, out: str):
    kind, chk, p = sc["kind"], sc["check"], sc["params"]
    rows = []

    def add(name, value, ok):
        rows.append((name, value, bool(ok)))

    if kind == "fig1":
        add("crossing_count", extras["count"], extras["count"] == chk.get("count", 3))
        add("crossing_net", extras["net"], extras["net"] == chk.get("net", 1))
        signs_ok = extras["signs"] == list(chk.get("signs", [1, -1, 1]))
        add("crossing_signs", float(signs_ok), signs_ok)
        j0max = max(extras["event_j0"]) if extras["event_j0"] else math.inf
        add("event_j0", j0max, j0max < chk.get("j0_tol", 1e-8))
        add("event_pair", extras["n_reversals"], extras["n_reversals"] == 2)
    elif kind == "evolve":
        add("dn_rel", extras["max_dn_rel"],
            extras["max_dn_rel"] < chk.get("dn_rel_tol", 1e-8))
        if chk.get("require_nphys_exceeds", False):
            add("nphys_exceeds", float(extras["nphys_exceeds_n"]),
                extras["nphys_exceeds_n"])
    elif kind == "trajectory":
        wave = _build_modesum(p)
        traj = tj.integrate(wave, p["x0"], tuple(p["tau_span"]))
        taus = np.linspace(traj.taus[0], traj.taus[-1], 64)
        hj = max(
            abs(rk.hamilton_jacobi_residual(wave, traj.position(t)))
            for t in taus
        )
        add("hj_residual", hj, hj < chk.get("hj_tol", 1e-7))
        if "expect_reversals" in chk:
            add("n_reversals", extras["n_reversals"],
                extras["n_reversals"] == chk["expect_reversals"])
    elif kind == "nonrel":
        orders = extras["orders"]
        lo, hi = chk.get("order_min", 1.7), chk.get("order_max", 2.3)
        for i, o in enumerate(orders):
            add(f"order_{i}", o, lo <= o <= hi)
    elif kind == "qft-evolve":
        spec = _build_lattice(p)
        state = _build_state(spec, p.get("state", {}))
        times = [float(t) for t in p.get("times", [0.0, 1.0])]
        if spec.lam == 0.0:
            occ = qf.occupations(spec)
            E = spec.E0 + occ @ spec.omegas
            mod_err = phase_err = 0.0
            for t in times:
                stt = qf.state_at(state, t)
                mod_err = max(mod_err, float(np.max(np.abs(np.abs(stt.c) - np.abs(state.c)))))
                expect = state.c * np.exp(-1j * E * (t - state.t))
                phase_err = max(phase_err, float(np.max(np.abs(stt.c - expect))))
            add("moduli_frozen", mod_err, mod_err < chk.get("mod_tol", 1e-10))
            add("phase_advance", phase_err, phase_err < chk.get("phase_tol", 1e-8))
        else:
            shift = extras["sector_shift"]
            add("sector_shift", shift, shift > chk.get("shift_min", 1e-3))
            doubled = qf.LatticeSpec(
                L=spec.L, M=spec.M, m=spec.m, lam=spec.lam, n_max=2 * spec.n_max,
                wavenumbers=spec.wavenumbers,
                basis_budget=max(spec.basis_budget, (2 * spec.n_max + 1) ** spec.M),
            )
            st2 = _build_state(doubled, p.get("state", {}))
            t_last = times[-1]
            w_a = qf.sector_weights(qf.state_at(state, t_last))
            w_b = qf.sector_weights(qf.state_at(st2, t_last))[: len(w_a)]
            rel = float(np.max(np.abs(w_b - w_a))) / max(shift, 1e-300)
            ok = rel < chk.get("truncation_rel_tol", 1e-4)
            add("truncation_rel", rel, ok)
            if not ok:
                raise RuntimeError(
                    f"under-resolved truncation: doubling n_max moves sector "
                    f"weights by {rel:.3e} of the reported shift"
                )
    elif kind == "extract":
        spec = _build_lattice(p)
        state = _build_state(spec, p.get("state", {}))
        n, t = int(p.get("n", 1)), float(p.get("t", 0.0))
        rng = np.random.default_rng([sc["seed"], 1])
        worst = 0.0
        for _ in range(100):
            pos = rng.uniform(0.0, spec.L, size=n)
            a = ex.n_particle_wf(state, n, pos, t)
            b = ex.gh_n_particle_wf(state, n, pos, t)
            worst = max(worst, abs(a - b))
        add("route_agreement", worst, worst < chk.get("route_tol", 1e-8))
        orth = max(
            ex.orthogonality_check(spec, 1, 2, n_samples=8, seed=sc["seed"]),
            ex.orthogonality_check(spec, 0, 2, n_samples=8, seed=sc["seed"] + 1),
        )
        add("orthogonality", orth, orth < chk.get("orthogonality_tol", 1e-10))
    elif kind == "measure":
        add("plane_tv", extras["tv"]["plane"],
            extras["tv"]["plane"] < chk.get("plane_tv_max", 0.05))
        add("standing_tv", extras["tv"]["standing"],
            extras["tv"]["standing"] > chk.get("standing_tv_min", 0.95))
    elif kind == "born":
        zmax = max(abs(z) for z in extras["z_scores"])
        add("born_z", zmax, zmax < chk.get("z_max", 4.0))
        frac = extras["gap_hits"] / max(int(p.get("n_samples", 1)), 1)
        add("gap_fraction", frac, frac <= chk.get("gap_frac_max", 0.001))
        add("ideal_channels", float(extras["ideal"]), extras["ideal"])
    elif kind == "collapse":
        add("all_collapsed", float(extras["all_collapsed"]), extras["all_collapsed"])
        zmax = max(abs(z) for z in extras["split_z"])
        add("split_z", zmax, zmax < chk.get("z_max", 4.0))
    return rows


# ---------------------------------------------------------------------------
# entry points


def _execute(scenario: dict, do_check: bool) -> int:
    out = scenario["out_dir"]
    os.makedirs(out, exist_ok=True)
    t_start = time.time()
    files, extras = RUNNERS[scenario["kind"]](scenario, out)
    rc = EXIT_OK
    if do_check:
        rows = _check_rows(scenario, extras, out)
        lines = ["# bohmqft check", "# columns: criterion value passed"]
        for name, value, ok in rows:
            lines.append(f"{name}\t{value:.17g}\t{int(ok)}")
        table = "\n".join(lines) + "\n"
        with open(os.path.join(out, "check.tsv"), "w") as fh:
            fh.write(table)
        files = files + ["check.tsv"]
        sys.stdout.write(table)
        if not all(ok for _, _, ok in rows):
            rc = EXIT_CHECK
    _write_manifest(out, scenario, files, extras, t_start, time.time())
    return rc


def _scenario_from_args(args) -> dict:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("provide exactly one of --config or --preset")
    if args.config:
        config = load_config(args.config)
        name = os.path.splitext(os.path.basename(args.config))[0]
    else:
        if args.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {args.preset!r}; see `bohmqft list-presets`"
            )
        preset = PRESETS[args.preset]
        config = {k: v for k, v in preset.items() if k != "description"}
        name = args.preset
    return resolve_scenario(config, seed_override=args.seed,
                            out_override=args.out, name=name)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bohmqft",
        description="relativistic Bohmian trajectory and mode-lattice field "
                    "scenarios: run, check, list presets",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in ("run", "check"):
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="TOML scenario file")
        sp.add_argument("--preset", help="built-in scenario name")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory")
        if cmd == "run":
            sp.add_argument("--check", action="store_true",
                            help="also evaluate the scenario's thresholds")
    sub.add_parser("list-presets")
    args = parser.parse_args(argv)

    if args.command == "list-presets":
        for name, preset in PRESETS.items():
            kind = preset["scenario"]["kind"]
            sys.stdout.write(f"{name}\t{kind}\t{preset['description']}\n")
        return EXIT_OK

    try:
        scenario = _scenario_from_args(args)
        do_check = args.command == "check" or getattr(args, "check", False)
        return _execute(scenario, do_check)
    except ConfigError as e:
        sys.stderr.write(f"config error: {e}\n")
        return EXIT_CONFIG
    except rk.GridError as e:
        sys.stderr.write(f"config error: {e}\n")
        return EXIT_CONFIG
    except (rk.NodeError, tj.InfiniteVelocityError) as e:
        sys.stderr.write(f"numerical failure: {e}\n")
        return EXIT_NUMERIC
    except RuntimeError as e:
        sys.stderr.write(f"numerical failure: {e}\n")
        return EXIT_NUMERIC
    except ValueError as e:
        sys.stderr.write(f"config error: {e}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
