"""Pilot-wave trajectories for relativistic bosons and mode-truncated fields.

Subpackage map:
    relkin   free Klein-Gordon mode sums: currents, polar form, quantum potential
    traject  trajectory integration, time-reversal events, slice crossings
    qftfun   functional Schroedinger picture on a mode lattice, effectivity
    extract  n-particle wave functions and velocities from functional states
    measure  pointer models, ensembles, Born statistics, effectivity collapse
    cli      scenario runner (bohmqft run/check/list-presets)
"""

from . import relkin, traject, qftfun, extract, measure  # noqa: F401

__version__ = "0.1.0"
