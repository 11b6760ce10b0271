"""Classical toolkit for Carleman-lifted diffusion ODE samplers.

Subpackages cover the pipeline end to end: noise schedules and log-SNR
grids (``schedule``), polynomial noise-prediction models (``model``),
classical exponential-integrator samplers (``reference``), Carleman
lifting of the per-step update maps (``carleman``), global block linear
systems and conditioning (``system``), classical and Hamiltonian-style
solvers plus cost models (``solve``), spectral dissipativity diagnostics
(``diagnostics``), and sparse-state readout emulation (``readout``).
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    carleman,
    diagnostics,
    model,
    presets,
    readout,
    reference,
    schedule,
    solve,
    system,
)
