"""Balanced gain/loss quantum dynamics embedded in closed four-well systems.

Subpackages by layer: :mod:`ptembed.numerics` (integrators, solvers,
quadrature), :mod:`ptembed.fewmode` (discrete mode models and observables),
:mod:`ptembed.embedding` (control synthesis turning the Hermitian four-mode
system into an effective two-mode gain/loss system), :mod:`ptembed.dnlse`
(Gaussian-basis reduction of the Gross-Pitaevskii equation to a discrete
model), :mod:`ptembed.variational` (fully time-dependent Gaussian ansatz),
and :mod:`ptembed.cli` (scenario orchestration and file outputs).
"""

from .errors import PtError

__version__ = "0.1.0"

__all__ = ["PtError", "__version__"]
