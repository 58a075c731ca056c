"""QFI of photons emitted by few-level Markovian light sources.

The package tracks only the internal dynamics of the source: two-time field
correlators come from the quantum regression theorem, the QFI from their
quadrature, control gradients from adjoint sweeps over the time-bin chain,
and everything is cross-checked against a brute-force binned state-vector
oracle at small bin counts.
"""

__version__ = "0.1.0"

from .model import (JumpOperator, Schedule, SourceModel, load_model, preset,
                    product_model)
from .dynamics import (Liouvillian, SpectrumReport, StepPropagators,
                       adjoint_propagate, build_liouvillian,
                       contraction_coefficient, propagate, spectrum)
from .correlators import (CorrelatorGrid, g2_mixing, n_point, normalization,
                          two_point_grid)
from .qfi import QfiReport, fit_loglog, qfi_general, qfi_identical, qfi_scan
from .mps import (EnvironmentCache, ReabsorptionCircuit, TimeBinMPS,
                  build_mps, environments, error_estimate, mps_qfi,
                  reabsorption_circuit)
from .adjoint import (ControlChain, GradientReport, ParamSchedule,
                      control_chain, finite_difference, grad_double_sum,
                      grad_q2, grad_single_sum, hermitian_basis,
                      unitary_derivative)
from .optimizer import OptimizationRun, optimize_q2, scaling_report
from .measurement import (LambdaReport, LieClosureReport, PhotonNumberSupport,
                          TwoPhotonWavefunction, blockade_generators,
                          cfi_projective, check_number_optimality,
                          entangled_counterexample, lambda_product,
                          lambda_two_photon, lie_closure)
from .oracle import BinnedStateVector, oracle_correlator, oracle_qfi, simulate
