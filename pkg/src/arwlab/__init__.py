"""Activated random walks on Z^d: site-wise and particle-wise constructions,
coupling gadgets and Monte Carlo estimators of the non-fixation criterion."""

from .couplings import (BranchingRun, InfluenceRecord, MonotonicityTrial, PopulationGuard,
                        TwoColorRun, coupled_monotonicity_trial, influence_set,
                        run_branching_dominator, run_two_color)
from .estimators import (DensityCriterion, ExitDensityCurve, FEstimate, NotNearestNeighbor,
                         density_criterion, estimate_F, estimate_F_exact_1d,
                         exit_density_sweep, rolling_lower_bound_report)
from .experiment import ExperimentSpec, SpecError
from .lattice import (TRUNCATED, Box, DriftWarning, HalfSpace, InitialLaw, JumpKernel,
                      half_space_occupation, sample_initial, stream)
from .particlewise import (LabeledRun, ParticleRandomness, ProbeResult, finite_volume_window,
                           particle_reach_probability, simulate_labeled,
                           well_definedness_probe)
from .sitewise import (IllegalToppling, InstructionTape, Odometer, SiteConfiguration,
                       StabilizationReport, ToppleBudgetExceeded, run_continuous, stabilize,
                       stabilize_rolling, topple)

__version__ = "0.1.0"
