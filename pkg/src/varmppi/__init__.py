"""Sampling-based MPC with variational-integrator rollouts for underactuated
double pendulums, plus a disturbance-robustness benchmark harness."""

from .model import (ACROBOT_MASK, PENDUBOT_MASK, GoalSpec, ModelParams, State,
                    apply_actuation, continuous_lagrangian, forward_dynamics,
                    gravity_torque, is_upright, mass_matrix, total_energy,
                    wrap_angle)
from .integrators import (BENCHMARK_KINDS, DiscreteLagrangianCtx,
                          FixedPointDivergence, SingularCorrectionMatrix,
                          StepperKind, classical_step, d1_ld, d2_ld,
                          discrete_lagrangian, newton_residual_report, simulate,
                          vi_step)
from .mppi import (ControlSequence, DegenerateWeights, MppiConfig,
                   MppiController, RolloutBatch, cost_to_go, interpolate_shift,
                   mppi_control, rollout_batch, softmax_weights, stage_cost,
                   update_sequence)
from .supervisor import (DisturbanceMonitor, EnergySwingUpPolicy,
                         SupervisedMppiController, WarmStartKind,
                         check_disturbance, predict_next, warm_start_sequence)
from .harness import (ControllerSpec, ControllerTimeout, DisturbanceEvent,
                      EpisodeConfig, EpisodeMetrics, NullController,
                      ablation_suite, build_controller, inject_disturbance,
                      measure_control_latency, run_campaign, run_episode)

__version__ = "0.1.0"
