"""Continuous-time single-site spin dynamics on tori: exact small-system
analysis, coupling-based mixing estimators, and update-support diagnostics."""

from .lattice import (CapExceeded, SpinConfiguration, TorusGeometry,
                      build_torus, enumerate_configurations, region_components,
                      region_diameter, region_min_distance, torus_distance)
from .model import (ModelSpec, check_detailed_balance, flip_rate, gibbs_table,
                    gibbs_log_weight, parity_mask, partial_order_leq)
from .dynamics import (UpdateEvent, UpdateSequence, apply_updates,
                       cftp_sample, coalescence_time, run_grand_coupling,
                       sample_update_sequence)
from .oracle import (GeneratorMatrix, SpectralData, build_generator,
                     dirichlet_form, ds_bound_check, heat_kernel_row,
                     l2_distance, log_sobolev_upper_estimate, m_t_exact,
                     product_generator, spectral_data, spectral_gap_exact,
                     tv_distance, worst_start_tv)
from .support import (BarrierResult, BlockPartition, DiscrepancyReport,
                      SparsityReport, SupportMap, SupportSet,
                      classify_sparse, coupling_discrepancy, default_tiling,
                      default_sparse_thresholds, exact_support,
                      run_barrier_dynamics, support_map,
                      support_superset_blocks, support_superset_paths)
from .estimators import (CoalescenceCurve, FitRefused, GapEstimate,
                         LowerCurve, MixingProfile, SsmFit, XiCurve,
                         gap_from_xi, mixing_profile, ssm_decay_fit,
                         stationary_sample, tv_lower_via_statistic,
                         tv_upper_via_coalescence, xi_t_curve)

__version__ = "0.1.0"
