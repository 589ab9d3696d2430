"""Structural energy-guided sampling and score distillation on an analytic
Gaussian-mixture prior."""
from .control import (GuardState, SchedulerState, guard_observe, quality_proxy,
                      schedule_lambda, view_similarity)
from .diffusion import (VIEWS, MixturePrior, Mode, NoiseSchedule, default_prior,
                        default_prior_spec, epsilon_pred, forward_noise, linear_schedule,
                        make_prior, reverse_step, sample, x0hat)
from .distill import (DistillConfig, DistillResult, ViewRig, default_rig, distill,
                      sds_gradient, sds_gradient_x0_form)
from .errors import InvalidInputError
from .guidance import (BasisBank, FeatureExtractor, Guide, StructuralBasis,
                       build_basis, build_basis_bank, extract_features, guided_epsilon,
                       make_feature_extractor, structural_energy)
from .linalg import PcaModel, center_columns, pca_fit, project, reconstruct
from .metrics import VPSDE, fpe_check, jr_analog, view_cs_analog

__version__ = "0.1.0"
