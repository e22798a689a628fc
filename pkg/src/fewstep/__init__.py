"""Few-step samplers for diffusion structure models, on desk-scale toy tasks."""

from .denoisers import (Condition, DenoiserSpec, FunctionDenoiser, GMMDenoiser, NetParams, ResidualDenoiser,
                        init_params, load_checkpoint, make_condition, prune_blocks, save_checkpoint)
from .errors import DivergenceError, DomainError, SamplingError, ValidationError
from .flops import PRESETS, ArchConfig, WorkloadShape, flops_curve, flops_estimate
from .geom import RngStream, Structure, ToySpec, center_random_augmentation, gen_toy, kabsch_align
from .losses import LossWeights, edm_loss, flow_loss, loss_bond, loss_fm, loss_mse, loss_smooth_lddt
from .metrics import ClashRule, MetricReport, clash_count, interface_lddt, lddt, metric_report, rmsd_success
from .samplers import SamplerConfig, af3_config, af3_sample, batch_sample, ode_config, ode_sample, sample
from .schedules import ChurnParams, NoiseLevelParams, TimeDist, sample_time, sigma_at
from .train import TrainConfig, make_task, prune_and_finetune, train

__version__ = "0.1.0"
