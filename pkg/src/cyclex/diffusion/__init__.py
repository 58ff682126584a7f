from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import psnr
from .net import Denoiser, NetConfig, cond_input
from .samplers import (
    ddim_invert,
    ddim_invert_step,
    ddim_step,
    ddpm_sigma,
    ddpm_step,
    reconstruct,
    sample,
)
from .schedule import (
    DEFAULT_BETA_END,
    DEFAULT_BETA_START,
    DEFAULT_DDIM_STEPS,
    DEFAULT_T_TRAIN,
    NoiseSchedule,
    NoisyState,
    forward_diffuse,
    make_schedule,
    strided_times,
)
from .training import AdamState, TrainingError, adam_update, loss_and_grads, train_step

__all__ = [
    "AdamState", "Denoiser", "NetConfig", "NoiseSchedule", "NoisyState",
    "TrainingError", "adam_update", "cond_input", "ddim_invert",
    "ddim_invert_step", "ddim_step", "ddpm_sigma", "ddpm_step",
    "forward_diffuse", "load_checkpoint", "loss_and_grads", "make_schedule",
    "psnr", "reconstruct", "sample", "save_checkpoint", "strided_times",
    "train_step",
    "DEFAULT_BETA_END", "DEFAULT_BETA_START", "DEFAULT_DDIM_STEPS", "DEFAULT_T_TRAIN",
]
