from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config, parse_config
from .evaluation import evaluate, format_table
from .train import (load_data, train_all, train_corrector, train_diffdecoder, train_encoder,
                    train_prior, train_vae)

__all__ = ["Checkpoint", "ExperimentConfig", "evaluate", "format_table", "load_checkpoint",
           "load_config", "load_data", "parse_config", "save_checkpoint", "train_all",
           "train_corrector", "train_diffdecoder", "train_encoder", "train_prior", "train_vae"]
