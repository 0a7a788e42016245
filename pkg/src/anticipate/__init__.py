"""Accident anticipation from per-frame features: diffusion-enhanced
features, object attention, a recurrent encoder and an actor-critic decision
head trained on time-weighted rewards. Plain numpy, CPU only."""
from .dataset import Dataset, FeatureSequence, GenConfig, ScenarioLabel, gen_synthetic
from .decision import RewardConfig
from .metrics import PredictionRecord, average_precision, mtta, tta
from .objective import LossConfig
from .pipeline import ModelConfig, init_params
from .trainer import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
