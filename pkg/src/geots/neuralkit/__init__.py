"""Differentiable building blocks and forecasters (float64, CPU)."""
from .checkpoint import checkpoint_dict, load_checkpoint, save_checkpoint
from .engine import DTYPE, NonFiniteError, backward, make_adam
from .kan import Kan, KanLayer, bspline_basis
from .layers import GRU, LSTM, TCN, BiLSTM, Dense, EncoderBlock, GraphAggregation
from .models import ARCHITECTURES, Forecaster, ModelConfig, build_model
from .training import TrainResult, TrainSettings, predict, train

__all__ = [
    "ARCHITECTURES", "BiLSTM", "DTYPE", "Dense", "EncoderBlock", "Forecaster", "GRU", "GraphAggregation",
    "Kan", "KanLayer", "LSTM", "ModelConfig", "NonFiniteError", "TCN", "TrainResult",
    "TrainSettings", "backward", "build_model", "bspline_basis", "checkpoint_dict", "load_checkpoint",
    "make_adam", "predict", "save_checkpoint", "train",
]
