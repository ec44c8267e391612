"""Marked temporal point process modelling with Bayesian flow networks."""

from .event_data import Dataset, EventSequence, MarkedEvent, load_dataset
from .model import MarkedFlowModel, build_model
from .training import TrainConfig, train
from .sampling import SampleConfig, generate_next
from .metrics import EvalReport, evaluate

__all__ = [
    "Dataset", "EventSequence", "MarkedEvent", "load_dataset", "MarkedFlowModel", "build_model",
    "TrainConfig", "train", "SampleConfig", "generate_next", "EvalReport", "evaluate",
]
__version__ = "0.1.0"
