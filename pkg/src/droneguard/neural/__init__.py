from .autodiff import Tensor, no_grad
from .detector import NeuralDetector, load_detector, predict_timeline, save_detector
from .models import CNN, BiLSTM, CnnArchitecture, RnnArchitecture, build_model
from .train import Dataset, EarlyStopping, History, TrainConfig, TrainingDiverged, train

__all__ = [
    "Tensor", "no_grad", "NeuralDetector", "load_detector", "predict_timeline", "save_detector",
    "CNN", "BiLSTM", "CnnArchitecture", "RnnArchitecture", "build_model",
    "Dataset", "EarlyStopping", "History", "TrainConfig", "TrainingDiverged", "train",
]
