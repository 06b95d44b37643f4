from models.report import EvalReport, PairReport
from models.train_config import TrainConfig

__all__ = ["EvalReport", "PairReport", "TrainConfig"]
