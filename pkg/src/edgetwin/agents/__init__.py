from .baselines import GreedyScheduler, RandomScheduler
from .base import Scheduler
from .dqn import DivergenceError, DQNScheduler, dqn_train_step, read_checkpoint, train, write_checkpoint
from .mlp import init_mlp, mlp_backward, mlp_forward
from .preprocessing import ObservationScaler
from .replay import ReplayBuffer

__all__ = [
    "DQNScheduler",
    "DivergenceError",
    "GreedyScheduler",
    "ObservationScaler",
    "RandomScheduler",
    "ReplayBuffer",
    "Scheduler",
    "dqn_train_step",
    "init_mlp",
    "mlp_backward",
    "mlp_forward",
    "read_checkpoint",
    "train",
    "write_checkpoint",
]
