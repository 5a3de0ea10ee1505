"""Minimax entropy networks for unsupervised domain adaptation."""

from .autodiff import Tape, Tensor, backward, grad_check
from .data import DomainDataset, DomainPair, make_rotated_moons_pair, make_shifted_blobs, make_two_moons
from .estimator import MMENClassifier
from .nets import ModelBundle, NetworkSpec, build, forward, predict_labels
from .trainer import ModelConfig, TrainConfig, sweep, train

__version__ = "0.1.0"
