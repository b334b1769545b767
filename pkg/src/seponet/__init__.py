"""Separable physics-informed operator networks on a numpy autodiff tape."""

from . import autodiff, bench, griddump, nets, pde, refsolve, sampling, tensor, train
from .nets import SepOnetModel, DeepOnetModel, init_seponet, init_deeponet, seponet_forward
from .pde import get_problem, PROBLEMS
from .train import TrainConfig, train as train_model, evaluate

__version__ = "0.1.0"
