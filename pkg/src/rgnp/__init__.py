"""Probabilistic forward/inverse emulators for parametric PDEs.

Forward emulators are conditional neural processes mapping PDE
parameters and a set of collocation points to structured Gaussians over
solution-field values; inverse emulators map fields sampled on
arbitrary grids back to Gaussian parameter posteriors.  Training
maximizes a physics-informed ELBO over randomly drawn collocation
grids, optionally combined with noisy observation data.
"""

from .tape import Var, backward, value
from .jet import Jet, const_jet, jet_compose
from .mlp import MlpParams, mlp_init, mlp_eval, mlp_eval_jet
from .optim import AdamState, adam_init, adam_step, loss_grad

__version__ = "0.1.0"
