"""Fisher information geometry and p-local measurement bounds for quantum state families."""
from .errors import *  # noqa: F401,F403
from .models import DensityMatrix, StateModel, evaluate, get_model, registry, tangent
from .fisher import SLDSet, cfim, qfim, slds
from .measurement import Povm, gamma_of, optimize_gamma
from .bounds_analytic import BoundReport, best_gamma_bound, compute_bounds
from .bounds_convex import general_framework_bound, holevo_bound, nagaoka_bound

__version__ = "0.1.0"
