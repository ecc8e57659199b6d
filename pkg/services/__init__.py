# ruff: noqa: F403
from .boundary import *
from .decomposition import *
from .elasticity import *
from .evaluation import *
from .material import *
from .pinn import *
from .sampling import *
