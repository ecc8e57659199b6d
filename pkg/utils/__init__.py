# ruff: noqa: F403
from .constants import *
from .exceptions import *
from .functions import *
from .types import *
