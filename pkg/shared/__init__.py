# ruff: noqa: F403
from .netcore import *
from .optimizer import *
