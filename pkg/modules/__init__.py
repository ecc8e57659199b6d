# ruff: noqa: F403
from .experiment import *
from .studies import *
