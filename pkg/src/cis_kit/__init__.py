"""Controlled invariant sets for discrete-time linear systems via trajectory certificates."""
__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .polytope import *  # noqa: F401,F403
from .invariance import *  # noqa: F401,F403
from .feasibility import *  # noqa: F401,F403
from .mpc import *  # noqa: F401,F403
from .models import *  # noqa: F401,F403
