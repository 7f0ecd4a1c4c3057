"""Verification harness: constant ledger, cancellation, cone iteration and contraction."""

from .lower_bounds import *  # noqa: F401,F403
from .cancellation import *  # noqa: F401,F403
from .contraction import *  # noqa: F401,F403
from .ledger import *  # noqa: F401,F403
from .uni import *  # noqa: F401,F403
