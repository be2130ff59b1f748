"""Stochastic future prediction on synthetic worlds.

Thin python surface over the C++ core: world generators with full ground
truth, differentiable warping operators, the metric suite, and the
gen-data / train / eval pipeline commands.
"""

try:
    from ._core import *  # noqa: F401,F403
    from . import _core as core  # noqa: F401
except ImportError:  # running against a bare build tree
    from _core import *  # type: ignore # noqa: F401,F403
    import _core as core  # type: ignore # noqa: F401

__version__ = "0.1.0"
