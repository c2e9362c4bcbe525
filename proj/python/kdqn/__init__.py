"""Roundabout driving simulator with a KAN-backed DQN stack."""

try:
    from ._kdqn import *  # noqa: F401,F403
    from ._kdqn import __doc__ as _doc
except ImportError:  # in-tree builds put _kdqn on PYTHONPATH directly
    from _kdqn import *  # noqa: F401,F403
    from _kdqn import __doc__ as _doc

__doc__ = _doc
__version__ = "0.1.0"
