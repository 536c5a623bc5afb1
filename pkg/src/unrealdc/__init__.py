"""Divide-and-conquer actor-critic agents with unsupervised auxiliary
tasks, on a deterministic grid FPS simulator."""

__version__ = "0.1.0"

from . import arbiter, autodiff, evalkit, losses, maps, minidoom, netcore, replay, trainer  # noqa: F401
