"""Python bindings for the beamforge pulsar search pipeline."""

from ._core import *  # noqa: F401,F403
from ._core import BeamforgeError, __doc__  # noqa: F401

__version__ = "0.1.0"
