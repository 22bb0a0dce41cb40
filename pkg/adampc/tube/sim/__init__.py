"""Closed-loop simulation of the adaptive tube MPC."""

from adampc.tube.sim import commands  # noqa: F401.
from adampc.tube.sim import export  # noqa: F401.
from adampc.tube.sim import run  # noqa: F401.
