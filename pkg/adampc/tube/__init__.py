"""Adaptive homothetic-tube model predictive control.

SPDX-License-Identifier: BSD-3-Clause
"""

from adampc.tube import __about__  # noqa:F401
from adampc.tube import constants  # noqa:F401
from adampc.tube import controller  # noqa:F401
from adampc.tube import estimator  # noqa:F401
from adampc.tube import exceptions  # noqa:F401
from adampc.tube import helpers  # noqa:F401
from adampc.tube import models  # noqa:F401
from adampc.tube import polytope  # noqa:F401
from adampc.tube import sim  # noqa:F401
from adampc.tube import solvers  # noqa:F401
