"""Adaptive homothetic-tube model predictive control.

SPDX-License-Identifier: BSD-3-Clause
"""

__title__ = "adampc-tube"
__summary__ = "Adaptive tube MPC for linear systems with bounded parameters."
__version__ = "0.1.0"
__author__ = "adampc contributors"
__license__ = "BSD-3-Clause"
