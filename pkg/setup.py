"""Adaptive tube MPC setup.

SPDX-License-Identifier: BSD-3-Clause
"""

import os

from setuptools import find_namespace_packages, setup

# Explicitly pull in the contents of our package's __about__ file, as importing the
# package here would require its dependencies to already be installed.
__title__ = None
__summary__ = None
__version__ = None

here = os.path.dirname(os.path.abspath(__file__))
exec(open(os.path.join(here, "adampc/tube/__about__.py")).read())

with open(os.path.join(here, "requirements.txt")) as fin:
    requirements = [
        line.strip() for line in fin if line.strip() and not line.startswith("#")
    ]

setup(
    name=__title__,
    description=__summary__,
    packages=find_namespace_packages(include=["adampc.*"]),
    package_data={"adampc.tube": ["scenarios/*.toml"]},
    version=__version__,
    install_requires=requirements,
    extras_require={
        "development": [
            "tox",
            "black",
            "flake8",
            "isort",
        ]
    },
)
