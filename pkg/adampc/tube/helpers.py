"""Helpers used by multiple adaptive MPC modules.

SPDX-License-Identifier: BSD-3-Clause
"""

import json
from typing import Any, Dict

import colorama
import numpy as np


def as_matrix(value: Any, rows: int = None, cols: int = None) -> np.ndarray:
    """Returns the input as a 2D float array, optionally checking its shape."""
    candidate = np.atleast_2d(np.asarray(value, dtype=float))

    if rows is not None and candidate.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {candidate.shape[0]}")
    if cols is not None and candidate.shape[1] != cols:
        raise ValueError(f"expected {cols} columns, got {candidate.shape[1]}")

    return candidate


def as_vector(value: Any, size: int = None) -> np.ndarray:
    """Returns the input as a flat float array, optionally checking its size."""
    candidate = np.asarray(value, dtype=float).reshape(-1)

    if size is not None and candidate.size != size:
        raise ValueError(f"expected {size} entries, got {candidate.size}")

    return candidate


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Returns the symmetric part of a square matrix."""
    return 0.5 * (matrix + matrix.T)


def max_eigenvalue(matrix: np.ndarray) -> float:
    """Returns the largest eigenvalue of the symmetric part of a matrix."""
    return float(np.max(np.linalg.eigvalsh(symmetrize(matrix))))


def spectral_radius(matrix: np.ndarray) -> float:
    """Returns the largest eigenvalue magnitude of a square matrix."""
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def inf_norm(matrix: np.ndarray) -> float:
    """Returns the induced infinity norm (max absolute row sum)."""
    matrix = np.atleast_2d(matrix)
    if matrix.size == 0:
        return 0.0

    return float(np.max(np.sum(np.abs(matrix), axis=1)))


def unit_directions(n_dim: int, n_dirs: int) -> np.ndarray:
    """Returns n_dirs unit vectors spread over the sphere in n_dim.

    The line only has the two directions ±1. From three dimensions on the signed
    unit vectors come first, so the result positively spans the space, and at
    least 2·n_dim directions are needed.
    """
    if n_dim == 1:
        return np.array([[1.0], [-1.0]])

    if n_dim == 2:
        angles = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
        return np.column_stack((np.cos(angles), np.sin(angles)))

    axes = np.vstack((np.eye(n_dim), -np.eye(n_dim)))
    count = n_dirs - axes.shape[0]
    if count < 0:
        raise ValueError(
            f"at least {axes.shape[0]} directions are needed in {n_dim} "
            f"dimensions, got {n_dirs}"
        )

    # A Fibonacci lattice over the first three coordinates fills the remainder.
    index = np.arange(count) + 0.5
    polar = np.arccos(1.0 - 2.0 * index / max(count, 1))
    azimuth = np.pi * (1.0 + 5.0 ** 0.5) * index
    lattice = np.zeros((count, n_dim))
    lattice[:, 0] = np.cos(azimuth) * np.sin(polar)
    lattice[:, 1] = np.sin(azimuth) * np.sin(polar)
    lattice[:, 2] = np.cos(polar)

    return np.vstack((axes, lattice))


def to_jsonable(value: Any) -> Any:
    """Converts numpy values nested in dicts and lists into plain Python values."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, dict):
        return {key: to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]

    return value


def dumps(document: Dict[str, Any]) -> str:
    """Serialise a document with a stable layout."""
    return json.dumps(to_jsonable(document), indent=4, sort_keys=True)


def printi(string, indent: int = 4, prefix: str = None):
    """Print something indented."""
    for line in string.splitlines():
        if prefix:
            print(f"{prefix}", end="")

        print(f"{' ' * indent}" + line)


def banner(version: str) -> str:
    """Returns the console banner."""
    banner = colorama.Fore.BLUE
    banner += rf"""
     ___    ____  ___    __  _______  ______
    /   |  / __ \/   |  /  |/  / __ \/ ____/
   / /| | / / / / /| | / /|_/ / /_/ / /
  / ___ |/ /_/ / ___ |/ /  / / ____/ /___
 /_/  |_/_____/_/  |_/_/  /_/_/    \____/

     Adaptive Tube MPC version {version}
    """
    return banner + colorama.Fore.RESET
