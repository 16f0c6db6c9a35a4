"""Small dense linear-algebra kernels used by the reachability code."""

from __future__ import annotations

import math

import numpy as np


def lu_factor(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """LU factorisation with partial pivoting.

    Returns ``(lu, perm, swaps)`` where ``lu`` holds the unit-lower factor
    below the diagonal and the upper factor on and above it, ``perm`` is the
    row permutation and ``swaps`` the number of row exchanges performed.
    A zero pivot column is left in place (the matrix is singular) and the
    elimination simply skips it.
    """
    lu = np.array(a, dtype=float, copy=True)
    if lu.ndim != 2 or lu.shape[0] != lu.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {lu.shape}")
    n = lu.shape[0]
    perm = np.arange(n)
    swaps = 0
    for k in range(n - 1):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
            swaps += 1
        pivot = lu[k, k]
        if pivot == 0.0:
            continue
        lu[k + 1:, k] /= pivot
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, perm, swaps


def slogdet(a: np.ndarray) -> tuple[float, float]:
    """Sign and natural log of ``|det(a)|``; ``(0.0, -inf)`` when singular."""
    lu, _, swaps = lu_factor(a)
    diag = np.diag(lu)
    if diag.size == 0:
        return 1.0, 0.0
    if np.any(diag == 0.0):
        return 0.0, -math.inf
    sign = -1.0 if swaps % 2 else 1.0
    sign *= float(np.prod(np.sign(diag)))
    return sign, float(np.sum(np.log(np.abs(diag))))


def determinant(a: np.ndarray) -> float:
    """Determinant via LU with partial pivoting.

    Overflows to ``±inf`` or underflows to ``0.0`` like any float product;
    use :func:`slogdet` when the magnitude may leave double range.
    """
    sign, logabs = slogdet(a)
    if sign == 0.0:
        return 0.0
    return sign * math.exp(logabs) if logabs < 709.0 else sign * math.inf

