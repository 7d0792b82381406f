from collections.abc import Sequence

import numpy as np


def steering_matrix(n: int, thetas: Sequence[float] | np.ndarray) -> np.ndarray:
    """
    Unit-norm array responses `h(theta)` as columns, `h_k = exp(-2 i pi k sin(theta)) / sqrt(n)`.

    >>> mat = steering_matrix(4, [0.0, 0.3])
    >>> mat.shape
    (4, 2)
    >>> np.allclose(np.linalg.norm(mat, axis=0), 1.0)
    True
    >>> np.allclose(mat[:, 0], 0.5)
    True
    """
    sines = np.sin(np.asarray(thetas, dtype=float))
    return np.exp(-2j * np.pi * np.outer(np.arange(n), sines)) / np.sqrt(n)


def parabolic_peak(left: float, center: float, right: float) -> tuple[float, float]:
    """
    Vertex of the parabola through three equispaced samples,
    as `(offset in steps from the center sample, height)`.

    >>> parabolic_peak(1.0, 2.0, 1.0)
    (0.0, 2.0)
    >>> offset, height = parabolic_peak(0.0, 3.0, 2.0)
    >>> round(offset, 6), round(height, 6)
    (0.25, 3.125)
    """
    curvature = left - 2.0 * center + right
    if curvature >= 0:
        return 0.0, center
    offset = 0.5 * (right - left) / -curvature
    return offset, center - 0.25 * (left - right) * offset
