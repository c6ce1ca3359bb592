"""
Sample statistics for StateIS.

Provides the unbiased variance/covariance forms every estimator and the
negligible-set search rely on, plus the replicate-level summaries used by
the experiment harness.
"""

from typing import Sequence, Tuple, Union

import numpy as np

from .errors import InsufficientSampleError

ArrayLike = Union[Sequence[float], np.ndarray]


class SampleStatistics:
    """
    Utility class for sample moments over trajectory-level quantities.

    All variance and covariance forms use the unbiased (n - 1) divisor.
    """

    @staticmethod
    def mean(values: ArrayLike) -> float:
        """
        Arithmetic mean of the values.

        Args:
            values: Sample values.

        Returns:
            The mean, or 0.0 for an empty sample.
        """
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            return 0.0
        return float(np.mean(arr))

    @staticmethod
    def sample_variance(values: ArrayLike) -> float:
        """
        Unbiased sample variance.

        Raises:
            InsufficientSampleError: With fewer than two values.
        """
        arr = np.asarray(values, dtype=float)
        if arr.size < 2:
            raise InsufficientSampleError(
                f"sample variance needs at least 2 values, got {arr.size}"
            )
        return float(np.var(arr, ddof=1))

    @staticmethod
    def sample_covariance(x: ArrayLike, y: ArrayLike) -> float:
        """
        Unbiased sample covariance of two paired samples.

        Args:
            x: First sample.
            y: Second sample, same length as x.

        Returns:
            Sum of centred products divided by n - 1.

        Raises:
            InsufficientSampleError: With fewer than two pairs.
            ValueError: If the samples differ in length.
        """
        xa = np.asarray(x, dtype=float)
        ya = np.asarray(y, dtype=float)
        if xa.shape != ya.shape:
            raise ValueError("Samples must have the same length")
        if xa.size < 2:
            raise InsufficientSampleError(
                f"sample covariance needs at least 2 pairs, got {xa.size}"
            )
        return float(np.sum((xa - xa.mean()) * (ya - ya.mean())) / (xa.size - 1))

    @staticmethod
    def column_variances(matrix: np.ndarray) -> np.ndarray:
        """Unbiased variance of every column of an (n, k) matrix."""
        if matrix.shape[0] < 2:
            raise InsufficientSampleError("column variances need at least 2 rows")
        return np.var(matrix, axis=0, ddof=1)

    @staticmethod
    def column_covariances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Unbiased covariance of matching columns of two (n, k) matrices."""
        if x.shape != y.shape:
            raise ValueError("Matrices must have the same shape")
        if x.shape[0] < 2:
            raise InsufficientSampleError("column covariances need at least 2 rows")
        centred = (x - x.mean(axis=0)) * (y - y.mean(axis=0))
        return centred.sum(axis=0) / (x.shape[0] - 1)

    @staticmethod
    def variance_of_mean(values: ArrayLike) -> float:
        """Sample variance divided by n: the estimated variance of the sample mean."""
        arr = np.asarray(values, dtype=float)
        return SampleStatistics.sample_variance(arr) / arr.size

    @staticmethod
    def standard_error(values: ArrayLike) -> float:
        """
        Standard error of the mean.

        Returns 0.0 for a single value, since replicate summaries with one
        replicate are still reported.
        """
        arr = np.asarray(values, dtype=float)
        if arr.size < 2:
            return 0.0
        return float(np.sqrt(SampleStatistics.variance_of_mean(arr)))

    @staticmethod
    def bootstrap_interval(
        values: ArrayLike,
        level: float = 0.99,
        n_resamples: int = 2000,
        seed: int = 0,
    ) -> Tuple[float, float]:
        """
        Percentile bootstrap interval for the mean of the values.

        Args:
            values: Sample values (e.g. squared errors of one estimator).
            level: Coverage of the interval.
            n_resamples: Number of bootstrap resamples.
            seed: Seed of the resampling generator.

        Returns:
            (lower, upper) bounds.
        """
        if not 0.0 < level < 1.0:
            raise ValueError("level must be in (0, 1)")
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            raise InsufficientSampleError("bootstrap needs at least one value")
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, arr.size, size=(n_resamples, arr.size))
        means = arr[idx].mean(axis=1)
        alpha = (1.0 - level) / 2.0
        lower, upper = np.quantile(means, [alpha, 1.0 - alpha])
        return float(lower), float(upper)
