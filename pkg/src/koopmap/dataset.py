"""Time-series containers, delay embedding, and finite-difference tangents.

All containers are immutable after construction and all operations are pure,
so everything in this module is safe to share across threads.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DatasetTooSmallError, ParameterError

__all__ = [
    "TimeSeries",
    "DelayEmbeddedSeries",
    "TangentEstimate",
    "delay_embed",
    "central_difference_field",
    "add_iid_noise",
]


def _as_sample_matrix(samples) -> np.ndarray:
    a = np.asarray(samples, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ParameterError(f"samples must be a 2-D array, got ndim={a.ndim}")
    return a


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled observations, one row per time step.

    Parameters
    ----------
    samples : (N, d) float array
        Row i holds the observation at time ``origin_time + i * dt``.
    dt : float
        Sampling interval, strictly positive.
    origin_time : float
        Time stamp of row 0.
    """

    samples: np.ndarray
    dt: float
    origin_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_sample_matrix(self.samples))
        if self.samples.shape[0] < 3:
            raise DatasetTooSmallError(
                f"need at least 3 samples, got {self.samples.shape[0]}", key="N"
            )
        if self.samples.shape[1] < 1:
            raise DatasetTooSmallError("need at least one component", key="d")
        if not self.dt > 0:
            raise ParameterError(f"dt must be positive, got {self.dt}", key="dt")
        self.samples.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def times(self) -> np.ndarray:
        return self.origin_time + self.dt * np.arange(self.n_samples)

    def interior(self) -> "TimeSeries":
        """Drop the first and last sample (finite-difference alignment)."""
        return TimeSeries(self.samples[1:-1].copy(), self.dt, self.origin_time + self.dt)


@dataclass(frozen=True)
class DelayEmbeddedSeries:
    """Backward-looking delay embedding of a :class:`TimeSeries`.

    Row j is the concatenation ``(x_{j+s-1}, x_{j+s-2}, ..., x_j)`` of ``s``
    consecutive source rows, newest first, so the series has ``N - s + 1``
    rows of width ``s * d``.
    """

    samples: np.ndarray
    s: int
    dt: float
    source_dim: int = field(default=0)

    def __post_init__(self):
        self.samples.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.samples.shape[1]

    def scaled_points(self) -> np.ndarray:
        """Samples scaled by ``1/sqrt(s)``.

        Squared Euclidean distances of the scaled rows equal time-averaged
        squared distances of the underlying windows, which keeps kernel
        bandwidths comparable across delay counts.
        """
        return self.samples / np.sqrt(self.s)


@dataclass(frozen=True)
class TangentEstimate:
    """Second-order finite-difference estimate of the data-space velocity.

    ``vectors[i]`` estimates the velocity at interior sample ``i + 1`` of the
    source series; ``speeds`` holds the Euclidean norms.
    """

    vectors: np.ndarray
    speeds: np.ndarray

    def __post_init__(self):
        self.vectors.setflags(write=False)
        self.speeds.setflags(write=False)


def delay_embed(ts: TimeSeries, s: int) -> DelayEmbeddedSeries:
    """Embed ``ts`` with ``s`` backward-looking delays.

    Parameters
    ----------
    ts : TimeSeries
    s : int
        Number of delays, ``1 <= s < N``. ``s = 1`` returns the samples
        unchanged.
    """
    s = int(s)
    if not 1 <= s < ts.n_samples:
        raise ParameterError(
            f"delay count s={s} must satisfy 1 <= s < N={ts.n_samples}", key="s"
        )
    x = ts.samples
    n_rows = ts.n_samples - s + 1
    out = np.empty((n_rows, s * ts.dim))
    for k in range(s):
        # newest block first: block k holds x_{j + s - 1 - k}
        out[:, k * ts.dim : (k + 1) * ts.dim] = x[s - 1 - k : s - 1 - k + n_rows]
    return DelayEmbeddedSeries(out, s=s, dt=ts.dt, source_dim=ts.dim)


def central_difference_field(ts: TimeSeries) -> TangentEstimate:
    """Estimate the velocity field by central differences.

    Returns estimates ``(x_{i+1} - x_{i-1}) / (2 dt)`` at the N - 2 interior
    samples, together with their Euclidean norms. Exact for signals affine in
    time; O(dt^2) otherwise.
    """
    x = ts.samples
    vectors = (x[2:] - x[:-2]) / (2.0 * ts.dt)
    speeds = np.linalg.norm(vectors, axis=1)
    return TangentEstimate(vectors, speeds)


def add_iid_noise(ts: TimeSeries, std: float, seed: int) -> TimeSeries:
    """Corrupt every component with i.i.d. Gaussian noise of deviation ``std``.

    Deterministic for a given seed; ``std = 0`` returns an identical copy.
    """
    if std < 0:
        raise ParameterError(f"noise std must be nonnegative, got {std}", key="noise_std")
    if std == 0:
        return TimeSeries(ts.samples.copy(), ts.dt, ts.origin_time)
    rng = np.random.default_rng(seed)
    noisy = ts.samples + rng.normal(0.0, std, size=ts.samples.shape)
    return TimeSeries(noisy, ts.dt, ts.origin_time)
