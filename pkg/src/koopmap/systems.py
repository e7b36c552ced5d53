"""Synthetic torus flows, initial densities, analytic oracles, ensembles.

Four flows are provided, all on the 2- or 3-torus:

* ``irrational2`` -- constant-speed irrational flow, doughnut embedding in R^3.
* ``variable_speed2`` -- integrable variable-speed flow with a closed-form
  orbit, doughnut embedding in R^3.
* ``mixing3`` -- irrational flow on T^3 slowed by an analytic time-change
  function built from Dirichlet-kernel blocks, flat embedding in R^6.
* ``oxtoby2`` -- area-preserving ergodic flow with a fixed point at the
  origin, flat embedding in R^4.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ive

from .dataset import TimeSeries
from .exceptions import FixedPointError, ParameterError, SamplingError

__all__ = [
    "TorusFlowSpec",
    "DensitySpec",
    "EnsembleForecast",
    "irrational2",
    "variable_speed2",
    "mixing3",
    "oxtoby2",
    "generate",
    "embed",
    "embedding_observable",
    "psi_mixing",
    "invariant_density_variable_speed",
    "invariant_density",
    "von_mises_density",
    "irrational_oracles",
    "ensemble_forecast",
]

_TWO_PI = 2.0 * np.pi

_VARIANTS = ("irrational2", "variable_speed2", "mixing3", "oxtoby2")
_TORUS_DIM = {"irrational2": 2, "variable_speed2": 2, "mixing3": 3, "oxtoby2": 2}


@dataclass(frozen=True)
class TorusFlowSpec:
    """Parameters of one synthetic torus flow.

    ``frequencies`` holds (1, alpha) for the 2-torus flows, (a1, a2, a3) for
    the mixing 3-torus flow, and (alpha,) for the fixed-point flow. ``beta``
    only applies to ``variable_speed2``, ``R`` to the doughnut embeddings, and
    ``psi_kmax``/``psi_decay`` to the 3-torus time-change function. Rational
    independence of the frequencies is assumed, not enforced.
    """

    variant: str
    frequencies: tuple
    beta: float = 1.0
    R: float = 0.5
    psi_kmax: int = 20
    psi_decay: float = 1.8
    initial_angles: tuple = (0.0, 0.0)
    x3_scaled_by_R: bool = True

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ParameterError(f"unknown flow variant {self.variant!r}", key="system")
        if self.variant == "variable_speed2" and not 0.0 < self.beta <= 1.0:
            raise ParameterError(f"beta must lie in (0, 1], got {self.beta}", key="beta")
        if self.variant in ("irrational2", "variable_speed2") and not 0.0 < self.R < 1.0:
            raise ParameterError(f"R must lie in (0, 1), got {self.R}", key="R")
        if self.variant == "mixing3" and self.psi_kmax < 1:
            raise ParameterError("psi_kmax must be >= 1", key="psi_kmax")
        if len(self.initial_angles) != self.torus_dim:
            raise ParameterError(
                f"{self.variant} needs {self.torus_dim} initial angles", key="initial_angles"
            )

    @property
    def torus_dim(self) -> int:
        return _TORUS_DIM[self.variant]

    @property
    def ambient_dim(self) -> int:
        return {"irrational2": 3, "variable_speed2": 3, "mixing3": 6, "oxtoby2": 4}[self.variant]


def irrational2(alpha=math.sqrt(30.0), R=0.5, initial_angles=(0.0, 0.0), x3_scaled_by_R=True):
    return TorusFlowSpec(
        "irrational2", (1.0, float(alpha)), R=R,
        initial_angles=tuple(initial_angles), x3_scaled_by_R=x3_scaled_by_R,
    )


def variable_speed2(alpha=math.sqrt(30.0), beta=0.5, R=0.5, x3_scaled_by_R=True):
    # closed-form orbit passes through (0, 0) at t = 0
    return TorusFlowSpec(
        "variable_speed2", (1.0, float(alpha)), beta=float(beta), R=R,
        initial_angles=(0.0, 0.0), x3_scaled_by_R=x3_scaled_by_R,
    )


def mixing3(frequencies=(1.0, math.sqrt(5.0), math.sqrt(10.0)), psi_kmax=20, psi_decay=1.8,
            initial_angles=(0.0, 0.0, 0.0)):
    return TorusFlowSpec(
        "mixing3", tuple(float(f) for f in frequencies),
        psi_kmax=psi_kmax, psi_decay=psi_decay, initial_angles=tuple(initial_angles),
    )


def oxtoby2(alpha=math.sqrt(20.0), initial_angles=(math.pi / 2, math.pi / 2)):
    return TorusFlowSpec("oxtoby2", (float(alpha),), initial_angles=tuple(initial_angles))


# ---------------------------------------------------------------------------
# time-change function for the mixing 3-torus flow


def psi_mixing(angles, kmax: int, decay: float = 1.0):
    """Dirichlet-block time-change function on the 3-torus.

    Returns ``1 + sum_{k=1}^{kmax} (exp(-decay*k)/k) (cos k t1 + cos k t2)
    D_k(t3)`` with ``D_k`` the order-k Dirichlet kernel. Every oscillatory
    term has zero torus mean, so the torus average is exactly 1. With
    ``decay = 1`` the series dips below zero near (pi, pi, 0); trajectory
    generation therefore uses a larger decay (see :func:`mixing3`), which
    keeps the function strictly positive while preserving a speed contrast
    above a factor of 10.
    """
    if kmax < 1:
        raise ParameterError("kmax must be >= 1", key="psi_kmax")
    th = np.asarray(angles, dtype=np.float64)
    scalar = th.ndim == 1
    th = np.atleast_2d(th)
    t1, t2, t3 = th[:, 0], th[:, 1], th[:, 2]
    total = np.ones_like(t1)
    dirichlet = np.ones_like(t3)
    for k in range(1, int(kmax) + 1):
        dirichlet = dirichlet + 2.0 * np.cos(k * t3)
        coeff = math.exp(-decay * k) / k
        total += coeff * (np.cos(k * t1) + np.cos(k * t2)) * dirichlet
    return float(total[0]) if scalar else total


def psi_mixing_tail_bound(kmax: int, decay: float = 1.0, terms: int = 200) -> float:
    """Upper bound on the truncation error of :func:`psi_mixing` at ``kmax``."""
    ks = np.arange(kmax + 1, kmax + 1 + terms, dtype=np.float64)
    return float(np.sum((2 * ks + 1) * (2.0 / ks) * np.exp(-decay * ks)))


def _psi_scalar(t1, t2, t3, kmax, decay):
    # tight scalar path for single-trajectory integration
    total = 1.0
    dirichlet = 1.0
    for k in range(1, kmax + 1):
        dirichlet += 2.0 * math.cos(k * t3)
        total += math.exp(-decay * k) / k * (math.cos(k * t1) + math.cos(k * t2)) * dirichlet
    return total


# ---------------------------------------------------------------------------
# vector fields and integration


def _field(spec: TorusFlowSpec):
    """Right-hand side acting on an (P, m) array of angles."""
    if spec.variant == "mixing3":
        alphas = np.asarray(spec.frequencies)

        def rhs(th):
            return alphas / psi_mixing(th, spec.psi_kmax, spec.psi_decay)[:, None]

        return rhs
    if spec.variant == "oxtoby2":
        alpha = spec.frequencies[0]

        def rhs(th):
            v2 = alpha * (1.0 - np.cos(th[:, 0] - th[:, 1]))
            v1 = v2 + (1.0 - alpha) * (1.0 - np.cos(th[:, 1]))
            return np.stack([v1, v2], axis=1)

        return rhs
    raise ParameterError(f"{spec.variant} has a closed-form orbit; no field needed")


def _field_scalar(spec: TorusFlowSpec):
    if spec.variant == "mixing3":
        a1, a2, a3 = spec.frequencies
        kmax, decay = spec.psi_kmax, spec.psi_decay

        def rhs(th):
            p = _psi_scalar(th[0], th[1], th[2], kmax, decay)
            return (a1 / p, a2 / p, a3 / p)

        return rhs
    alpha = spec.frequencies[0]

    def rhs(th):
        v2 = alpha * (1.0 - math.cos(th[0] - th[1]))
        v1 = v2 + (1.0 - alpha) * (1.0 - math.cos(th[1]))
        return (v1, v2)

    return rhs


def _rk4_trajectory(spec: TorusFlowSpec, n_samples: int, dt: float, substeps: int = 10):
    """Fixed-step RK4 of a single orbit, recording every ``dt``."""
    rhs = _field_scalar(spec)
    h = dt / substeps
    th = tuple(float(a) for a in spec.initial_angles)
    m = len(th)
    out = np.empty((n_samples, m))
    out[0] = th
    for i in range(1, n_samples):
        for _ in range(substeps):
            k1 = rhs(th)
            th2 = tuple(th[j] + 0.5 * h * k1[j] for j in range(m))
            k2 = rhs(th2)
            th3 = tuple(th[j] + 0.5 * h * k2[j] for j in range(m))
            k3 = rhs(th3)
            th4 = tuple(th[j] + h * k3[j] for j in range(m))
            k4 = rhs(th4)
            th = tuple(
                th[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) for j in range(m)
            )
        out[i] = th
    return out


def rk4_ensemble(spec: TorusFlowSpec, theta0: np.ndarray, times, substeps: int = 10,
                 max_step: float | None = None):
    """Evolve a batch of initial angles to each requested time (RK4).

    The step size is the smallest positive gap of the (sorted) time grid
    divided by ``substeps``, optionally capped by ``max_step``.
    """
    rhs = _field(spec)
    times = np.asarray(times, dtype=np.float64)
    if np.any(times < 0):
        raise ParameterError("ensemble times must be nonnegative", key="times")
    order = np.argsort(times)
    gaps = np.diff(np.concatenate([[0.0], times[order]]))
    positive = gaps[gaps > 1e-14]
    h_max = (float(positive.min()) if positive.size else 1.0) / substeps
    if max_step is not None:
        h_max = min(h_max, max_step)
    th = np.array(theta0, dtype=np.float64)
    out = np.empty((len(times),) + th.shape)
    t_now = 0.0
    for idx in order:
        span = times[idx] - t_now
        if span > 1e-14:
            n_steps = max(1, int(math.ceil(span / h_max - 1e-12)))
            h = span / n_steps
            for _ in range(n_steps):
                k1 = rhs(th)
                k2 = rhs(th + 0.5 * h * k1)
                k3 = rhs(th + 0.5 * h * k2)
                k4 = rhs(th + h * k3)
                th = th + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t_now = times[idx]
        out[idx] = th
    return out


# ---------------------------------------------------------------------------
# closed-form orbits


def _irrational_orbit(spec, theta0, times):
    freq = np.asarray(spec.frequencies)
    return np.asarray(theta0)[None, :] + np.asarray(times)[:, None] * freq[None, :]


def _vs_theta1_forward(u, A):
    # continuous branch of 2*atan(A*tan(u)) across the poles of tan
    k = np.round(u / np.pi)
    u0 = u - k * np.pi
    return 2.0 * (np.arctan(A * np.tan(u0)) + k * np.pi)


def _vs_theta2_forward(v, c, sqrt_beta):
    # continuous branch of 2*arccot(c + sqrt(beta)*cot(v))
    k = np.floor(v / np.pi)
    v0 = v - k * np.pi
    with np.errstate(divide="ignore"):
        w = c + sqrt_beta / np.tan(v0)
    half = np.where(v0 == 0.0, 0.0, 0.5 * np.pi - np.arctan(w))
    return 2.0 * (half + k * np.pi)


def variable_speed_orbit(spec: TorusFlowSpec, theta0, times):
    """Closed-form orbit of the variable-speed flow from arbitrary angles.

    The orbit through the origin satisfies ``tan(th1/2) = A tan(sb t / 2)``
    and ``cot(th2/2) = c + sb cot(sb alpha t / 2)`` with ``c = sqrt(1-beta)``,
    ``sb = sqrt(beta)`` and ``A = (1 + c)/sb``; other starting points reduce
    to it by a per-coordinate time shift since both coordinates evolve
    autonomously.
    """
    alpha = spec.frequencies[1]
    c = math.sqrt(1.0 - spec.beta)
    sb = math.sqrt(spec.beta)
    A = (1.0 + c) / sb
    theta0 = np.atleast_2d(np.asarray(theta0, dtype=np.float64))
    times = np.asarray(times, dtype=np.float64)

    # invert the closed form at t = 0 to find the per-coordinate phase
    w1 = 0.5 * theta0[:, 0]
    k1 = np.round(w1 / np.pi)
    u_start = np.arctan(np.tan(w1 - k1 * np.pi) / A) + k1 * np.pi
    w2 = 0.5 * np.mod(theta0[:, 1], _TWO_PI)
    with np.errstate(divide="ignore"):
        cot_w2 = 1.0 / np.tan(w2)
    ratio = np.where(w2 == 0.0, np.inf, (cot_w2 - c) / sb)
    v_start = np.where(np.isinf(ratio), 0.0, 0.5 * np.pi - np.arctan(ratio))

    u = u_start[None, :] + 0.5 * sb * times[:, None]
    v = v_start[None, :] + 0.5 * sb * alpha * times[:, None]
    th1 = _vs_theta1_forward(u, A)
    th2 = _vs_theta2_forward(v, c, sb)
    # reattach the winding stripped from the second initial angle
    th2 += (theta0[:, 1] - np.mod(theta0[:, 1], _TWO_PI))[None, :]
    return np.stack([th1, th2], axis=2)


def variable_speed_field(spec: TorusFlowSpec, angles):
    """Velocity of the variable-speed flow at given angles."""
    alpha = spec.frequencies[1]
    c = math.sqrt(1.0 - spec.beta)
    th = np.atleast_2d(angles)
    v1 = 1.0 + c * np.cos(th[:, 0])
    v2 = alpha * (1.0 - c * np.sin(th[:, 1]))
    return np.stack([v1, v2], axis=1)


# ---------------------------------------------------------------------------
# embeddings


def embed(spec: TorusFlowSpec, angles) -> np.ndarray:
    """Map torus angles to data space for the flow's observation map."""
    th = np.atleast_2d(np.asarray(angles, dtype=np.float64))
    if spec.variant in ("irrational2", "variable_speed2"):
        t1, t2 = th[:, 0], th[:, 1]
        ring = 1.0 + spec.R * np.cos(t2)
        x3 = spec.R * np.sin(t2) if spec.x3_scaled_by_R else np.sin(t2)
        return np.stack([ring * np.cos(t1), ring * np.sin(t1), x3], axis=1)
    cols = []
    for mu in range(spec.torus_dim):
        cols.append(np.cos(th[:, mu]))
        cols.append(np.sin(th[:, mu]))
    return np.stack(cols, axis=1)


def embedding_observable(spec: TorusFlowSpec, component: int):
    """Observable returning one embedding component as a function of angles."""

    def f(angles):
        return embed(spec, angles)[:, component]

    return f


# ---------------------------------------------------------------------------
# trajectory generation


def generate(spec: TorusFlowSpec, n_samples: int, dt: float, substeps: int = 10):
    """Sample one orbit at interval ``dt``.

    Returns ``(TimeSeries, angles)`` where ``angles`` is the (N, m) unwrapped
    angle trajectory. The two integrable 2-torus flows use their exact
    orbits; the 3-torus and fixed-point flows use fixed-step RK4 with
    ``substeps`` stages per sampling interval.
    """
    if n_samples < 3:
        raise ParameterError("need at least 3 samples", key="N")
    if dt <= 0:
        raise ParameterError("dt must be positive", key="dt")
    times = dt * np.arange(n_samples)
    if spec.variant == "irrational2":
        angles = _irrational_orbit(spec, spec.initial_angles, times)
    elif spec.variant == "variable_speed2":
        angles = variable_speed_orbit(spec, spec.initial_angles, times)[:, 0, :]
    else:
        if spec.variant == "oxtoby2":
            mod0 = np.mod(np.asarray(spec.initial_angles), _TWO_PI)
            if np.allclose(mod0, 0.0, atol=1e-12):
                raise FixedPointError(
                    "oxtoby2 initialized at the fixed point (0, 0); the orbit is constant",
                    key="initial_angles",
                )
        angles = _rk4_trajectory(spec, n_samples, dt, substeps=substeps)
        if spec.variant == "mixing3":
            psi = psi_mixing(angles, spec.psi_kmax, spec.psi_decay)
            if np.min(psi) <= 0:
                raise ParameterError(
                    "time-change function is not positive along the orbit; "
                    "increase psi_decay",
                    key="psi_decay",
                )
    return TimeSeries(embed(spec, angles), dt), angles


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True)
class DensitySpec:
    """Von Mises (circular Gaussian) initial density on the torus.

    ``reference`` selects the measure the density is taken relative to:
    ``"haar"`` for the flat torus measure, ``"invariant"`` for the invariant
    measure of a flow (the density then gets divided by the invariant
    density).
    """

    locations: tuple
    concentration: float
    reference: str = "haar"
    kind: str = "von_mises"

    def __post_init__(self):
        if self.kind != "von_mises":
            raise ParameterError(f"unknown density kind {self.kind!r}", key="density")
        if self.concentration < 0:
            raise ParameterError("concentration must be >= 0", key="kappa")
        if self.reference not in ("haar", "invariant"):
            raise ParameterError(f"unknown reference {self.reference!r}", key="reference")


@lru_cache(maxsize=32)
def _vs_density_norm(beta: float, grid: int = 4096) -> float:
    # separable torus average of 1/((1+c cos a)(1-c sin b)) by trapezoid rule
    c = math.sqrt(1.0 - beta)
    th = np.linspace(0.0, _TWO_PI, grid, endpoint=False)
    f1 = float(np.mean(1.0 / (1.0 + c * np.cos(th))))
    f2 = float(np.mean(1.0 / (1.0 - c * np.sin(th))))
    return f1 * f2


def invariant_density_variable_speed(angles, beta: float):
    """Invariant density of the variable-speed flow relative to Haar.

    Normalized to unit torus average; the normalization constant comes from
    trapezoid quadrature and is cached per ``beta``.
    """
    if not 0.0 < beta <= 1.0:
        raise ParameterError(f"beta must lie in (0, 1], got {beta}", key="beta")
    th = np.atleast_2d(np.asarray(angles, dtype=np.float64))
    c = math.sqrt(1.0 - beta)
    raw = 1.0 / ((1.0 + c * np.cos(th[:, 0])) * (1.0 - c * np.sin(th[:, 1])))
    out = raw / _vs_density_norm(float(beta))
    return out if np.asarray(angles).ndim > 1 else float(out[0])


def invariant_density(spec: TorusFlowSpec, angles):
    """Invariant density of a flow relative to the Haar measure."""
    th = np.atleast_2d(np.asarray(angles, dtype=np.float64))
    if spec.variant == "variable_speed2":
        return invariant_density_variable_speed(th, spec.beta)
    if spec.variant == "mixing3":
        # d(mu)/d(Haar) is proportional to psi, whose torus mean is exactly 1
        return psi_mixing(th, spec.psi_kmax, spec.psi_decay)
    return np.ones(th.shape[0])


def von_mises_density(density: DensitySpec, angles, flow: TorusFlowSpec | None = None):
    """Evaluate a von Mises density at torus angles.

    Relative to Haar this is the product over angle dimensions of
    ``exp(kappa cos(th - loc)) / I0(kappa)``; with ``reference="invariant"``
    the result is additionally divided by the flow's invariant density, for
    which ``flow`` must be supplied.
    """
    th = np.atleast_2d(np.asarray(angles, dtype=np.float64))
    locs = np.asarray(density.locations, dtype=np.float64)
    if th.shape[1] != locs.shape[0]:
        raise ParameterError(
            f"density has {locs.shape[0]} locations, angles have {th.shape[1]} columns",
            key="density_locations",
        )
    kappa = density.concentration
    # ive(0, k) = I0(k) e^-k, so the exponentially scaled form is overflow-safe
    log_i0 = math.log(float(ive(0, kappa))) + kappa if kappa > 0 else 0.0
    log_rho = kappa * np.sum(np.cos(th - locs[None, :]), axis=1) - th.shape[1] * log_i0
    rho = np.exp(log_rho)
    if density.reference == "invariant":
        if flow is None:
            raise ParameterError("invariant-reference density needs the flow", key="reference")
        rho = rho / invariant_density(flow, th)
    return rho


def sample_von_mises(density: DensitySpec, n: int, dim: int, seed: int,
                     max_batches: int = 10000):
    """Draw torus angles from a von Mises measure by rejection sampling.

    Uniform proposals on the torus, acceptance ratio density/max(density);
    adequate for concentrations up to about 50.
    """
    rng = np.random.default_rng(seed)
    locs = np.asarray(density.locations, dtype=np.float64)
    if locs.shape[0] != dim:
        raise ParameterError("density dimension mismatch", key="density_locations")
    kappa = density.concentration
    out = np.empty((n, dim))
    filled = 0
    batch = max(4 * n, 10000)
    for _ in range(max_batches):
        if filled >= n:
            break
        prop = rng.uniform(0.0, _TWO_PI, size=(batch, dim))
        # exp(kappa * sum(cos - 1)) = density / max(density), always <= 1
        log_accept = kappa * np.sum(np.cos(prop - locs[None, :]) - 1.0, axis=1)
        keep = np.log(rng.uniform(size=batch)) < log_accept
        taken = prop[keep][: n - filled]
        out[filled : filled + taken.shape[0]] = taken
        filled += taken.shape[0]
    if filled < n:
        raise SamplingError(
            f"rejection sampling drew {filled}/{n} points in {max_batches} batches",
            key="kappa",
        )
    return out


# ---------------------------------------------------------------------------
# analytic oracles for the irrational flow


def _bessel_ratio(n: int, kappa: float) -> float:
    if kappa == 0.0:
        return 1.0 if n == 0 else 0.0
    return float(ive(n, kappa) / ive(0, kappa))


def irrational_oracles(k, alpha: float, R: float, kappa: float, t):
    """Closed-form spectral and forecast quantities for the irrational flow.

    For wavevector ``k = (k1, k2)`` returns the generator eigenvalue
    ``i (k1 + k2 alpha)`` and the Dirichlet energy ``C1 k1^2 + C2 k2^2`` with
    ``C1 = (1 - R^2)^(-3/2)`` and ``C2 = alpha^2 / R^2`` for the doughnut
    embedding. ``mean_forecast`` and ``meansq_forecast`` evaluate the
    closed-form statistics of the first embedding component under a von Mises
    initial density centered at the origin with concentration ``kappa``.
    """
    k1, k2 = int(k[0]), int(k[1])
    t = np.asarray(t, dtype=np.float64)
    c1 = (1.0 - R * R) ** (-1.5)
    c2 = alpha * alpha / (R * R)
    r1 = _bessel_ratio(1, kappa)
    r2 = _bessel_ratio(2, kappa)
    # the cross-term prefactor is R/2: F^1 = cos th1 + (R/2)(cos(th1+th2) + cos(th1-th2))
    mean = r1 * np.cos(t) + 0.5 * R * r1 * r1 * (np.cos((1 + alpha) * t) + np.cos((1 - alpha) * t))
    meansq = (1.0 + r2 * np.cos(2 * t)) * (
        0.5 + R * r1 * np.cos(alpha * t) + 0.25 * R * R * (1.0 + r2 * np.cos(2 * alpha * t))
    )
    return {
        "eigenvalue": 1j * (k1 + k2 * alpha),
        "dirichlet_energy": c1 * k1 * k1 + c2 * k2 * k2,
        "mean_forecast": mean,
        "meansq_forecast": meansq,
    }


# ---------------------------------------------------------------------------
# perfect-model ensemble forecasting


@dataclass(frozen=True)
class EnsembleForecast:
    times: np.ndarray
    means: np.ndarray  # (n_observables, n_times)
    stds: np.ndarray


def ensemble_forecast(spec: TorusFlowSpec, density: DensitySpec, n_particles: int,
                      times, observables, seed: int, substeps: int = 10,
                      max_step: float | None = None) -> EnsembleForecast:
    """Monte Carlo forecast with the true model.

    Draws ``n_particles`` initial angles from ``density`` (as a measure, so
    the reference convention does not matter), evolves each with the exact or
    RK4 flow, and returns means and standard deviations of each observable at
    each requested time. Observables are callables acting on (P, m) angle
    arrays.
    """
    if n_particles < 1:
        raise ParameterError("need at least one particle", key="n_particles")
    times = np.asarray(times, dtype=np.float64)
    theta0 = sample_von_mises(density, n_particles, spec.torus_dim, seed)
    if spec.variant == "irrational2":
        freq = np.asarray(spec.frequencies)
        paths = theta0[None, :, :] + times[:, None, None] * freq[None, None, :]
    elif spec.variant == "variable_speed2":
        paths = variable_speed_orbit(spec, theta0, times)
    else:
        paths = rk4_ensemble(spec, theta0, times, substeps=substeps, max_step=max_step)
    means = np.empty((len(observables), len(times)))
    stds = np.empty_like(means)
    for j, t_angles in enumerate(paths):
        for i, f in enumerate(observables):
            vals = np.asarray(f(t_angles), dtype=np.float64)
            means[i, j] = vals.mean()
            stds[i, j] = vals.std()
    return EnsembleForecast(times, means, stds)
