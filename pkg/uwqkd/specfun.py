"""
Special functions and quadrature used by the analytic formulas.

Everything here is a thin, validated layer over ``scipy.special`` and
``scipy.integrate.quad``. Gamma ratios are formed in log space.
"""

import math
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import integrate, optimize, special, stats

from uwqkd.errors import DomainError, QuadratureError
from uwqkd.settings import QuadratureSpec, Settings

ArrayLike = Union[float, np.ndarray]


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")
    return value


def _require_order(name: str, value) -> int:
    if isinstance(value, bool) or int(value) != value or value < 0:
        raise DomainError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)


def log_gamma(x: float) -> float:
    """ln Γ(x) for x > 0."""
    x = _require_finite("x", x)
    if x <= 0:
        raise DomainError(f"log_gamma requires x > 0, got {x!r}")
    return float(special.gammaln(x))


def laguerre(order: int, x: float) -> float:
    order = _require_order("order", order)
    x = _require_finite("x", x)
    return float(special.eval_laguerre(order, x))


def gaussian_q(u: ArrayLike) -> ArrayLike:
    """Upper-tail probability of the standard normal law."""
    u_arr = np.asarray(u, dtype=float)
    if np.isnan(u_arr).any():
        raise DomainError("gaussian_q is undefined for NaN")
    result = special.ndtr(-u_arr)
    return float(result) if result.ndim == 0 else result


def log_half_range_moment(q: ArrayLike) -> ArrayLike:
    """ln of ∫ cos^q φ over (−π/2, π/2), vectorized over q."""
    q = np.asarray(q, dtype=float)
    value = 0.5 * math.log(math.pi) + special.gammaln((q + 1) / 2) - special.gammaln((q + 2) / 2)
    return float(value) if value.ndim == 0 else value


def half_range_moment(q: int) -> float:
    q = _require_order("q", q)
    return math.exp(log_half_range_moment(q))


def quad_interval(
    f: Callable[[float], float],
    a: float,
    b: float,
    spec: Optional[QuadratureSpec] = None,
    floor: float = 0.0,
    **kwargs,
) -> float:
    """
    Adaptive Gauss–Kronrod quadrature on [a, b] with the package error policy.

    QUADPACK warnings are tolerated as long as the reported error bound stays
    under ``spec.acceptable_error``; otherwise a QuadratureError carries the
    best estimate. Nested integrals pass ``floor``, the absolute error that is
    negligible for the enclosing integral.
    """
    spec = spec or Settings.get_quadrature_spec()
    result = integrate.quad(
        f,
        a,
        b,
        epsabs=spec.abs_tol,
        epsrel=spec.rel_tol,
        limit=spec.max_subdivisions,
        full_output=1,
        **kwargs,
    )
    value, abserr = float(result[0]), float(result[1])
    flagged = len(result) > 3
    if not math.isfinite(value) or (flagged and abserr > spec.acceptable_error(value, floor)):
        message = result[3] if flagged else "non-finite integral"
        raise QuadratureError(f"quadrature on [{a}, {b}] failed: {message}", value, abserr)
    return value


def integrate_semi_infinite(
    f: Callable[[float], float],
    spec: Optional[QuadratureSpec] = None,
    scale: float = 1.0,
    floor: float = 0.0,
) -> float:
    """
    ∫₀^∞ f(x) dx through the substitution x = scale·t/(1−t).

    ``scale`` should sit near the bulk of the integrand so the mapped
    integrand has no narrow features close to either end of [0, 1].
    """
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale!r}")

    def mapped(t: float) -> float:
        if t >= 1.0:
            return 0.0
        one_minus = 1.0 - t
        value = f(scale * t / one_minus)
        return value * scale / (one_minus * one_minus) if value else 0.0

    return quad_interval(mapped, 0.0, 1.0, spec, floor=floor)


def log_tricomi_u(a: float, b: float, psi: float, spec: Optional[QuadratureSpec] = None) -> float:
    """
    ln U(a, b, ψ) from U = Γ(a)^{-1} ∫₀^∞ t^{a−1}(1+t)^{b−a−1}e^{−ψt} dt.

    With s = t/(1+t) the integral becomes
    ∫₀¹ s^{a−1}(1−s)^{−b}exp(−ψ s/(1−s)) ds, evaluated around its peak.
    """
    a = _require_finite("a", a)
    b = _require_finite("b", b)
    psi = _require_finite("psi", psi)
    if a <= 0 or psi <= 0:
        raise DomainError(f"tricomi_u requires a > 0 and psi > 0, got a={a!r}, psi={psi!r}")

    if a < 1:
        # integrable s^{a-1} singularity handled by the algebraic weight
        def smooth(s: float) -> float:
            if s >= 1.0:
                return 0.0
            return math.exp(-b * math.log1p(-s) - psi * s / (1.0 - s))

        value = quad_interval(smooth, 0.0, 1.0, spec, weight="alg", wvar=(a - 1.0, 0.0))
        return math.log(value) - float(special.gammaln(a))

    def log_kernel(s: float) -> float:
        if s <= 0.0:
            return 0.0 if a == 1 else -math.inf
        if s >= 1.0:
            return -math.inf
        head = (a - 1.0) * math.log(s) if a != 1 else 0.0
        return head - b * math.log1p(-s) - psi * s / (1.0 - s)

    peak = optimize.minimize_scalar(
        lambda s: -log_kernel(s), bounds=(1e-300, 1.0 - 1e-16), method="bounded",
        options={"xatol": 1e-12},
    )
    s_peak = float(peak.x)
    g_max = max(log_kernel(s_peak), log_kernel(0.0))

    def scaled(s: float) -> float:
        g = log_kernel(s)
        return math.exp(g - g_max) if g > -math.inf else 0.0

    points = [s_peak] if 0.0 < s_peak < 1.0 else None
    value = quad_interval(scaled, 0.0, 1.0, spec, points=points)
    return g_max + math.log(value) - float(special.gammaln(a))


def tricomi_u(a: float, b: float, psi: float, spec: Optional[QuadratureSpec] = None) -> float:
    """Tricomi's confluent hypergeometric function U(a, b, ψ)."""
    return math.exp(log_tricomi_u(a, b, psi, spec))


def gauss_2f1_neg(
    a: float, b: float, c: float, x: float, spec: Optional[QuadratureSpec] = None
) -> float:
    """₂F₁(a, b; c; x) for x ≤ 0 through Euler's integral (needs c > b > 0)."""
    a, b, c, x = (_require_finite(name, v) for name, v in zip("abcx", (a, b, c, x)))
    if not c > b > 0:
        raise DomainError(f"Euler representation needs c > b > 0, got b={b!r}, c={c!r}")
    if x > 0:
        raise DomainError(f"gauss_2f1_neg is restricted to x <= 0, got {x!r}")
    if x == 0:
        return 1.0
    value = quad_interval(
        lambda t: (1.0 - x * t) ** (-a), 0.0, 1.0, spec, weight="alg", wvar=(b - 1.0, c - b - 1.0)
    )
    log_norm = special.gammaln(c) - special.gammaln(b) - special.gammaln(c - b)
    return float(value * math.exp(log_norm))


def erlang_quadrature_nodes(
    theta: int,
    lambda_E: float,
    order: int,
    tail_probability: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nodes and weights for E[f(I)] with I ~ Erlang(theta, lambda_E).

    The rule is Gauss–Legendre in t = √I on [0, √I_max], where I_max leaves an
    Erlang tail of ``tail_probability``. Likelihoods carry half-integer powers
    of I, which are smooth in t, so the rule converges geometrically.
    """
    theta = _require_order("theta", theta)
    if theta < 1 or not lambda_E > 0:
        raise DomainError(f"invalid Erlang law theta={theta!r}, lambda_E={lambda_E!r}")
    order = _require_order("order", order)
    if order < 1:
        raise DomainError("order must be >= 1")
    if tail_probability is None:
        tail_probability = Settings.get_fading_rule().tail_probability

    i_max = float(stats.gamma.isf(tail_probability, theta, scale=1.0 / lambda_E))
    t_max = math.sqrt(i_max)
    x, wts = special.roots_legendre(order)
    t = 0.5 * t_max * (x + 1.0)
    nodes = t * t
    log_pdf = (
        theta * math.log(lambda_E)
        + (theta - 1) * np.log(nodes)
        - lambda_E * nodes
        - special.gammaln(theta)
    )
    weights = 0.5 * t_max * wts * 2.0 * t * np.exp(log_pdf)
    return nodes, weights
