"""
Decision rules and accepted-only QBER of the HD, QMLD and QMSD receivers.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from uwqkd.channel import TurbulenceModel
from uwqkd.errors import (
    DomainError,
    EnumerationBudgetError,
    NumericError,
    QuadratureError,
    SeriesConvergenceError,
    UnsupportedConfigurationError,
)
from uwqkd.likelihoods import (
    FadingGrid,
    LikelihoodTables,
    QuadratureTables,
    _erlang_of,
    get_fading_grid,
)
from uwqkd.receiver import LinkParams
from uwqkd.settings import DisplacementSearch, QuadratureSpec, Settings
from uwqkd.source import acceptance_probability
from uwqkd.specfun import (
    gauss_2f1_neg,
    gaussian_q,
    integrate_semi_infinite,
    quad_interval,
)

logger = logging.getLogger(__name__)


class Scheme(str, Enum):
    HD = "HD"
    QMLD = "QMLD"
    QMSD = "QMSD"


@dataclass(frozen=True)
class DecisionRegions:
    """Partition of the counts 0..z_max between the two bits."""

    Z0: Tuple[int, ...]
    Z1: Tuple[int, ...]

    def __post_init__(self):
        if set(self.Z0) & set(self.Z1):
            raise DomainError("decision regions must be disjoint")

    @classmethod
    def from_likelihoods(cls, matrix: np.ndarray) -> "DecisionRegions":
        zero = matrix[:, 0] >= matrix[:, 1]
        return cls(
            Z0=tuple(int(z) for z in np.flatnonzero(zero)),
            Z1=tuple(int(z) for z in np.flatnonzero(~zero)),
        )

    def qber(self, matrix: np.ndarray) -> float:
        """½ Σ_{Z1} Pr(z|0) + ½ Σ_{Z0} Pr(z|1)."""
        wrong = [matrix[z, 0] for z in self.Z1] + [matrix[z, 1] for z in self.Z0]
        return 0.5 * math.fsum(float(v) for v in wrong)


@dataclass(frozen=True)
class QberResult:
    scheme: Scheme
    qber: float
    metadata: dict = field(default_factory=dict)
    warnings: Tuple[str, ...] = ()
    tail_mass: float = 0.0
    sequence_error: Optional[float] = None
    z_max: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        upper = 1.0 if self.scheme is Scheme.HD else 0.5
        if not -1e-12 <= self.qber <= upper + 1e-12:
            raise DomainError(f"{self.scheme.value} QBER {self.qber!r} outside [0, {upper}]")

    def as_json(self):
        return {
            "scheme": self.scheme.value,
            "qber": self.qber,
            "tail_mass": self.tail_mass,
            "sequence_error": self.sequence_error,
            "z_max": self.z_max,
            "warnings": list(self.warnings),
            "metadata": self.metadata,
        }


@dataclass(frozen=True)
class DisplacementChoice:
    delta_mag: float
    qber: float
    flat: bool = False
    evaluations: int = 0
    at_bound: bool = False


def _tail_warnings(tail: float, what: str) -> Tuple[str, ...]:
    limit = Settings.get_receiver_defaults().tail_warning
    if tail > limit:
        message = f"{what}: truncated tail mass {tail:.3e} exceeds {limit:.0e}"
        logger.warning(message)
        return (message,)
    return ()


def qmld_decide(z: int, tables: FadingGrid) -> int:
    """Bit with the larger CSI-free likelihood; ties go to 0."""
    p0, p1 = tables.likelihood(int(z))
    return 0 if p0 >= p1 else 1


def qmld_qber_analytic(link: LinkParams, grid: Optional[FadingGrid] = None) -> QberResult:
    if link.receiver.delta_mag == 0.0:
        # both bits share one count law
        return QberResult(scheme=Scheme.QMLD, qber=0.5, metadata=link.as_json())
    grid = grid or get_fading_grid(link)
    z_max = grid.adaptive_z_max()
    matrix = grid.likelihood_matrix(z_max)
    regions = DecisionRegions.from_likelihoods(matrix)
    qber = regions.qber(matrix)
    tail = max(0.0, 1.0 - min(math.fsum(matrix[:, b].tolist()) for b in (0, 1)))
    logger.info("QMLD z_max=%d |Z1|=%d tail=%.2e qber=%.6g", z_max, len(regions.Z1), tail, qber)
    return QberResult(
        scheme=Scheme.QMLD,
        qber=min(qber, 0.5),
        metadata=link.as_json(),
        warnings=_tail_warnings(tail, "QMLD"),
        tail_mass=tail,
        z_max=z_max,
    )


def qmsd_decide(z_vec: Sequence[int], grid: FadingGrid) -> Tuple[int, ...]:
    """Maximum-likelihood bit sequence; ties go to the lexicographically smallest."""
    budget = Settings.get_qmsd_budget()
    if not 1 <= len(z_vec) <= budget.max_block:
        raise DomainError(f"block length must be 1..{budget.max_block}, got {len(z_vec)}")
    return grid.qmsd_decision(z_vec)


def _popcount(values: np.ndarray, bits: int) -> np.ndarray:
    count = np.zeros(values.shape, dtype=np.int64)
    for pos in range(bits):
        count += (values >> pos) & 1
    return count


def _lattice_cut(L: int, z_max: int) -> int:
    """Check that (z_max+1)^L stays within the enumeration budget."""
    budget = Settings.get_qmsd_budget()
    lattice = (budget.enumeration_z_max + 1) ** budget.enumeration_max_block
    if (z_max + 1) ** L > lattice:
        raise EnumerationBudgetError(
            f"z_max={z_max} at L={L} exceeds the enumeration budget "
            f"({budget.enumeration_z_max + 1}^{budget.enumeration_max_block} lattice points); "
            "use Monte Carlo"
        )
    return z_max


def _lattice_products(grid: FadingGrid, symbols: np.ndarray, k: int) -> np.ndarray:
    """Node products over k symbols; row index runs over (z1, b1, ..., zk, bk)."""
    product = np.ones((1, grid.order))
    for _ in range(k):
        product = (product[:, None, :] * symbols[None, :, :]).reshape(-1, grid.order)
    return product


def _lattice_metrics(grid: FadingGrid, L: int, z_cut: int) -> np.ndarray:
    """Pr(z_vec | b_vec) on the lattice, shape (Z^L, 2^L), both axes lexicographic."""
    Z = z_cut + 1
    symbols = np.concatenate([grid.symbol_factors(z) for z in range(Z)])  # row z*2 + b
    split = (L + 1) // 2
    head = _lattice_products(grid, symbols, split)
    tail = _lattice_products(grid, symbols, L - split)
    metrics = ((head * grid.weights) @ tail.T).reshape((Z, 2) * L)
    metrics = metrics.transpose(list(range(0, 2 * L, 2)) + list(range(1, 2 * L, 2)))
    return metrics.reshape(Z**L, 2**L)


def _qmsd_factorized(link: LinkParams, L: int, grid: FadingGrid) -> Optional[QberResult]:
    """
    QMSD QBER from per-symbol node sums, valid when blocks holding a count
    without a pointwise bit are negligible.

    On every other block the sequence decision is the QMLD decision of each
    symbol, so the QBER is the QMLD one and the sequence success probability is
    Σ_n w_n (½ Σ_b Σ_{z∈Z_b} Pr(z|b,I_n))^L. The mass of the remaining blocks
    bounds the error of both and is reported with the truncated tail.
    Returns None when that bound is above ``receiver.tail_warning``.
    """
    qmld = qmld_qber_analytic(link, grid=grid)
    z_max = qmld.z_max
    factors = np.stack([grid.symbol_factors(z) for z in range(z_max + 1)])  # (Z, 2, nodes)
    decisions = grid.qmld_decisions(z_max)
    free = grid.pointwise_decisions(z_max) < 0
    mass = factors.sum(axis=0)
    free_mass = factors[free].sum(axis=0)
    correct = np.stack([factors[decisions == b, b].sum(axis=0) for b in (0, 1)])

    def block_sum(per_symbol: np.ndarray) -> float:
        return math.fsum((grid.weights * (0.5 * per_symbol.sum(axis=0)) ** L).tolist())

    covered = block_sum(mass)
    unsettled = max(0.0, covered - block_sum(mass - free_mass))
    tail = max(0.0, 1.0 - covered)
    limit = Settings.get_receiver_defaults().tail_warning
    if unsettled > limit:
        logger.info(
            "QMSD L=%d: blocks with fading-dependent counts carry %.2e; enumerating", L, unsettled
        )
        return None
    success = block_sum(correct)
    logger.info("QMSD L=%d factorized z_max=%d unsettled=%.2e qber=%.6g", L, z_max, unsettled, qmld.qber)
    return QberResult(
        scheme=Scheme.QMSD,
        qber=qmld.qber,
        metadata={**link.as_json(), "L": L, "method": "factorized", "unsettled_mass": unsettled},
        warnings=_tail_warnings(tail + unsettled, f"QMSD L={L}"),
        tail_mass=tail + unsettled,
        sequence_error=min(1.0, max(0.0, 1.0 - success)),
        z_max=z_max,
    )


def qmsd_qber_analytic(
    link: LinkParams,
    L: int,
    grid: Optional[FadingGrid] = None,
    z_max: Optional[int] = None,
    method: str = "auto",
) -> QberResult:
    """
    QMSD bit error rate and sequence error probability.

    ``auto`` uses the per-symbol factorization when it is exact to within
    ``receiver.tail_warning`` and otherwise enumerates the count lattice up to
    the adaptive z_max. ``enumerate`` (or an explicit ``z_max``) always
    enumerates. Every block metric comes from the same node factors the
    decisions use, so L = 1 reproduces the QMLD result.
    """
    budget = Settings.get_qmsd_budget()
    if not 1 <= L <= budget.enumeration_max_block:
        raise EnumerationBudgetError(
            f"analytic QMSD enumeration is limited to L <= {budget.enumeration_max_block}; "
            f"got L={L}, use Monte Carlo"
        )
    if method not in ("auto", "enumerate"):
        raise DomainError(f"unknown method {method!r}")
    if link.receiver.delta_mag == 0.0:
        return QberResult(
            scheme=Scheme.QMSD,
            qber=0.5,
            metadata={**link.as_json(), "L": L},
            sequence_error=1.0 - 0.5**L,
        )
    grid = grid or get_fading_grid(link)
    if method == "auto" and z_max is None:
        result = _qmsd_factorized(link, L, grid)
        if result is not None:
            return result
    forced = z_max is not None
    z_cut = _lattice_cut(L, grid.adaptive_z_max() if z_max is None else z_max)
    Z = z_cut + 1
    metrics = _lattice_metrics(grid, L, z_cut)

    decisions = np.argmax(metrics, axis=1)
    distance = _popcount(decisions[:, None] ^ np.arange(2**L)[None, :], L)
    qber = math.fsum((distance * metrics).ravel().tolist()) / (L * 2**L)
    correct = math.fsum(metrics[np.arange(Z**L), decisions].tolist()) / 2**L
    tail = max(0.0, 1.0 - float(metrics.sum(axis=0).min()))
    limit = Settings.get_receiver_defaults().tail_warning
    if tail > limit and not forced:
        raise EnumerationBudgetError(
            f"QMSD L={L}: the lattice up to z_max={z_cut} leaves tail mass {tail:.3e}; use Monte Carlo"
        )
    logger.info("QMSD L=%d enumerated z_cut=%d tail=%.2e qber=%.6g", L, z_cut, tail, qber)
    return QberResult(
        scheme=Scheme.QMSD,
        qber=min(qber, 0.5),
        metadata={**link.as_json(), "L": L, "method": "enumerated"},
        warnings=_tail_warnings(tail, f"QMSD L={L}"),
        tail_mass=tail,
        sequence_error=min(1.0, max(0.0, 1.0 - correct)),
        z_max=z_cut,
    )


def _objective_grid(link: LinkParams) -> FadingGrid:
    """Fading grid for one trial |δ|, by direct quadrature if the series gives up."""
    try:
        return FadingGrid(LikelihoodTables(link))
    except SeriesConvergenceError as e:
        logger.warning("series failed at |delta| = %.4g (%s); using quadrature likelihoods", link.receiver.delta_mag, e)
        return FadingGrid(QuadratureTables(link), order=Settings.get_fading_rule().initial_order)


def optimize_displacement(
    link: LinkParams,
    scheme: Scheme = Scheme.QMLD,
    search: Optional[DisplacementSearch] = None,
) -> DisplacementChoice:
    """
    |δ| minimizing the analytic QMLD QBER: coarse grid, then a bounded
    Brent (golden-section with parabolic steps) search around the best node.

    While the best node is the right end of the scanned range, the range is
    extended up to ``search.max_upper``; a minimum still on that end comes
    back with ``at_bound`` set.
    """
    if Scheme(scheme) is Scheme.HD:
        raise DomainError("homodyne detection applies no displacement")
    if link.receiver.delta_phase != 0.0:
        raise UnsupportedConfigurationError("displacement search assumes delta_phase = 0")
    search = search or Settings.get_displacement_search()
    values = {}

    def objective(delta: float) -> float:
        delta = float(delta)
        if delta not in values:
            shifted = link.with_delta(delta)
            try:
                qber = qmld_qber_analytic(shifted, grid=_objective_grid(shifted)).qber
            except NumericError as e:
                logger.warning("QMLD QBER unavailable at |delta| = %.4g: %s", delta, e)
                qber = math.inf
            values[delta] = qber
        return values[delta]

    nodes = np.linspace(0.0, search.upper, search.grid_points)
    scan = np.array([objective(x) for x in nodes])
    finite = scan[np.isfinite(scan)]
    if finite.size and finite.max() - finite.min() < search.flat_tolerance:
        logger.warning("displacement objective is flat (QBER ~ %.6g); using |delta| = 0", scan[0])
        return DisplacementChoice(0.0, float(scan[0]), flat=True, evaluations=len(values))

    step = nodes[1] - nodes[0]
    while int(np.argmin(scan)) == len(nodes) - 1 and nodes[-1] < search.max_upper:
        upper = min(2.0 * nodes[-1], search.max_upper)
        count = max(1, int(round((upper - nodes[-1]) / step)))
        extra = np.linspace(nodes[-1], upper, count + 1)[1:]
        logger.info("displacement optimum at the edge %.4g; extending the scan to %.4g", nodes[-1], extra[-1])
        nodes = np.concatenate([nodes, extra])
        scan = np.concatenate([scan, [objective(x) for x in extra]])

    best = int(np.argmin(scan))
    if not math.isfinite(scan[best]):
        raise QuadratureError("QMLD QBER could not be evaluated at any |delta|", math.nan, math.inf)
    at_bound = best == len(nodes) - 1
    if at_bound:
        logger.warning(
            "QMLD QBER still decreasing at |delta| = %.4g; returning the end of the search range",
            nodes[best],
        )
    lo = nodes[max(best - 1, 0)]
    hi = nodes[min(best + 1, len(nodes) - 1)]
    refined = optimize.minimize_scalar(
        objective, bounds=(lo, hi), method="bounded", options={"xatol": search.tolerance}
    )
    delta, qber = float(refined.x), float(refined.fun)
    if not qber < scan[best]:
        delta, qber = float(nodes[best]), float(scan[best])
    logger.info("optimal |delta| = %.5f (QMLD QBER %.6g)", delta, qber)
    return DisplacementChoice(delta, qber, flat=False, evaluations=len(values), at_bound=at_bound)


def hd_decide(Y: float) -> int:
    return 0 if Y >= 0 else 1


def qbar_e(V: float, theta: int, lambda_E: float, method: str = "closed") -> float:
    """
    E[Q(V √I_t)] under Erlang(theta, lambda_E) fading, with β = V²/(2λ).

    ``closed`` is the terminating form for integer theta,
    ((1−μ)/2)^θ Σ_{k<θ} C(θ−1+k, k) ((1+μ)/2)^k with μ = √(β/(1+β)), which
    stays well conditioned for every β; ``hypergeometric`` is the same value
    through Gauss's ₂F₁; ``craig`` integrates Craig's representation;
    ``fading`` integrates the Q-function against the Erlang density.
    """
    model = TurbulenceModel.erlang(theta, lambda_E)
    if math.isnan(V) or V < 0:
        raise DomainError(f"V must be >= 0, got {V!r}")
    if V == 0:
        return 0.5
    theta, lam = model.theta, model.lambda_E
    beta = V * V / (2.0 * lam)
    if math.isinf(beta):
        return 0.0
    if method == "closed":
        mu = math.sqrt(beta / (1.0 + beta))
        k = np.arange(theta)
        log_terms = (
            special.gammaln(theta + k) - special.gammaln(k + 1) - special.gammaln(theta)
            + k * math.log(0.5 * (1.0 + mu))
        )
        # (1 − μ)/2 without the cancellation at large β
        log_low = -math.log(2.0 * (1.0 + beta) * (1.0 + mu))
        return math.exp(theta * log_low) * math.fsum(np.exp(log_terms).tolist())
    if method == "hypergeometric":
        if -theta * math.log(beta) < 300.0:
            log_pref = (
                float(special.gammaln(theta + 0.5))
                - math.log(2.0 * math.sqrt(math.pi))
                - float(special.gammaln(theta + 1))
            )
            return math.exp(log_pref - theta * math.log(beta)) * gauss_2f1_neg(
                theta, theta + 0.5, theta + 1.0, -1.0 / beta
            )
        # tiny β: the Euler integral without the β^θ scaling
        value = quad_interval(
            lambda t: (t + beta) ** (-theta), 0.0, 1.0, weight="alg", wvar=(theta - 0.5, -0.5)
        )
        return value / (2.0 * math.pi)
    if method == "craig":
        return quad_interval(
            lambda phi: (1.0 + beta / math.sin(phi) ** 2) ** (-theta) if phi > 0 else 0.0,
            0.0,
            math.pi / 2,
        ) / math.pi
    if method == "fading":
        return integrate_semi_infinite(
            lambda I: gaussian_q(V * math.sqrt(I)) * model.pdf(I), scale=model.mean
        )
    raise DomainError(f"unknown method {method!r}")


def _hd_result(link: LinkParams, qber: float, method: str) -> QberResult:
    return QberResult(
        scheme=Scheme.HD,
        qber=min(1.0, max(0.0, qber)),
        metadata={**link.as_json(), "method": method},
    )


def _log_hd_norm(link: LinkParams) -> float:
    source = link.source
    return math.log(2.0) + source.log_filter_norm - math.log(acceptance_probability(source))


def hd_qber_analytic(
    link: LinkParams, method: str = "series", spec: Optional[QuadratureSpec] = None
) -> QberResult:
    """
    Accepted-only HD QBER: C_HD Σ_r C(m,r) Γ(r+½) w^{−(r+½)}
    ∫₀^∞ x^{2(m−r)} e^{−w x²} Q̄_E(√I_p μ x / σ_H) dx.
    """
    if method == "quadrature":
        return hd_qber_quadrature(link, spec)
    if method != "series":
        raise DomainError(f"unknown method {method!r}")
    spec = spec or Settings.get_quadrature_spec()
    model = _erlang_of(link, None)
    source = link.source
    m, w = source.m, source.w
    gain = link.amplitude / link.receiver.sigma_H
    log_c_hd = _log_hd_norm(link)
    terms = []
    for r in range(m + 1):
        power = 2 * (m - r)
        log_head = (
            float(special.gammaln(m + 1) - special.gammaln(r + 1) - special.gammaln(m - r + 1))
            + float(special.gammaln(r + 0.5))
            - (r + 0.5) * math.log(w)
        )
        # absolute error worth rel_tol of the QBER once scaled by the head
        floor = spec.rel_tol * math.exp(-(log_head + log_c_hd))
        integral = integrate_semi_infinite(
            lambda x: x**power * math.exp(-w * x * x) * qbar_e(gain * x, model.theta, model.lambda_E),
            spec,
            scale=math.sqrt((m - r + 0.5) / w),
            floor=floor,
        )
        terms.append(math.exp(log_head + log_c_hd) * integral)
    return _hd_result(link, math.fsum(terms), "series")


def hd_qber_quadrature(link: LinkParams, spec: Optional[QuadratureSpec] = None) -> QberResult:
    """
    Direct quadrature over the accepted prior and the fading law, with the
    p-quadrature and the fading average both done numerically. Works for
    either turbulence model.
    """
    spec = spec or Settings.get_quadrature_spec()
    source = link.source
    m, w = source.m, source.w
    model = link.channel.turbulence
    gain = link.amplitude / link.receiver.sigma_H
    log_norm = _log_hd_norm(link)
    # the faded Q average lies in [0, ½] and enters the QBER with a prior of unit mass
    inner_floor = 1e-3 * spec.rel_tol
    outer_floor = spec.rel_tol * math.exp(-log_norm)

    def prior_marginal(x: float) -> float:
        return 2.0 * integrate_semi_infinite(
            lambda p: (x * x + p * p) ** m * math.exp(-w * (x * x + p * p)),
            spec,
            scale=math.sqrt((m + 0.5) / w),
        )

    def faded_q(x: float) -> float:
        return integrate_semi_infinite(
            lambda I: gaussian_q(gain * x * math.sqrt(I)) * model.pdf(I),
            spec,
            scale=model.mean,
            floor=inner_floor,
        )

    outer = integrate_semi_infinite(
        lambda x: prior_marginal(x) * faded_q(x),
        spec,
        scale=math.sqrt((m + 0.5) / w),
        floor=outer_floor,
    )
    return _hd_result(link, math.exp(log_norm) * outer, "quadrature")
