"""
Bit-conditioned, CSI-free and block likelihoods of the displaced PNR count.

The conditional likelihood is separable in the fading I_t:

    Pr(z | b, I_t) = G_b (w + χ I_t)^{-(m+1)} Σ_g Â_{z,b}(g) q^{g/2},
    q = χ I_t / (w + χ I_t) ∈ [0, 1),

where g = 2i + n + j collects every term of the (k, n, i, j) expansion
with the same power s = g/2 of I_t, and Â already contains χ^{-s}. The
scaled coefficients depend only on m, N and |δ|, never on I_p or μ.
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from uwqkd.channel import TurbulenceModel, erlang_pdf
from uwqkd.errors import (
    DomainError,
    EnumerationBudgetError,
    SeriesConvergenceError,
    UnsupportedConfigurationError,
)
from uwqkd.receiver import LinkParams, _log_pmf_rows
from uwqkd.settings import FadingRule, QuadratureSpec, SeriesControl, Settings
from uwqkd.source import acceptance_probability
from uwqkd.specfun import (
    erlang_quadrature_nodes,
    integrate_semi_infinite,
    log_half_range_moment,
    log_tricomi_u,
    quad_interval,
)

logger = logging.getLogger(__name__)

_BIT_RANGES = {0: (-math.pi / 2, math.pi / 2), 1: (math.pi / 2, 3 * math.pi / 2)}


def _check_bit(b):
    if b not in (0, 1):
        raise DomainError(f"bit must be 0 or 1, got {b!r}")


def _check_count(z):
    if isinstance(z, bool) or int(z) != z or z < 0:
        raise DomainError(f"count must be a non-negative integer, got {z!r}")
    return int(z)


def _erlang_of(link: LinkParams, turbulence: Optional[TurbulenceModel]) -> TurbulenceModel:
    model = turbulence or link.channel.turbulence
    if not model.is_erlang:
        raise UnsupportedConfigurationError(
            "analytic fading averages need the Erlang model; "
            "log-normal fading is available in Monte Carlo only"
        )
    return model


def log_conditional_prefactor(link: LinkParams) -> float:
    """ln C₀ = ln[y^m / (m! π (V_T+1) P_acc(b))] with P_acc(b) = P_acc/2."""
    source = link.source
    return source.log_filter_norm - math.log(acceptance_probability(source) / 2.0)


def _compensated_bins(bins: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Sum ``values`` into integer ``bins`` with math.fsum per bin."""
    if bins.size == 0:
        return np.zeros(1)
    order = np.argsort(bins, kind="stable")
    bins, values = bins[order], values[order]
    unique, starts = np.unique(bins, return_index=True)
    out = np.zeros(int(unique[-1]) + 1)
    for g, chunk in zip(unique, np.split(values, starts[1:])):
        out[g] = math.fsum(chunk.tolist())
    return out


class LikelihoodTables:
    """
    Lazily built coefficient tables of the conditional likelihood.

    Moment vectors V̂_{k,b} and count vectors Â_{z,b} are memoized per
    instance; everything else is derived from the link constants.
    """

    def __init__(self, link: LinkParams, control: Optional[SeriesControl] = None):
        receiver = link.receiver
        if receiver.delta_phase != 0.0:
            raise UnsupportedConfigurationError(
                "the series likelihood assumes a displacement aligned with the "
                "bit axis (delta_phase = 0); use the quadrature method"
            )
        self.link = link
        self.control = control or Settings.get_series_control()
        self.m = link.source.m
        self.w = link.source.w
        self.N = receiver.N
        self.nu1 = receiver.N + 1.0
        self.omega = 2.0 * receiver.delta_mag * link.amplitude
        self.rho = self.omega / self.nu1
        self.chi = link.amplitude**2 / self.nu1
        self.log_c0 = log_conditional_prefactor(link)
        self.log_prefactor = self.log_c0 - receiver.delta_mag**2 / self.nu1
        self._moments: Dict[Tuple[int, int], np.ndarray] = {}
        self._coefficients: Dict[Tuple[int, int], np.ndarray] = {}
        self._log_radial: Dict[Tuple[float, int, float], float] = {}

    def constants(self):
        return {
            "Omega": self.omega,
            "rho": self.rho,
            "chi": self.chi,
            "C0": math.exp(self.log_c0),
            "w": self.w,
        }

    def _truncation(self, mags: np.ndarray, j_max: int) -> np.ndarray:
        """Per row, the number of j-terms kept before they fall under eps."""
        eps = self.control.eps_series
        j = np.arange(mags.shape[1])
        running = np.cumsum(mags, axis=1)
        peak = np.argmax(mags, axis=1)
        small = (mags < eps * running) & (j[None, :] > peak[:, None])
        converged = small.any(axis=1)
        if not converged.all():
            row = int(np.flatnonzero(~converged)[0])
            raise SeriesConvergenceError(
                f"angular series not converged within j_max={j_max}",
                float(mags[row, -1] / running[row, -1]),
            )
        return np.argmax(small, axis=1) + 1

    def moment_coefficients(self, k: int, b: int) -> np.ndarray:
        """
        V̂_{k,b}(g): the k-th binomial moment, already divided by k!, binned
        by g = 2i + n + j and scaled by χ^{-g/2}.
        """
        key = (k, b)
        if key in self._moments:
            return self._moments[key]
        j_max = self.control.j_max
        while True:
            try:
                table = self._moment_table(k, b, j_max)
                break
            except SeriesConvergenceError:
                if j_max >= self.control.j_cap:
                    raise
                j_max = min(2 * j_max, self.control.j_cap)
                logger.debug("moment series k=%d b=%d retried with j_max=%d", k, b, j_max)
        logger.debug("moment table k=%d b=%d built with %d exponents", k, b, table.size)
        self._moments[key] = table
        return table

    def _moment_table(self, k: int, b: int, j_max: int) -> np.ndarray:
        delta = self.link.receiver.delta_mag
        two_d, D = 2.0 * delta, delta * delta
        log_nu1 = math.log(self.nu1)
        j = np.arange(j_max + 1, dtype=float)
        log_j = special.xlogy(j, two_d) - 0.5 * j * log_nu1 - special.gammaln(j + 1)

        bins, values = [], []
        for n in range(k + 1):
            i = np.arange(k - n + 1, dtype=float)
            log_base = (
                -special.gammaln(n + 1)
                - special.gammaln(i + 1)
                - special.gammaln(k - n - i + 1)
                + special.xlogy(n, two_d)
                + 0.5 * n * log_nu1
                + special.xlogy(k - n - i, D)
                + i * log_nu1
            )
            valid = np.isfinite(log_base)
            if not valid.any():
                continue
            i, log_base = i[valid], log_base[valid]
            log_terms = (
                log_base[:, None]
                + log_j[None, :]
                + log_half_range_moment(n + j)[None, :]
                + special.gammaln(self.m + 1 + i[:, None] + (n + j[None, :]) / 2.0)
                - math.log(2.0)
            )
            mags = np.exp(log_terms)
            kept = j[None, :] < self._truncation(mags, j_max)[:, None]
            if b == 0:
                signs = np.full(j.shape, -1.0 if n % 2 else 1.0)
            else:
                signs = np.where(j % 2 == 1, -1.0, 1.0)
            g = (2 * i[:, None] + n + j[None, :]).astype(np.int64)
            bins.append(g[kept])
            values.append((mags * signs[None, :])[kept])

        return _compensated_bins(
            np.concatenate(bins) if bins else np.empty(0, dtype=np.int64),
            np.concatenate(values) if values else np.empty(0),
        )

    def coefficients(self, z: int, b: int) -> np.ndarray:
        """Â_{z,b}(g) = Σ_k C(z,k) N^{z−k} (N+1)^{−(z+1+k)} V̂_{k,b}(g)."""
        z = _check_count(z)
        _check_bit(b)
        key = (z, b)
        if key in self._coefficients:
            return self._coefficients[key]
        moments = [self.moment_coefficients(k, b) for k in range(z + 1)]
        k = np.arange(z + 1, dtype=float)
        log_weights = (
            special.gammaln(z + 1)
            - special.gammaln(k + 1)
            - special.gammaln(z - k + 1)
            + special.xlogy(z - k, self.N)
            - (z + 1 + k) * math.log(self.nu1)
        )
        weights = np.exp(log_weights)
        table = np.zeros(max(v.size for v in moments))
        for weight, moment in zip(weights, moments):
            if weight > 0.0:
                table[: moment.size] += weight * moment
        self._coefficients[key] = table
        return table

    def exponents(self, z: int, b: int) -> Tuple[np.ndarray, np.ndarray]:
        """Exponent pairs (s, τ) = (g/2, m + 1 + g/2) of the count table."""
        s = np.arange(self.coefficients(z, b).size) / 2.0
        return s, self.m + 1 + s

    def conditional(self, z: int, b: int, I_t) -> np.ndarray:
        """Pr(z | b, I_t), vectorized over I_t."""
        table = self.coefficients(z, b)
        I_t = np.asarray(I_t, dtype=float)
        if np.any(I_t < 0):
            raise DomainError("I_t must be non-negative")
        denom = self.w + self.chi * I_t
        q = self.chi * I_t / denom
        powers = np.power(q[..., None], np.arange(table.size) / 2.0)
        value = math.exp(self.log_prefactor) * denom ** (-(self.m + 1)) * (powers @ table)
        value = np.maximum(value, 0.0)
        return float(value) if value.ndim == 0 else value

    def log_radial_integral(self, h: float, turbulence: TurbulenceModel) -> float:
        """
        ln of (1/2) Γ(ν) ∫₀^∞ u^{τ−1} e^{−w u} (λ + χ u)^{−ν} du with
        τ = m + 1 + h and ν = θ + h.
        """
        theta, lam = turbulence.theta, turbulence.lambda_E
        key = (h, theta, lam)
        if key in self._log_radial:
            return self._log_radial[key]
        tau, nu = self.m + 1 + h, theta + h
        w, chi = self.w, self.chi
        lead = (tau - 1.0) * lam
        B = w * lam + (nu - tau + 1.0) * chi
        u_peak = 2.0 * lead / (B + math.sqrt(B * B + 4.0 * w * chi * lead)) if lead > 0 else 0.0

        def log_phi(u: float) -> float:
            head = (tau - 1.0) * math.log(u) if tau != 1.0 else 0.0
            return head - w * u - nu * math.log(lam + chi * u)

        if u_peak > 0:
            reference, scale = log_phi(u_peak), u_peak
        else:
            reference, scale = -nu * math.log(lam), 1.0 / (w + nu * chi / lam)

        def integrand(u: float) -> float:
            if u <= 0.0:
                return math.exp(-nu * math.log(lam) - reference) if tau == 1.0 else 0.0
            return math.exp(log_phi(u) - reference)

        value = integrate_semi_infinite(integrand, scale=scale)
        result = math.log(0.5) + float(special.gammaln(nu)) + reference + math.log(value)
        self._log_radial[key] = result
        return result

    def csi_free(self, z: int, b: int, turbulence: TurbulenceModel) -> float:
        """Pr(z | b) averaged over Erlang fading through the radial integrals."""
        table = self.coefficients(z, b)
        theta, lam = turbulence.theta, turbulence.lambda_E
        s = np.arange(table.size) / 2.0
        log_radial = np.array([self.log_radial_integral(h, turbulence) for h in s])
        log_expect = (
            s * math.log(self.chi)
            + theta * math.log(lam)
            - special.gammaln(theta)
            + math.log(2.0)
            - special.gammaln(self.m + 1 + s)
            + log_radial
        )
        total = math.fsum((table * np.exp(log_expect)).tolist())
        return max(0.0, math.exp(self.log_prefactor) * total)


@Settings.register_cache
@lru_cache(maxsize=16)
def get_tables(link: LinkParams) -> LikelihoodTables:
    """Shared tables per operating point."""
    return LikelihoodTables(link)


def _count_law(z: int, N: float) -> Callable[[float], float]:
    """Scalar Pr(z | S, N) for repeated evaluation inside quadrature."""
    n_floor = Settings.get_receiver_defaults().n_floor
    log_fact = math.lgamma(z + 1)
    if N <= n_floor:
        return lambda S: math.exp(z * math.log(S) - S - log_fact) if S > 0 else float(z == 0)
    row = np.array([z])
    return lambda S: math.exp(float(_log_pmf_rows(row, S, N)[0]))


def _conditional_by_quadrature(
    z: int, b: int, I_t: float, link: LinkParams, spec: Optional[QuadratureSpec]
) -> float:
    """Radial × angular integration of the count law under the accepted prior."""
    source, receiver = link.source, link.receiver
    law = _count_law(z, receiver.N)
    amp = link.amplitude * math.sqrt(I_t)
    dx, dy = receiver.delta.real, receiver.delta.imag
    lo, hi = _BIT_RANGES[b]
    two_m1 = 2 * source.m + 1

    def angular(r: float) -> float:
        def at(phi: float) -> float:
            ex = amp * r * math.cos(phi) - dx
            ey = amp * r * math.sin(phi) - dy
            return law(ex * ex + ey * ey)

        return quad_interval(at, lo, hi, spec)

    def radial(r: float) -> float:
        weight = r**two_m1 * math.exp(-source.w * r * r)
        return weight * angular(r) if weight > 0.0 else 0.0

    value = integrate_semi_infinite(radial, spec, scale=math.sqrt((source.m + 0.5) / source.w))
    return min(1.0, max(0.0, math.exp(log_conditional_prefactor(link)) * value))


class QuadratureTables:
    """
    Drop-in for LikelihoodTables that integrates every conditional likelihood
    directly. Slow; meant for points where the coefficient series gives up.
    """

    def __init__(self, link: LinkParams, spec: Optional[QuadratureSpec] = None):
        self.link = link
        self.spec = spec
        self._values: Dict[Tuple[int, int, float], float] = {}

    def _at(self, z: int, b: int, I_t: float) -> float:
        key = (z, b, I_t)
        if key not in self._values:
            self._values[key] = _conditional_by_quadrature(z, b, I_t, self.link, self.spec)
        return self._values[key]

    def conditional(self, z: int, b: int, I_t) -> np.ndarray:
        z = _check_count(z)
        _check_bit(b)
        I_t = np.asarray(I_t, dtype=float)
        if np.any(I_t < 0):
            raise DomainError("I_t must be non-negative")
        values = np.array([self._at(z, b, float(x)) for x in I_t.ravel()]).reshape(I_t.shape)
        return float(values) if values.ndim == 0 else values


def cond_likelihood(
    z: int,
    b: int,
    I_t: float,
    link: LinkParams,
    method: str = "series",
    spec: Optional[QuadratureSpec] = None,
) -> float:
    """Pr(z | b, I_t, δ) by the coefficient series or by direct quadrature."""
    z = _check_count(z)
    _check_bit(b)
    if not I_t >= 0:
        raise DomainError(f"I_t must be non-negative, got {I_t!r}")
    if method == "series":
        return float(get_tables(link).conditional(z, b, float(I_t)))
    if method == "quadrature":
        return _conditional_by_quadrature(z, b, float(I_t), link, spec)
    raise DomainError(f"unknown method {method!r}")


def csi_free_likelihood(
    z: int,
    b: int,
    link: LinkParams,
    method: str = "semi_closed",
    spec: Optional[QuadratureSpec] = None,
) -> float:
    """Pr(z | b, δ) with the fading marginalized over its Erlang law."""
    z = _check_count(z)
    _check_bit(b)
    model = _erlang_of(link, None)
    if method == "semi_closed":
        return get_tables(link).csi_free(z, b, model)
    if method == "quadrature":
        if link.receiver.delta_phase == 0.0:
            tables = get_tables(link)
            conditional = lambda I: tables.conditional(z, b, I)
        else:
            conditional = lambda I: _conditional_by_quadrature(z, b, I, link, spec)
        return integrate_semi_infinite(
            lambda I: conditional(I) * erlang_pdf(I, model.theta, model.lambda_E),
            spec,
            scale=model.mean,
        )
    raise DomainError(f"unknown method {method!r}")


def radial_integral(k: int, n: int, i: int, j: int, link: LinkParams) -> float:
    """I_{k,n,i,j}; depends on the indices only through h = i + (n+j)/2."""
    k, n, i, j = (_check_count(v) for v in (k, n, i, j))
    if n > k or i > k - n:
        raise DomainError(f"indices need n <= k and i <= k - n, got k={k}, n={n}, i={i}")
    model = _erlang_of(link, None)
    return math.exp(get_tables(link).log_radial_integral(i + (n + j) / 2.0, model))


def angular_moment(n: int, eta: float, b: int, method: str = "series", control: Optional[SeriesControl] = None) -> float:
    """B_n^{(b)}(η) = ∫ over the bit's half range of cos^n φ · e^{η cos φ} dφ."""
    n = _check_count(n)
    _check_bit(b)
    if method == "quadrature":
        lo, hi = _BIT_RANGES[b]
        return quad_interval(lambda phi: math.cos(phi) ** n * math.exp(eta * math.cos(phi)), lo, hi)
    if method != "series":
        raise DomainError(f"unknown method {method!r}")
    control = control or Settings.get_series_control()
    j = np.arange(control.j_max + 1, dtype=float)
    log_mags = special.xlogy(j, abs(eta)) - special.gammaln(j + 1) + log_half_range_moment(n + j)
    mags = np.exp(log_mags)
    if mags[-1] > control.eps_series * mags.sum():
        raise SeriesConvergenceError("angular moment series not converged", float(mags[-1] / mags.sum()))
    signs = np.where((j % 2 == 1) & (eta < 0), -1.0, 1.0)
    if b == 1:
        signs = signs * np.where((n + j) % 2 == 1, -1.0, 1.0)
    return math.fsum((signs * mags).tolist())


class FadingGrid:
    """
    Erlang fading average on a fixed node set.

    Per-symbol factors Pr(z | b, I_n) are memoized on the nodes and shared
    by QMLD decisions, QMSD sequence metrics and the QMSD enumeration.
    ``tables`` is a LikelihoodTables or a QuadratureTables.
    """

    def __init__(
        self,
        tables: LikelihoodTables,
        turbulence: Optional[TurbulenceModel] = None,
        order: Optional[int] = None,
        rule: Optional[FadingRule] = None,
    ):
        self.tables = tables
        self.turbulence = _erlang_of(tables.link, turbulence)
        self.rule = rule or Settings.get_fading_rule()
        self.decision_cache = Settings.get_qmsd_budget().decision_cache
        if order is None:
            self._refine()
        else:
            self._set_order(order)

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_decide", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._decide = lru_cache(maxsize=self.decision_cache)(self._search)

    def _set_order(self, order: int):
        self.order = order
        self.nodes, self.weights = erlang_quadrature_nodes(
            self.turbulence.theta, self.turbulence.lambda_E, order, self.rule.tail_probability
        )
        self._factors: Dict[int, np.ndarray] = {}
        self._pointwise: Dict[int, int] = {}
        self._decide = lru_cache(maxsize=self.decision_cache)(self._search)

    def _probe(self) -> np.ndarray:
        return np.array([self.likelihood(z) for z in range(self.rule.probe_counts + 1)])

    def _refine(self):
        self._set_order(self.rule.initial_order)
        previous = self._probe()
        while self.order < self.rule.max_order:
            self._set_order(self.order * 2)
            current = self._probe()
            change = float(np.max(np.abs(current - previous)))
            previous = current
            if change <= self.rule.tolerance:
                logger.debug("fading grid converged at %d nodes (change %.2e)", self.order, change)
                return
        logger.warning(
            "fading grid stopped at %d nodes without reaching %.1e", self.order, self.rule.tolerance
        )

    def symbol_factors(self, z: int) -> np.ndarray:
        """Pr(z | b, I_n) as an array of shape (2, nodes)."""
        factors = self._factors.get(z)
        if factors is None:
            factors = np.vstack([self.tables.conditional(z, b, self.nodes) for b in (0, 1)])
            self._factors[z] = factors
        return factors

    def likelihood(self, z: int) -> np.ndarray:
        """CSI-free likelihoods (Pr(z|0), Pr(z|1))."""
        return self.symbol_factors(z) @ self.weights

    def likelihood_matrix(self, z_max: int) -> np.ndarray:
        return np.array([self.likelihood(z) for z in range(z_max + 1)])

    def adaptive_z_max(self, tail: Optional[float] = None, cap: Optional[int] = None) -> int:
        """Smallest z_max with Σ_z Pr(z|b) ≥ 1 − tail for both bits."""
        fixed = self.tables.link.receiver.z_max
        if fixed is not None:
            return int(fixed)
        defaults = Settings.get_receiver_defaults()
        tail = defaults.tail_mass if tail is None else tail
        cap = defaults.z_cap if cap is None else cap
        mass = np.zeros(2)
        for z in range(cap + 1):
            mass += self.likelihood(z)
            if mass.min() >= 1.0 - tail:
                return max(1, z)
        logger.warning("likelihood mass %.3e short of one at the cap %d", 1.0 - mass.min(), cap)
        return cap

    def pointwise_decision(self, z: int) -> int:
        """
        Bit that count z favours at every fading node, or -1 when the
        preference changes with I_t.

        A block whose counts all have a pointwise bit is decided symbol by
        symbol: that sequence maximizes the product at each node, so it also
        maximizes the fading average, and it is the lexicographically smallest
        maximizer. The same bit is the QMLD decision for z.
        """
        decision = self._pointwise.get(z)
        if decision is None:
            f0, f1 = self.symbol_factors(z)
            if np.all(f0 >= f1):
                decision = 0
            elif np.all(f1 > f0):
                decision = 1
            else:
                decision = -1
            self._pointwise[z] = decision
        return decision

    def pointwise_decisions(self, z_top: int) -> np.ndarray:
        return np.array([self.pointwise_decision(z) for z in range(z_top + 1)], dtype=np.int8)

    def _products(self, counts: Sequence[int]) -> np.ndarray:
        product = np.ones((1, self.order))
        for z in counts:
            factors = self.symbol_factors(int(z))
            product = (product[:, None, :] * factors[None, :, :]).reshape(-1, self.order)
        return product

    def _metrics(self, counts: Sequence[int], weights: np.ndarray) -> np.ndarray:
        """Σ_n weights_n Π_ℓ Pr(z_ℓ | b_ℓ, I_n) for every bit sequence, lexicographic."""
        if len(counts) == 1:
            return self.symbol_factors(int(counts[0])) @ weights
        split = (len(counts) + 1) // 2
        head = self._products(counts[:split])
        tail = self._products(counts[split:])
        return ((head * weights) @ tail.T).reshape(-1)

    def sequence_metrics(self, z_vec: Sequence[int]) -> np.ndarray:
        """Block metrics for all 2^L bit sequences in lexicographic order."""
        return self._metrics([int(z) for z in z_vec], self.weights)

    def _search(self, key: Tuple[int, ...]) -> Tuple[int, ...]:
        bits = [self.pointwise_decision(z) for z in key]
        free = [pos for pos, bit in enumerate(bits) if bit < 0]
        if not free:
            return tuple(bits)
        # settled symbols keep their bit and fold into the node weights
        weights = self.weights
        for pos, bit in enumerate(bits):
            if bit >= 0:
                weights = weights * self.symbol_factors(key[pos])[bit]
        metrics = self._metrics([key[pos] for pos in free], weights)
        if not metrics.max() > 0.0:
            return (0,) * len(key)
        index = int(np.argmax(metrics))
        for rank, pos in enumerate(free):
            bits[pos] = (index >> (len(free) - 1 - rank)) & 1
        return tuple(bits)

    def qmsd_decision(self, z_vec: Sequence[int]) -> Tuple[int, ...]:
        return self._decide(tuple(int(z) for z in z_vec))

    def qmsd_decisions(self, blocks: np.ndarray) -> np.ndarray:
        """Sequence decisions for an (n_blocks, L) array of counts."""
        blocks = np.asarray(blocks)
        decided = self.pointwise_decisions(int(blocks.max()))[blocks]
        pending = np.flatnonzero((decided < 0).any(axis=1))
        if pending.size:
            unique, inverse = np.unique(blocks[pending], axis=0, return_inverse=True)
            choices = np.array([self.qmsd_decision(row) for row in unique], dtype=np.int8)
            decided[pending] = choices[inverse.reshape(-1)]
        return decided

    def qmld_decisions(self, z_top: int) -> np.ndarray:
        """Bit decisions for every count 0..z_top (ties go to bit 0)."""
        matrix = self.likelihood_matrix(z_top)
        return (matrix[:, 1] > matrix[:, 0]).astype(np.int8)


@Settings.register_cache
@lru_cache(maxsize=16)
def get_fading_grid(link: LinkParams) -> FadingGrid:
    return FadingGrid(get_tables(link))


def likelihood_matrix(grid: FadingGrid, z_max: int) -> np.ndarray:
    """CSI-free likelihoods Pr(z|b) for z = 0..z_max, shape (z_max+1, 2)."""
    return grid.likelihood_matrix(z_max)


def _qmsd_by_tricomi(z_vec, b_vec, link: LinkParams) -> float:
    budget = Settings.get_qmsd_budget()
    if len(z_vec) > budget.tricomi_max_block or max(z_vec) > budget.tricomi_max_count:
        raise EnumerationBudgetError(
            "combinatorial blow-up: the Tricomi form is limited to "
            f"L <= {budget.tricomi_max_block} and counts <= {budget.tricomi_max_count}; "
            "use the quadrature method"
        )
    tables = get_tables(link)
    model = _erlang_of(link, None)
    theta, lam = model.theta, model.lambda_E
    L = len(z_vec)
    combined = np.ones(1)
    for z, b in zip(z_vec, b_vec):
        combined = np.convolve(combined, tables.coefficients(z, b))
    s = np.arange(combined.size) / 2.0
    psi = lam * tables.w / tables.chi
    b_arg = theta + 1.0 - L * (tables.m + 1)
    log_u = np.array([log_tricomi_u(theta + si, b_arg, psi) for si in s])
    log_J = (
        theta * math.log(psi)
        - special.gammaln(theta)
        - L * (tables.m + 1) * math.log(tables.w)
        + special.gammaln(theta + s)
        + log_u
    )
    total = math.fsum((combined * np.exp(log_J)).tolist())
    return max(0.0, math.exp(L * tables.log_prefactor) * total)


def qmsd_metric(
    z_vec: Sequence[int],
    b_vec: Sequence[int],
    link: LinkParams,
    method: str = "quadrature",
    spec: Optional[QuadratureSpec] = None,
) -> float:
    """Joint block likelihood Pr(z_vec | b_vec) under one shared fading value."""
    z_vec = tuple(_check_count(z) for z in z_vec)
    b_vec = tuple(b_vec)
    for b in b_vec:
        _check_bit(b)
    budget = Settings.get_qmsd_budget()
    if len(z_vec) != len(b_vec) or not 1 <= len(z_vec) <= budget.max_block:
        raise DomainError(f"block length must be 1..{budget.max_block} and match the bits")
    if method == "tricomi":
        return _qmsd_by_tricomi(z_vec, b_vec, link)
    if method != "quadrature":
        raise DomainError(f"unknown method {method!r}")
    model = _erlang_of(link, None)
    tables = get_tables(link)
    memo: Dict[Tuple[int, int, float], float] = {}

    def factor(z: int, b: int, I: float) -> float:
        key = (z, b, I)
        if key not in memo:
            memo[key] = tables.conditional(z, b, I)
        return memo[key]

    def integrand(I: float) -> float:
        value = erlang_pdf(I, model.theta, model.lambda_E)
        for z, b in zip(z_vec, b_vec):
            if value == 0.0:
                break
            value *= factor(z, b, I)
        return value

    return integrate_semi_infinite(integrand, spec, scale=model.mean)
