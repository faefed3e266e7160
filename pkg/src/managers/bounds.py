#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Closed-form Poisson approximation bounds for constant, Boolean-cover and Matérn thinnings."""
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from core.models import BooleanModel, Norm, RadiusLaw, Window
from core.reports import BoundReport
from core.space import ball_volume, integrate_ball, unit_ball_volume, union_ball_volume
from literals import M1_CONSTANT, M2_CONSTANT, NEGATIVE_CONTROL_FACTOR
from managers.summaries import b_function, mean_union_volume

logger = logging.getLogger(__name__)

STIELTJES_NODES = 2001


class BoundPreconditionError(Exception):
    """Generic exception for when a bound is requested outside its validity conditions."""

    pass


def _require_non_negative(**values: float) -> None:
    for name, value in values.items():
        if value < 0:
            raise ValueError(f"{name} must be non-negative, got {value}")


def _require_probability(name: str, value: float) -> None:
    if not 0 <= value <= 1:
        raise BoundPreconditionError(f"{name} must lie in [0, 1], got {value}")


def log_plus(value: float) -> float:
    """max(0, ln x), with log⁺ of non-positive arguments taken as 0."""
    return math.log(value) if value > 1 else 0.0


def m1_factor(total_mass: float) -> float:
    """min(1, 1.647 / sqrt|μ|)."""
    _require_non_negative(total_mass=total_mass)
    if total_mass == 0:
        return 1.0

    return min(1.0, M1_CONSTANT / math.sqrt(total_mass))


def m2_factor(total_mass: float) -> float:
    """min(1, 11/(6|μ|) (1 + 2 log⁺(6|μ|/11)))."""
    _require_non_negative(total_mass=total_mass)
    if total_mass == 0:
        return 1.0

    return min(1.0, M2_CONSTANT / total_mass * (1 + 2 * log_plus(total_mass / M2_CONSTANT)))


def m2_clamp_threshold() -> float:
    """Largest mass at which the M2 expression still clamps to 1.

    Beyond 11/6 the unclamped expression first rises above 1; it drops back to 1 at
    11/6 times the root of 1 + 2 ln x = x.
    """
    root = optimize.brentq(lambda x: 1 + 2 * math.log(x) - x, 2.0, 10.0, xtol=1e-14)
    return M2_CONSTANT * root


def assemble_main_bound(
    basic: float,
    strong: float,
    beta_integral: float,
    gamma_integral: float,
    total_mass: float,
    provenance: str = "main",
    extras: dict[str, float] | None = None,
) -> BoundReport:
    """Assembles the TV and d2 totals from the four bound ingredients."""
    _require_non_negative(
        basic=basic,
        strong=strong,
        beta_integral=beta_integral,
        gamma_integral=gamma_integral,
        total_mass=total_mass,
    )
    m1, m2 = m1_factor(total_mass), m2_factor(total_mass)
    weak = beta_integral + 2 * gamma_integral

    return BoundReport(
        basic_term=basic,
        strong_dependence_term=strong,
        beta_integral=beta_integral,
        gamma_integral=gamma_integral,
        weak_dependence_term=weak,
        m1=m1,
        m2=m2,
        total_tv=basic + strong + weak,
        total_d2=m2 * (basic + strong) + m1 * weak,
        total_mass=total_mass,
        provenance=provenance,
        extras=extras or {},
    )


def bound_constant(
    window_volume: float,
    m1: float,
    p: float,
    neighborhood_volume: float,
    k_of_neighborhood: float | None = None,
    gamma_abs_deviation: float = 0.0,
) -> BoundReport:
    """Constant retention π ≡ p of a stationary process with intensity m1.

    `k_of_neighborhood` is 𝒦(N), Lebesgue volume for Poisson input when omitted;
    `gamma_abs_deviation` is E|Γ - EΓ| of the conditional intensity, 0 for Poisson input.
    """
    _require_probability("p", p)
    k_of_neighborhood = neighborhood_volume if k_of_neighborhood is None else k_of_neighborhood
    _require_non_negative(
        window_volume=window_volume,
        m1=m1,
        neighborhood_volume=neighborhood_volume,
        k_of_neighborhood=k_of_neighborhood,
        gamma_abs_deviation=gamma_abs_deviation,
    )
    scale = p**2 * m1**2 * window_volume

    return assemble_main_bound(
        basic=scale * neighborhood_volume,
        strong=scale * k_of_neighborhood,
        beta_integral=p * window_volume * gamma_abs_deviation,
        gamma_integral=0.0,
        total_mass=p * m1 * window_volume,
        provenance="constant",
    )


def bound_boolean(
    window: Window,
    m1: float,
    model: BooleanModel,
    q: float,
    r_bar: float,
    beta_sup: float = 0.0,
    pair_displacements: np.ndarray | None = None,
    pair_replicates: int | None = None,
) -> BoundReport:
    """Boolean-cover thinning of a stationary process with intensity m1 on `window`.

    The pair term integrates against Lebesgue measure (Poisson input) unless a sample of
    ordered pair displacements (first point in `window`, pooled over `pair_replicates`
    realizations) is supplied.

    Raises:
        BoundPreconditionError: when r̄ < 2 ||R||∞ or q is not a probability
    """
    _require_probability("q", q)
    _require_non_negative(m1=m1, beta_sup=beta_sup)
    if r_bar < 2 * model.radius_law.sup:
        raise BoundPreconditionError(
            f"Neighbourhood radius {r_bar} is below twice the largest grain radius {model.radius_law.sup}"
        )

    dimension = window.dimension
    coverage = unit_ball_volume(model.norm, dimension) * model.radius_law.moment(dimension)
    retention = q * math.exp(-model.germ_intensity * coverage)
    basic = retention**2 * m1**2 * window.volume * ball_volume(model.norm, dimension, r_bar)

    def _pair_factor(y: np.ndarray) -> float:
        return math.exp(-model.germ_intensity * mean_union_volume(model, dimension, y))

    if pair_displacements is None:
        strong = q**2 * m1**2 * window.volume
        strong *= integrate_ball(_pair_factor, r_bar, dimension, model.norm)
    else:
        if not pair_replicates:
            raise BoundPreconditionError("Pair displacement samples need their replicate count")
        close = pair_displacements[model.norm.length(pair_displacements) <= r_bar]
        strong = q**2 * sum(_pair_factor(y) for y in close) / pair_replicates

    return assemble_main_bound(
        basic=basic,
        strong=strong,
        beta_integral=2 * retention * window.volume * beta_sup,
        gamma_integral=0.0,
        total_mass=retention * m1 * window.volume,
        provenance="boolean",
    )


def contracted_radius(germ_intensity: float, n: float, q_n: float, dimension: int, norm: Norm) -> float:
    """r_n = ((1/(l1 α_D)) log(q_n n^D))^(1/D).

    Raises:
        BoundPreconditionError: when q_n lies outside [n^-D, 1]
    """
    if n < 1 or germ_intensity <= 0:
        raise BoundPreconditionError(
            f"Contraction needs n >= 1 and a positive germ intensity, got n={n}, l1={germ_intensity}"
        )

    scale = q_n * n**dimension
    if q_n > 1 or scale < 1 - 1e-12:
        raise BoundPreconditionError(f"q_n={q_n} lies outside [n^-D, 1] for n={n}")

    if scale <= 1:
        return 0.0

    return (math.log(scale) / (germ_intensity * unit_ball_volume(norm, dimension))) ** (
        1 / dimension
    )


def contracted_boolean_model(
    germ_intensity: float, n: float, q_n: float, dimension: int, norm: Norm = Norm.EUCLIDEAN
) -> BooleanModel:
    """Boolean model with deterministic radius r_n, as used before contraction by n."""
    radius = contracted_radius(germ_intensity, n, q_n, dimension, norm)
    return BooleanModel(
        germ_intensity=germ_intensity, radius_law=RadiusLaw.deterministic(radius), norm=norm
    )


@dataclass(frozen=True)
class ContractedBooleanBounds:
    """Integral bound with its looser K-based companion."""

    integral: BoundReport
    k_based: BoundReport
    radius: float


def _stieltjes(
    func: Callable[[np.ndarray], float],
    reduced_moment: Callable[[float], float],
    outer: float,
    dimension: int,
) -> float:
    """∫ func d𝒦 over B(0, outer) for an isotropic 𝒦 given by its K function."""
    nodes = np.linspace(0.0, outer, STIELTJES_NODES)
    increments = np.diff([reduced_moment(float(r)) for r in nodes])
    axis = np.eye(dimension)[0]

    return float(
        sum(
            func(0.5 * (lo + hi) * axis) * dk
            for lo, hi, dk in zip(nodes[:-1], nodes[1:], increments)
        )
    )


def bound_boolean_contracted(
    unit_window: Window,
    n: float,
    q_n: float,
    model: BooleanModel,
    m1: float,
    r_bar: float | None = None,
    reduced_moment: Callable[[float], float] | None = None,
    beta_sup: float = 0.0,
) -> ContractedBooleanBounds:
    """Boolean-cover thinning observed through the contraction x -> x/n on `unit_window`.

    `model` lives before contraction and must have D-th moment radius r_n. The reduced
    moment function K defaults to Lebesgue volume of balls (Poisson input).

    Raises:
        BoundPreconditionError: for q_n outside [n^-D, 1], a model radius other than r_n or
            r̄ < 2 ||R||∞
    """
    dimension = unit_window.dimension
    _require_non_negative(m1=m1, beta_sup=beta_sup)
    radius = contracted_radius(model.germ_intensity, n, q_n, dimension, model.norm)
    if not math.isclose(model.radius_law.moment_radius(dimension), radius, rel_tol=1e-9, abs_tol=1e-12):
        raise BoundPreconditionError(
            f"Model radius {model.radius_law.moment_radius(dimension)} does not match r_n={radius}"
        )

    r_bar = 2 * model.radius_law.sup if r_bar is None else r_bar
    if r_bar < 2 * model.radius_law.sup:
        raise BoundPreconditionError(
            f"Neighbourhood radius {r_bar} is below twice the largest grain radius {model.radius_law.sup}"
        )

    def k_function(r: float) -> float:
        if reduced_moment is None:
            return ball_volume(model.norm, dimension, r)
        return reduced_moment(r)

    scale = q_n * n**dimension

    def _decay(y: np.ndarray) -> float:
        return scale ** (-b_function(model, y))

    if radius == 0:
        integral = k_function(r_bar)
    elif reduced_moment is None:
        integral = integrate_ball(_decay, r_bar, dimension, model.norm)
    else:
        integral = _stieltjes(_decay, reduced_moment, r_bar, dimension)

    volume = unit_window.volume
    basic = m1**2 * volume * ball_volume(model.norm, dimension, r_bar / n)
    weak = 2 * volume * beta_sup

    reports = {
        name: assemble_main_bound(
            basic=basic,
            strong=m1**2 * volume * q_n * value,
            beta_integral=weak,
            gamma_integral=0.0,
            total_mass=m1 * volume,
            provenance=f"boolean-contracted-{name}",
            extras={"n": float(n), "radius": radius, "r_bar": r_bar},
        )
        for name, value in (("integral", integral), ("k", k_function(r_bar)))
    }

    return ContractedBooleanBounds(
        integral=reports["integral"], k_based=reports["k"], radius=radius
    )


def annulus_integral_poisson(m1: float, r: float, dimension: int, norm: Norm = Norm.EUCLIDEAN) -> float:
    """∫ over B(0,2r) minus B(0,r) of e^{-m1 |B(0,r) ∪ B(y,r)|} dy."""
    return integrate_ball(
        lambda y: math.exp(-m1 * union_ball_volume(norm, dimension, y, r).value),
        2 * r,
        dimension,
        norm,
        inner=r,
    )


def annulus_integral_from_grid(g2_values: np.ndarray, k_weights: np.ndarray) -> float:
    """Σ (1 - G2(y_i)) w_i for a quadrature of 𝒦 on the annulus between r and 2r."""
    g2_values, k_weights = np.asarray(g2_values), np.asarray(k_weights)
    if g2_values.shape != k_weights.shape:
        raise ValueError("G2 values and 𝒦 weights must align")

    return float(np.sum((1 - g2_values) * k_weights))


def bound_matern(
    window_volume: float,
    m1: float,
    q: float,
    r: float,
    g_r: float,
    annulus_integral: float,
    last_term: float = 0.0,
    dimension: int = 2,
    norm: Norm = Norm.EUCLIDEAN,
) -> BoundReport:
    """Matérn type I thinning of a stationary process with intensity m1.

    `annulus_integral` is ∫ (1 - G2_y(r)) 𝒦(dy) over B(0,2r) minus B(0,r);
    `last_term` is 0 for Poisson input, or m1 |𝒳| q (1 - G(r)) M under a uniform bound M
    on the conditional density.

    Raises:
        BoundPreconditionError: when G(r) or q is not a probability
    """
    _require_probability("G(r)", g_r)
    _require_probability("q", q)
    _require_non_negative(
        window_volume=window_volume, m1=m1, annulus_integral=annulus_integral, last_term=last_term
    )
    if r <= 0:
        raise BoundPreconditionError(f"Hard-core radius must be positive, got {r}")

    survival = q * (1 - g_r)

    return assemble_main_bound(
        basic=m1**2 * window_volume * ball_volume(norm, dimension, 2 * r) * survival**2,
        strong=m1**2 * window_volume * q**2 * annulus_integral,
        beta_integral=last_term,
        gamma_integral=0.0,
        total_mass=m1 * survival * window_volume,
        provenance="matern",
    )


def bound_matern_poisson(
    window_volume: float, m1: float, r: float, dimension: int = 2, norm: Norm = Norm.EUCLIDEAN
) -> BoundReport:
    """Matérn type I thinning of a Poisson process, q = 1.

    The totals use the exact integral display. The simplified display
    |𝒳| 2^D α_D r^D l1² (1 + e^{m1 α_D r^D / 2}) is reported in the extras.
    """
    _require_non_negative(window_volume=window_volume, m1=m1)
    if r <= 0:
        raise BoundPreconditionError(f"Hard-core radius must be positive, got {r}")

    exclusion = m1 * ball_volume(norm, dimension, r)
    l1 = m1 * math.exp(-exclusion)
    basic = window_volume * ball_volume(norm, dimension, 2 * r) * l1**2
    strong = m1**2 * window_volume * annulus_integral_poisson(m1, r, dimension, norm) if m1 else 0.0
    simplified = basic * (1 + math.exp(exclusion / 2))

    return assemble_main_bound(
        basic=basic,
        strong=strong,
        beta_integral=0.0,
        gamma_integral=0.0,
        total_mass=l1 * window_volume,
        provenance="matern-poisson",
        extras={
            "l1": l1,
            "simplified_tv": simplified,
            "simplified_d2": m2_factor(l1 * window_volume) * simplified,
        },
    )


def strauss_M_bound(intensity: float, kappa: float, volume: float = 1.0) -> float:
    """max(1, κ e^{(λ-1) vol} - 1), the uniform bound on the Strauss conditional density."""
    if kappa <= 0:
        raise ValueError(f"Normalizing constant must be positive, got {kappa}")

    return max(1.0, kappa * math.exp((intensity - 1) * volume) - 1)


def poisson_tv_bound(first: float, second: float, volume: float) -> float:
    """d_TV(Po(a Leb), Po(b Leb)) on a window of `volume` is at most |a - b| volume."""
    _require_non_negative(first=first, second=second, volume=volume)
    return min(1.0, abs(first - second) * volume)


def corrupt_bound(report: BoundReport, factor: float = NEGATIVE_CONTROL_FACTOR) -> BoundReport:
    """Scales every term and total by `factor`, for negative-control certification."""
    if not 0 <= factor <= 1:
        raise ValueError(f"Corruption factor must lie in [0, 1], got {factor}")

    scaled = {
        key: getattr(report, key) * factor
        for key in (
            "basic_term",
            "strong_dependence_term",
            "beta_integral",
            "gamma_integral",
            "weak_dependence_term",
            "total_tv",
            "total_d2",
        )
    }

    return BoundReport(
        **{**report.dict(), **scaled, "provenance": f"{report.provenance}-corrupted-{factor:g}"}
    )
