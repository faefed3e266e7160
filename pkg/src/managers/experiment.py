#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Manager for running seeded experiments over parameter sweeps."""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from core.models import BooleanModel, BoundedMetric, PointPattern, RngStream, StraussParams, Window
from core.reports import BoundReport, IdentityReport
from core.space import ball_volume, contract
from literals import ANNULUS_BINS, SUMMARY_MAX_PATTERNS, Verdict
from managers.bounds import (
    BoundPreconditionError,
    annulus_integral_from_grid,
    annulus_integral_poisson,
    bound_boolean,
    bound_boolean_contracted,
    bound_constant,
    bound_matern,
    bound_matern_poisson,
    contracted_boolean_model,
    corrupt_bound,
    strauss_M_bound,
)
from managers.config import (
    ExperimentConfig,
    config_hash,
    identity_settings,
    point_config,
    resolve_threads,
    sampling_halo,
    sweep_points,
)
from managers.distances import (
    CertificationResult,
    CertificationSamples,
    SlivnyakFunction,
    certify_bound,
    check_density_normalization,
    check_slivnyak_mecke,
)
from managers.simulation import (
    StraussSampler,
    estimate_intensity,
    estimate_strauss_kappa,
    poisson_density,
    sample_poisson,
)
from managers.summaries import estimate_G, estimate_G2, estimate_K
from managers.thinning import (
    BooleanCoverRetention,
    ConstantRetention,
    MaternRetention,
    RetentionField,
    check_thinning_moments,
    thin,
    thinned_density_mc,
)
from workload import ReportWorkload

logger = logging.getLogger(__name__)


# --- MODEL BUILDERS ---


def observation_window(config: ExperimentConfig) -> Window:
    """The window the bound is stated on."""
    return config.model.window.build()


def boolean_model(config: ExperimentConfig) -> BooleanModel:
    """Grain model of a Boolean cover retention, contracted when n is set."""
    model, retention = config.model, config.model.retention
    if retention.n is not None:
        return contracted_boolean_model(
            retention.germ_intensity, retention.n, retention.q, model.dimension, model.norm
        )

    return BooleanModel(
        germ_intensity=retention.germ_intensity,
        radius_law=retention.radius_law(),
        norm=model.norm,
    )


def sampling_window(config: ExperimentConfig) -> Window:
    """Window the unthinned process is simulated on.

    Contracted Boolean experiments simulate on n J; everything else on the observation
    window, haloed when an estimator or the Matérn field needs it.
    """
    window = observation_window(config)
    retention = config.model.retention
    if retention.kind == "boolean" and retention.n is not None:
        return window.scaled(1 / retention.n)

    halo = sampling_halo(config)
    return window.haloed(halo) if halo > 0 else window


def retention_field(config: ExperimentConfig) -> RetentionField:
    """The configured retention field."""
    retention, norm = config.model.retention, config.model.norm
    if retention.kind == "constant":
        return ConstantRetention(p=retention.p)

    if retention.kind == "matern":
        return MaternRetention(
            radius=retention.r, q=retention.q, inner=observation_window(config), norm=norm
        )

    return BooleanCoverRetention(model=boolean_model(config), q=retention.q)


def strauss_params(config: ExperimentConfig, window: Window) -> StraussParams:
    """Strauss parameters on the sampling window."""
    process = config.model.process
    return StraussParams(
        intensity=process.intensity,
        interaction=process.interaction,
        interaction_range=process.interaction_range,
        window=window,
        norm=config.model.norm,
    )


def draw_patterns(config: ExperimentConfig, count: int, rng: RngStream) -> list[PointPattern]:
    """`count` unthinned patterns on the sampling window.

    Strauss draws come from one chain, spaced by the sampler's default interval.
    """
    window = sampling_window(config)
    process = config.model.process
    generator = rng.generator()

    if process.kind == "poisson":
        return [sample_poisson(window, process.intensity, generator) for _ in range(count)]

    sampler = StraussSampler(strauss_params(config, window), generator)
    patterns = sampler.samples(count, burn_in=process.mcmc_steps)
    sampler.check_acceptance()

    return patterns


# --- BOUNDS ---


def _matern_strauss_bound(
    config: ExperimentConfig, patterns: list[PointPattern], rng: RngStream
) -> BoundReport:
    window = observation_window(config)
    model, retention = config.model, config.model.retention
    r = retention.r
    sample = patterns[:SUMMARY_MAX_PATTERNS]

    m1 = estimate_intensity(patterns, window).value
    g_r = estimate_G(sample, [r], model.norm)
    if g_r.flagged:
        raise BoundPreconditionError(f"G({r}) could not be estimated: {g_r.note}")

    edges = np.linspace(r, 2 * r, ANNULUS_BINS + 1)
    k_weights = np.diff(estimate_K(sample, m1, edges, model.norm).values)
    g2_values = []
    for middle in 0.5 * (edges[:-1] + edges[1:]):
        y = np.zeros(model.dimension)
        y[0] = middle
        estimate = estimate_G2(sample, y, r, model.norm, isotropic=True)
        if estimate.flagged:
            logger.warning(f"G2 at distance {middle:.4g} unavailable, using the bound 1 - G2 <= 1")
            g2_values.append(0.0)
        else:
            g2_values.append(estimate.values[0])

    params = strauss_params(config, sampling_window(config))
    kappa = estimate_strauss_kappa(params, model.process.kappa_replicates, rng)
    bound_m = strauss_M_bound(params.intensity, kappa.value, volume=params.window.volume)
    survival = retention.q * (1 - g_r.values[0])

    report = bound_matern(
        window.volume,
        m1,
        retention.q,
        r,
        float(g_r.values[0]),
        annulus_integral_from_grid(np.asarray(g2_values), np.clip(k_weights, 0, None)),
        last_term=m1 * window.volume * survival * bound_m,
        dimension=model.dimension,
        norm=model.norm,
    )

    return report.copy(
        update={
            "provenance": "matern-strauss",
            "extras": {"m1": m1, "kappa": kappa.value, "kappa_se": kappa.stderr, "M": bound_m},
        }
    )


def compute_bound(
    config: ExperimentConfig,
    rng: RngStream,
    patterns: list[PointPattern] | None = None,
) -> BoundReport:
    """BoundReport of one sweep point; Strauss bounds need the simulated patterns."""
    model = config.model
    process, retention = model.process, model.retention
    window = observation_window(config)
    m1 = process.intensity

    if process.kind == "strauss":
        if retention.kind != "matern" or patterns is None:
            raise BoundPreconditionError("Strauss bounds are available for Matérn thinning only")
        return _matern_strauss_bound(config, patterns, rng)

    if retention.kind == "constant":
        return bound_constant(
            window.volume, m1, retention.p, ball_volume(model.norm, model.dimension, retention.r_bar)
        )

    if retention.kind == "matern":
        if retention.q == 1:
            return bound_matern_poisson(window.volume, m1, retention.r, model.dimension, model.norm)

        exclusion = m1 * ball_volume(model.norm, model.dimension, retention.r)
        return bound_matern(
            window.volume,
            m1,
            retention.q,
            retention.r,
            float(-np.expm1(-exclusion)),
            annulus_integral_poisson(m1, retention.r, model.dimension, model.norm),
            dimension=model.dimension,
            norm=model.norm,
        )

    grains = boolean_model(config)
    if retention.n is None:
        r_bar = 2 * grains.radius_law.sup if retention.r_bar is None else retention.r_bar
        return bound_boolean(window, m1, grains, retention.q, r_bar, beta_sup=retention.beta_sup)

    bounds = bound_boolean_contracted(
        window,
        retention.n,
        retention.q,
        grains,
        m1,
        r_bar=retention.r_bar,
        beta_sup=retention.beta_sup,
    )
    return bounds.integral.copy(
        update={
            "extras": {
                **bounds.integral.extras,
                "k_based_tv": bounds.k_based.total_tv,
                "k_based_d2": bounds.k_based.total_d2,
            }
        }
    )


# --- RESULTS ---


@dataclass
class PointResult:
    """Outcome of one sweep point."""

    @dataclass
    class PointStatus:
        """Whether the point ran through, and why not."""

        passed: bool
        cause: str = ""

    index: int
    params: dict[str, float]
    status: PointStatus
    verdict: Verdict | None = None
    negative_control: Verdict | None = None
    rows: list[dict[str, object]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """Ran through with a passing verdict."""
        return self.status.passed and self.verdict is not None and self.verdict.passed

    def as_dict(self) -> dict[str, object]:
        """Manifest entry."""
        return {
            "index": self.index,
            "params": self.params,
            "passed": self.status.passed,
            "cause": self.status.cause,
            "verdict": self.verdict.value.label if self.verdict else None,
            "negative_control": (
                self.negative_control.value.label if self.negative_control else None
            ),
        }


@dataclass
class ExperimentSummary:
    """All sweep points of an experiment, with the rate fit when there is one."""

    config_hash: str
    results: list[PointResult]
    slope: float | None = None

    @property
    def passed(self) -> bool:
        """Every point ran through and passed."""
        return bool(self.results) and all(result.passed for result in self.results)

    @property
    def verdict(self) -> Verdict:
        """Overall verdict, FAIL when any point failed."""
        if not self.passed:
            return Verdict.FAIL

        if all(result.verdict is Verdict.PASS for result in self.results):
            return Verdict.PASS

        return Verdict.UNINFORMATIVE


# --- MANAGER ---


class ExperimentManager:
    """Runs the sweep points of one configuration and writes their reports."""

    def __init__(self, config: ExperimentConfig, workload: ReportWorkload | None = None):
        self.config = config
        self.config_hash = config_hash(config)
        self.workload = workload or ReportWorkload(config.output)
        self.stream = RngStream(config.seed)

    def run_experiment(self) -> ExperimentSummary:
        """Runs every sweep point concurrently, then writes plot data and the manifest."""
        points = sweep_points(self.config)
        threads = resolve_threads(self.config)
        logger.info(
            f"Running {self.config.kind} experiment {self.config.name} "
            f"({len(points)} points, {threads} threads, config {self.config_hash[:12]})"
        )

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(self.run_point, range(len(points)), points))

        summary = ExperimentSummary(config_hash=self.config_hash, results=results)
        if self.config.kind == "rate":
            summary.slope = self._write_rate_table(results)

        self._write_plot_data(results)
        self._write_manifest(summary)

        return summary

    def run_point(self, index: int, params: dict[str, float]) -> PointResult:
        """Runs one sweep point; failures are logged and recorded, never raised."""
        try:
            config = point_config(self.config, params)
            stream = self.stream.substream(index)
            pipeline = {
                "certify": self._certify_point,
                "rate": self._rate_point,
                "identities": self._identities_point,
                "summaries": self._summaries_point,
            }[config.kind]
            return pipeline(index, params, config, stream)
        except Exception as e:
            logger.error(f"Sweep point {index} {params} failed: {type(e).__name__}: {e}")
            return PointResult(
                index=index,
                params=params,
                status=PointResult.PointStatus(passed=False, cause=f"{type(e).__name__}: {e}"),
            )

    # --- PIPELINES ---

    def _certification_samples(
        self,
        config: ExperimentConfig,
        bound: BoundReport,
        patterns: list[PointPattern],
        rng: RngStream,
    ) -> CertificationSamples:
        window = observation_window(config)
        field = retention_field(config)
        generator = rng.generator()
        contraction = config.model.retention.n

        counts = np.empty(len(patterns), dtype=np.int64)
        thinned = []
        for i, pattern in enumerate(patterns):
            outcome = thin(pattern, field.realize(pattern, generator), generator)
            retained = outcome.retained
            if contraction is not None:
                retained = contract(retained, contraction)
            retained = retained.restrict(window)
            counts[i] = len(retained)
            if i < self.config.witness_replicates:
                thinned.append(retained)

        if not thinned:
            return CertificationSamples(counts=counts)

        intensity = bound.total_mass / window.volume
        reference = [
            sample_poisson(window, intensity, generator) for _ in range(len(thinned))
        ]
        return CertificationSamples(
            counts=counts,
            thinned=thinned,
            reference=reference,
            anchor=PointPattern.empty(window.dimension, window),
            metric=BoundedMetric(norm=config.model.norm),
        )

    def _certification_rows(
        self, index: int, params: dict[str, float], result: CertificationResult, label: str = ""
    ) -> list[dict[str, object]]:
        return [
            {
                "point": index,
                **params,
                "metric": f"{certificate.metric.value}{label}",
                "bound": certificate.bound,
                "estimate": certificate.estimate,
                "se": certificate.se,
                "verdict": certificate.verdict,
            }
            for certificate in result.certificates
        ]

    def _certify_point(
        self, index: int, params: dict[str, float], config: ExperimentConfig, stream: RngStream
    ) -> PointResult:
        patterns = draw_patterns(config, config.replicates, stream.substream(0))
        bound = compute_bound(config, stream.substream(1), patterns=patterns)
        bound = bound.copy(update={"config_hash": self.config_hash})

        samples = self._certification_samples(config, bound, patterns, stream.substream(2))
        result = certify_bound(self.config_hash, bound, samples, stream.substream(3))
        rows = self._certification_rows(index, params, result)

        certificates = [json.loads(c.to_json()) for c in result.certificates]
        negative_control = None
        if config.negative_control:
            corrupted = corrupt_bound(bound, config.negative_control.factor)
            control = certify_bound(self.config_hash, corrupted, samples, stream.substream(4))
            negative_control = control.verdict
            rows += self._certification_rows(index, params, control, label="-negative-control")
            for certificate in control.certificates:
                certificates.append({**json.loads(certificate.to_json()), "negative_control": True})
            logger.info(f"Negative control at point {index}: {control.verdict.value.label}")

        self.workload.write(bound.to_json() + "\n", self.workload.paths.bound(index))
        self.workload.write_frame(
            pd.DataFrame([d.as_row() for d in result.distances]),
            self.workload.paths.distances(index),
        )
        self.workload.write_json(certificates, self.workload.paths.certificate(index))

        return PointResult(
            index=index,
            params=params,
            status=PointResult.PointStatus(passed=True),
            verdict=result.verdict,
            negative_control=negative_control,
            rows=rows,
        )

    def _rate_point(
        self, index: int, params: dict[str, float], config: ExperimentConfig, stream: RngStream
    ) -> PointResult:
        bound = compute_bound(config, stream).copy(update={"config_hash": self.config_hash})
        self.workload.write(bound.to_json() + "\n", self.workload.paths.bound(index))

        rows = [
            {
                "point": index,
                **params,
                "metric": metric,
                "bound": value,
                "estimate": math.nan,
                "se": math.nan,
                "verdict": Verdict.PASS.value.label,
            }
            for metric, value in (
                ("tv", bound.total_tv),
                ("d2", bound.total_d2),
                ("tv-k-based", bound.extras["k_based_tv"]),
            )
        ]
        return PointResult(
            index=index,
            params=params,
            status=PointResult.PointStatus(passed=True),
            verdict=Verdict.PASS,
            rows=rows,
        )

    def _identities(self, config: ExperimentConfig, stream: RngStream) -> list[IdentityReport]:
        settings = identity_settings(config)
        checks, radius = settings.checks, settings.ball_radius
        process, retention = config.model.process, config.model.retention
        window = observation_window(config)
        metric = BoundedMetric(norm=config.model.norm)
        reports = []

        if "slivnyak" in checks:
            for i, h in enumerate(SlivnyakFunction):
                reports.append(
                    check_slivnyak_mecke(
                        process.intensity,
                        window,
                        h,
                        config.replicates,
                        stream.substream(10 + i),
                        radius=radius,
                        metric=metric,
                    )
                )

        if "moments" in checks:
            patterns = iter(draw_patterns(config, config.replicates, stream.substream(20)))
            moments = check_thinning_moments(
                lambda _: next(patterns),
                retention_field(config),
                window,
                config.replicates,
                stream.substream(21),
            )
            reports += [moments.first, moments.second]

        if "density" in checks:
            reports.append(
                check_density_normalization(
                    lambda pattern: poisson_density(pattern, process.intensity, window),
                    window,
                    config.replicates,
                    stream.substream(30),
                    name="poisson density normalization",
                )
            )

        if "thinned_density" in checks:
            size = settings.test_pattern_size
            generator = stream.substream(40).generator()
            points = window.lower_array + window.side_lengths * generator.random(
                (size, window.dimension)
            )
            pattern = PointPattern(points=points, window=window)
            estimate = thinned_density_mc(
                pattern,
                lambda union: poisson_density(union, process.intensity, window),
                retention_field(config),
                window,
                config.replicates,
                stream.substream(41),
            )
            reports.append(
                IdentityReport(
                    name="thinned poisson density",
                    lhs=estimate.value,
                    rhs=poisson_density(pattern, retention.p * process.intensity, window),
                    stderr=estimate.stderr,
                    replicates=estimate.replicates,
                )
            )

        return reports

    def _identities_point(
        self, index: int, params: dict[str, float], config: ExperimentConfig, stream: RngStream
    ) -> PointResult:
        reports = self._identities(config, stream)
        self.workload.write_json(
            [json.loads(report.to_json()) for report in reports],
            self.workload.paths.identities(index),
        )

        for report in reports:
            level = logging.INFO if report.passed() else logging.WARNING
            logger.log(level, f"Identity {report.name}: gap {report.gap:.3f} SE")

        passed = all(report.passed() for report in reports)
        return PointResult(
            index=index,
            params=params,
            status=PointResult.PointStatus(passed=True),
            verdict=Verdict.PASS if passed else Verdict.FAIL,
            rows=[
                {
                    "point": index,
                    **params,
                    "metric": report.name,
                    "bound": report.rhs,
                    "estimate": report.lhs,
                    "se": report.stderr,
                    "verdict": (Verdict.PASS if report.passed() else Verdict.FAIL).value.label,
                }
                for report in reports
            ],
        )

    def _summaries_point(
        self, index: int, params: dict[str, float], config: ExperimentConfig, stream: RngStream
    ) -> PointResult:
        settings = config.summaries
        norm = config.model.norm
        patterns = draw_patterns(config, config.replicates, stream.substream(0))
        window = observation_window(config)

        m1 = config.model.process.intensity
        if config.model.process.kind == "strauss":
            m1 = estimate_intensity(patterns, window).value

        estimates = [
            estimate_K(patterns, m1, settings.r_grid, norm),
            estimate_G(patterns, settings.r_grid, norm),
        ]
        if settings.displacement is not None:
            estimates.append(
                estimate_G2(
                    patterns,
                    np.asarray(settings.displacement),
                    settings.r_grid,
                    norm,
                    isotropic=settings.isotropic,
                )
            )

        frame = pd.concat(
            [e.to_frame().assign(statistic=e.statistic) for e in estimates], ignore_index=True
        )
        self.workload.write_frame(
            frame[["statistic", "r", "value", "stderr", "n"]], self.workload.paths.summaries(index)
        )

        flagged = any(e.flagged for e in estimates)
        return PointResult(
            index=index,
            params=params,
            status=PointResult.PointStatus(passed=True),
            verdict=Verdict.UNINFORMATIVE if flagged else Verdict.PASS,
            rows=[
                {
                    "point": index,
                    **params,
                    "metric": f"{e.statistic}({r:g})",
                    "bound": math.nan,
                    "estimate": value,
                    "se": stderr,
                    "verdict": Verdict.PASS.value.label,
                }
                for e in estimates
                for r, value, stderr in zip(e.r, e.values, e.stderr)
            ],
        )

    # --- REPORTS ---

    def _write_rate_table(self, results: list[PointResult]) -> float | None:
        rows = []
        for result in results:
            if not result.status.passed:
                continue
            values = {row["metric"]: row["bound"] for row in result.rows}
            rows.append(
                {
                    "n": result.params.get("n", self.config.model.retention.n),
                    "tv": values["tv"],
                    "tv_k_based": values["tv-k-based"],
                }
            )

        if not rows:
            return None

        table = pd.DataFrame(rows).sort_values("n", ignore_index=True)
        slope = None
        usable = table[(table["n"] > 1) & (table["tv"] > 0)]
        if len(usable) >= 2:
            slope = float(
                np.polyfit(np.log(np.log(usable["n"])), np.log(usable["tv"]), deg=1)[0]
            )
            logger.info(f"Fitted slope of log bound against log log n: {slope:.4f}")

        self.workload.write_frame(table, self.workload.paths.rate_table)
        return slope

    def _write_plot_data(self, results: list[PointResult]) -> None:
        rows = [row for result in results for row in result.rows]
        columns = ["point", *sorted(self.config.sweep), "metric", "bound", "estimate", "se", "verdict"]
        frame = pd.DataFrame(rows, columns=columns)
        self.workload.write_frame(frame, self.workload.paths.plot_data)

    def _write_manifest(self, summary: ExperimentSummary) -> None:
        manifest = {
            "name": self.config.name,
            "kind": self.config.kind,
            "config_hash": self.config_hash,
            "seed": self.config.seed,
            "config": json.loads(self.config.json(exclude={"output", "threads"})),
            "points": [result.as_dict() for result in summary.results],
            "verdict": summary.verdict.value.label,
            "slope": summary.slope,
        }
        self.workload.write_json(manifest, self.workload.paths.manifest)

    def run_bounds(self) -> list[BoundReport | None]:
        """Bound reports of every sweep point, without certification."""
        reports = []
        for index, params in enumerate(sweep_points(self.config)):
            config = point_config(self.config, params)
            stream = self.stream.substream(index)
            try:
                patterns = None
                if config.model.process.kind == "strauss":
                    patterns = draw_patterns(config, config.replicates, stream.substream(0))
                bound = compute_bound(config, stream.substream(1), patterns=patterns)
            except Exception as e:
                logger.error(f"Bound for sweep point {index} {params} failed: {e}")
                reports.append(None)
                continue

            bound = bound.copy(update={"config_hash": self.config_hash})
            self.workload.write(bound.to_json() + "\n", self.workload.paths.bound(index))
            reports.append(bound)

        return reports
