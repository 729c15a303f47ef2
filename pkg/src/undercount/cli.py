"""Command-line pipeline over CSV inputs and a JSON configuration file.

Runs the estimation chain end to end: fit the reporting model on the survey,
audit positivity, estimate the latent total and rates, fit the corrected and
unadjusted event models (plus the GEE variant when incidents have multiple
rows), and emit diagnostics. Every report is a pure function of the input
files, the configuration, and the seed.

Exit codes: 0 success, 1 input/validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import report
from .dataio import FeatureEncoder, attach_external_propensities, read_offenses_csv, read_survey_csv
from .design_glm import FitConfig, design_covariance, fit_weighted_logit, predict_pi
from .diagnostics import (
    FocalSlopeConfig,
    focal_slope,
    positivity_report,
    weighted_auc,
    weighted_calibration,
)
from .exceptions import EncodingMismatch, SchemaError, UndercountError
from .gee import build_clusters, fit_arrest_gee
from .reweight import estimate_population_total, estimate_rates, grouped_rates
from .simulate import SCENARIOS, generate_offenses, generate_survey, run_coverage, true_values
from .twostep import arrest_sandwich_covariance, compare_unadjusted, fit_arrest_model

__all__ = ["PipelineConfig", "run_pipeline", "main"]

_CONFIG_KEYS = {
    "survey_csv",
    "offense_csv",
    "external_propensity_csv",
    "features",
    "encodings",
    "positivity_floor",
    "allow_positivity_violations",
    "lonely_psu",
    "population_fraction",
    "group_by",
    "seed",
    "output_dir",
    "solver",
    "focal",
}


@dataclass(frozen=True)
class PipelineConfig:
    """Validated pipeline settings; see ``PipelineConfig.from_file``."""

    offense_csv: Path
    x_features: list[str]
    z_features: list[str] = field(default_factory=list)
    survey_csv: Path | None = None
    external_propensity_csv: Path | None = None
    encodings: dict = field(default_factory=dict)
    positivity_floor: float = 0.01
    allow_positivity_violations: bool = False
    lonely_psu: str = "fail"
    population_fraction: float = 0.0
    group_by: list[str] = field(default_factory=list)
    seed: int = 0
    output_dir: Path = Path("reports")
    solver: FitConfig = FitConfig()
    focal: dict | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path = Path(".")) -> "PipelineConfig":
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise SchemaError(f"unknown configuration keys: {sorted(unknown)}")
        if "offense_csv" not in raw:
            raise SchemaError("configuration must name an offense_csv")
        features = raw.get("features", {})
        if "x" not in features or not features["x"]:
            raise SchemaError('configuration must declare features["x"]')

        def _path(key):
            value = raw.get(key)
            return None if value is None else base_dir / value

        solver = FitConfig(**raw.get("solver", {}))
        return cls(
            offense_csv=base_dir / raw["offense_csv"],
            x_features=list(features["x"]),
            z_features=list(features.get("z", [])),
            survey_csv=_path("survey_csv"),
            external_propensity_csv=_path("external_propensity_csv"),
            encodings=raw.get("encodings", {}),
            positivity_floor=float(raw.get("positivity_floor", 0.01)),
            allow_positivity_violations=bool(raw.get("allow_positivity_violations", False)),
            lonely_psu=raw.get("lonely_psu", "fail"),
            population_fraction=float(raw.get("population_fraction", 0.0)),
            group_by=list(raw.get("group_by", [])),
            seed=int(raw.get("seed", 0)),
            output_dir=base_dir / raw.get("output_dir", "reports"),
            solver=solver,
            focal=raw.get("focal"),
        )


_ALL_STAGES = ("reporting", "rates", "arrest", "gee", "diagnose")


def run_pipeline(
    config: PipelineConfig,
    stages: tuple[str, ...] = _ALL_STAGES,
    output_dir: Path | None = None,
) -> dict[str, Path]:
    """Execute the requested stages and write the report bundle.

    Returns a mapping from artifact name to the written path. Warnings raised
    by any stage are collected into ``warnings.txt``.
    """
    out = Path(output_dir) if output_dir is not None else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    collected: list[str] = []

    def _emit(name: str, content: str) -> None:
        path = out / name
        path.write_text(content)
        written[name] = path

    def _csv(name: str, rows, fieldnames) -> None:
        path = out / name
        report.write_csv(path, rows, fieldnames)
        written[name] = path

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")

        z_encoder = FeatureEncoder(config.z_features, config.encodings) if config.z_features else None
        x_encoder = FeatureEncoder(config.x_features, config.encodings)

        model = None
        survey = None
        if config.survey_csv is not None:
            if z_encoder is None:
                raise SchemaError('a survey file needs declared features["z"]')
            survey = read_survey_csv(config.survey_csv, z_encoder)
            model = fit_weighted_logit(survey, config.solver)
            if config.population_fraction > 0.0:
                model = dataclasses.replace(
                    model, population_fraction=config.population_fraction
                )
            model = design_covariance(model, survey, lonely_psu=config.lonely_psu)
            table = report.WaldTable(
                model.feature_names, model.gamma_hat, model.sigma_v, model.n_survey
            )
            _emit("reporting_model.txt", report.render_fit_text("Reporting propensity model", table))
            _csv(
                "reporting_model.csv",
                report.fit_table_rows(table),
                ["name", "estimate", "odds_ratio", "se", "odds_ratio_se", "p_value", "signif"],
            )

        offenses, group_values = read_offenses_csv(
            config.offense_csv,
            z_encoder if model is not None else None,
            x_encoder,
            config.group_by,
        )
        if config.external_propensity_csv is not None:
            offenses = attach_external_propensities(
                offenses, config.external_propensity_csv, config.offense_csv
            )
        if model is None and offenses.pi_external is None:
            raise EncodingMismatch(
                "no first stage available: provide a survey file to fit the reporting "
                "model, or a pi_hat column / external propensity file"
            )
        # external propensities, when present, take precedence (sensitivity mode)
        stage_model = None if offenses.pi_external is not None else model

        positivity = positivity_report(
            offenses,
            stage_model,
            floor=config.positivity_floor,
            groups=group_values[config.group_by[0]] if config.group_by else None,
        )
        if not positivity.passed and not config.allow_positivity_violations:
            from .exceptions import PositivityViolation

            raise PositivityViolation(
                f"{positivity.n_below} of {positivity.n} propensities below the floor "
                f"{positivity.floor} (minimum {positivity.minimum:.3g}); "
                "set allow_positivity_violations to proceed"
            )

        floor = config.positivity_floor
        allow = config.allow_positivity_violations
        if "rates" in stages:
            total = estimate_population_total(offenses, stage_model, floor, allow)
            pi_star, q_star = estimate_rates(offenses, stage_model, floor, allow)
            lines = [
                report.render_rate_lines("population total", total),
                report.render_rate_lines("reporting rate", pi_star),
                report.render_rate_lines("event rate", q_star),
            ]
            _emit("rates.txt", "\n".join(lines) + "\n")
            _csv(
                "rates.csv",
                report.rate_table_rows(
                    [("total", total), ("reporting_rate", pi_star), ("event_rate", q_star)]
                ),
                ["estimand", "value", "se", "ci_low", "ci_high", "kappa", "first_stage_omitted"],
            )
            for column in config.group_by:
                grouped = grouped_rates(offenses, stage_model, group_values[column], floor, allow)
                _csv(
                    f"rates_by_{column}.csv",
                    report.grouped_rate_rows(grouped),
                    [
                        "group",
                        "n_records",
                        "estimand",
                        "value",
                        "se",
                        "ci_low",
                        "ci_high",
                        "kappa",
                    ],
                )

        fieldnames = ["name", "estimate", "odds_ratio", "se", "odds_ratio_se", "p_value", "signif"]
        if "arrest" in stages:
            fit = fit_arrest_model(offenses, stage_model, config.solver, floor, allow)
            fit = arrest_sandwich_covariance(fit, offenses, stage_model, floor, allow)
            _emit("arrest_adjusted.txt", report.render_fit_text("Event model (adjusted)", fit))
            _csv("arrest_adjusted.csv", report.fit_table_rows(fit), fieldnames)
            plain = compare_unadjusted(offenses, config.solver)
            _emit(
                "arrest_unadjusted.txt",
                report.render_fit_text("Event model (reported records only)", plain),
            )
            _csv("arrest_unadjusted.csv", report.fit_table_rows(plain), fieldnames)

        has_clusters = np.unique(offenses.incident_id).size < offenses.n
        if "gee" in stages and has_clusters:
            clusters = build_clusters(offenses)
            gee = fit_arrest_gee(clusters, stage_model, config.solver, floor, allow)
            _emit("arrest_gee.txt", report.render_fit_text("Event model (GEE)", gee))
            _csv("arrest_gee.csv", report.fit_table_rows(gee), fieldnames)

        if "diagnose" in stages:
            lines = [
                "Positivity audit",
                "================",
                f"floor: {positivity.floor:g}",
                f"records: {positivity.n}",
                f"minimum propensity: {positivity.minimum:.6g}",
                "quantiles: "
                + ", ".join(f"q{int(q * 100):02d}={v:.6g}" for q, v in positivity.quantiles.items()),
                f"below floor: {positivity.n_below}",
                f"verdict: {'pass' if positivity.passed else 'fail'}",
            ]
            for label in sorted(positivity.groups, key=str):
                g = positivity.groups[label]
                lines.append(
                    f"  group {label}: n={g.n} min={g.minimum:.6g} below={g.n_below} "
                    f"{'pass' if g.passed else 'fail'}"
                )
            if survey is not None and model is not None:
                predictions = predict_pi(model, survey.z)
                auc = weighted_auc(predictions, survey.r, survey.weight)
                lines += ["", "Reporting model discrimination", f"weighted AUC: {auc:.6g}"]
                bins = weighted_calibration(predictions, survey.r, survey.weight)
                _csv(
                    "calibration.csv",
                    [
                        {
                            "bin_low": f"{b.bin_low:.17g}",
                            "bin_high": f"{b.bin_high:.17g}",
                            "n": str(b.n),
                            "mean_predicted": f"{b.mean_predicted:.17g}",
                            "observed_rate": f"{b.observed_rate:.17g}",
                            "ci_low": f"{b.ci_low:.17g}",
                            "ci_high": f"{b.ci_high:.17g}",
                        }
                        for b in bins
                    ],
                    ["bin_low", "bin_high", "n", "mean_predicted", "observed_rate", "ci_low", "ci_high"],
                )
            _emit("diagnostics.txt", "\n".join(lines) + "\n")

            if config.focal:
                focal_cfg = FocalSlopeConfig(
                    n_boot=int(config.focal.get("n_boot", 50)),
                    resample_size=int(config.focal.get("resample_size", 10_000)),
                    seed=config.seed,
                    features=tuple(config.focal["features"]) if config.focal.get("features") else None,
                    fit_config=config.solver,
                )
                fsr = focal_slope(
                    offenses, stage_model, config.focal["coefficient"], focal_cfg, floor, allow
                )
                scatter = []
                summary = []
                for cell in fsr.cells:
                    for b, est in enumerate(cell.estimates):
                        scatter.append(
                            {
                                "feature": cell.feature,
                                "cell": f"{cell.center:.17g}",
                                "replicate": str(b),
                                "estimate": f"{est:.17g}",
                            }
                        )
                    summary.append(
                        {
                            "feature": cell.feature,
                            "cell": f"{cell.center:.17g}",
                            "n_records": str(cell.n_records),
                            "n_boot": str(cell.estimates.size),
                            "n_failed": str(cell.n_failed),
                            "mean_estimate": f"{cell.mean:.17g}",
                        }
                    )
                _csv("focal_slope.csv", scatter, ["feature", "cell", "replicate", "estimate"])
                _csv(
                    "focal_slope_summary.csv",
                    summary,
                    ["feature", "cell", "n_records", "n_boot", "n_failed", "mean_estimate"],
                )

        messages = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
        collected.extend(messages)

    _emit("warnings.txt", "\n".join(collected) + ("\n" if collected else ""))
    manifest = {
        "offense_csv": str(config.offense_csv),
        "survey_csv": None if config.survey_csv is None else str(config.survey_csv),
        "seed": config.seed,
        "stages": list(stages),
        "outputs": sorted(written),
    }
    _emit("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return written


def _write_simulated(scenario: str, out: Path, seed: int, n_survey: int | None, n_offenses: int | None) -> None:
    builder = SCENARIOS[scenario]
    kwargs: dict = {"seed": seed}
    if n_survey is not None:
        kwargs["n_survey"] = n_survey
    if n_offenses is not None:
        key = "n_incidents" if scenario == "clustered" else "n_offenses"
        kwargs[key] = n_offenses
    try:
        spec = builder(**kwargs)
    except TypeError as exc:
        raise SchemaError(f"scenario {scenario!r} rejected options: {exc}") from exc
    out.mkdir(parents=True, exist_ok=True)

    draw = generate_offenses(spec, rep=0)
    reported = draw.reported
    n_z = len(spec.z_levels)
    z_cols = {name: reported.z[:, 1 + j] for j, name in enumerate(spec.z_names[1:])}
    x_cols = {
        name: reported.x[:, 1 + n_z + j] for j, name in enumerate(spec.x_names[1 + n_z :])
    }
    offender_pos = np.concatenate(
        [np.arange(c) for c in np.bincount(reported.incident_id.astype(int)) if c > 0]
    )
    rows = []
    for i in range(reported.n):
        row = {
            "incident_id": str(int(reported.incident_id[i])),
            "offender_id": str(int(offender_pos[i])),
            "a": str(int(reported.a[i])),
        }
        for name, col in z_cols.items():
            row[name] = format(col[i], ".17g")
        for name, col in x_cols.items():
            row[name] = format(col[i], ".17g")
        row["group"] = f"g{int(z_cols[spec.z_names[1]][i])}"
        if spec.pi_one:
            row["pi_hat"] = "1"
        rows.append(row)
    fieldnames = ["incident_id", "offender_id", "a", *z_cols, *x_cols, "group"]
    if spec.pi_one:
        fieldnames.append("pi_hat")
    report.write_csv(out / "offenses.csv", rows, fieldnames)

    config: dict = {
        "offense_csv": "offenses.csv",
        "features": {"z": list(spec.z_names[1:]), "x": list(spec.x_names[1:])},
        "group_by": ["group"],
        "seed": seed,
        "output_dir": "reports",
    }
    if not spec.pi_one:
        survey = generate_survey(spec, rep=0)
        srows = []
        for i in range(survey.n):
            srow = {
                "stratum": str(survey.stratum[i]),
                "psu": str(survey.psu[i]),
                "weight": format(survey.weight[i], ".17g"),
                "r": str(int(survey.r[i])),
            }
            for j, name in enumerate(survey.feature_names[1:]):
                srow[name] = format(survey.z[i, 1 + j], ".17g")
            srows.append(srow)
        report.write_csv(
            out / "survey.csv",
            srows,
            ["stratum", "psu", "weight", "r", *survey.feature_names[1:]],
        )
        config["survey_csv"] = "survey.csv"

    truth = true_values(spec)
    truth_payload = {
        "scenario": scenario,
        "seed": seed,
        "gamma0": list(truth.gamma0),
        "theta0": list(truth.theta0),
        "n_incidents": int(spec.n_offenses),
        "pi_star": truth.pi_star,
        "q_star": truth.q_star,
        "alpha0": truth.alpha0,
    }
    (out / "truth.json").write_text(json.dumps(truth_payload, indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="undercount",
        description="Rate and event-model estimation from records observed only when reported.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def _with_config(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--output-dir", default=None, help="override the configured output directory")
        return p

    _with_config("fit-reporting", "fit the reporting-propensity model on the survey")
    _with_config("estimate-rates", "estimate the latent total and the reporting/event rates")
    _with_config("fit-arrest", "fit the corrected and unadjusted event models")
    _with_config("fit-arrest-gee", "fit the clustered (GEE) event model")
    _with_config("diagnose", "positivity audit, AUC/calibration, optional focal slopes")
    _with_config("pipeline", "run every stage and emit the full report bundle")

    sim = sub.add_parser("simulate", help="write synthetic survey/offense CSVs with known truth")
    sim.add_argument("--scenario", choices=sorted(SCENARIOS), default="single")
    sim.add_argument("--output-dir", required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--n-survey", type=int, default=None)
    sim.add_argument("--n-offenses", type=int, default=None)

    cov = sub.add_parser("coverage", help="Monte Carlo bias/RMSE/coverage study")
    cov.add_argument("--scenario", choices=sorted(SCENARIOS), default="single")
    cov.add_argument("--reps", type=int, default=500)
    cov.add_argument("--output-dir", required=True)
    cov.add_argument("--seed", type=int, default=0)
    cov.add_argument("--n-survey", type=int, default=None)
    cov.add_argument("--n-offenses", type=int, default=None)
    return parser


_STAGES_BY_COMMAND = {
    "fit-reporting": ("reporting",),
    "estimate-rates": ("reporting", "rates"),
    "fit-arrest": ("reporting", "arrest"),
    "fit-arrest-gee": ("reporting", "gee"),
    "diagnose": ("reporting", "diagnose"),
    "pipeline": _ALL_STAGES,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            _write_simulated(
                args.scenario, Path(args.output_dir), args.seed, args.n_survey, args.n_offenses
            )
            return 0
        if args.command == "coverage":
            builder = SCENARIOS[args.scenario]
            kwargs: dict = {"seed": args.seed}
            if args.n_survey is not None:
                kwargs["n_survey"] = args.n_survey
            if args.n_offenses is not None:
                kwargs["n_incidents" if args.scenario == "clustered" else "n_offenses"] = (
                    args.n_offenses
                )
            spec = builder(**kwargs)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                study = run_coverage(spec, reps=args.reps)
            out = Path(args.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            rows = report.summary_csv_rows(study.summary())
            report.write_csv(
                out / "coverage.csv",
                rows,
                ["parameter", "truth", "mean", "bias", "rmse", "coverage", "coverage_se", "n_used"],
            )
            lines = [f"scenario: {spec.name}", f"replications: {args.reps}"] + [
                f"{r['parameter']}: coverage={r['coverage'] or 'n/a'} bias={r['bias']}"
                for r in rows
            ]
            (out / "coverage.txt").write_text("\n".join(lines) + "\n")
            return 0

        config = PipelineConfig.from_file(args.config)
        stages = _STAGES_BY_COMMAND[args.command]
        output_dir = Path(args.output_dir) if args.output_dir else None
        run_pipeline(config, stages=stages, output_dir=output_dir)
        return 0
    except (SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except UndercountError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
