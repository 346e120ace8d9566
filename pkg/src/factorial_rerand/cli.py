"""Command-line front end.

Every data-bearing command reads a JSON run configuration describing the
design, the covariate file, and the acceptance rule, so a study is fully
reproducible from one file plus a seed.  Flags override the config where
that is useful (seed, draw budget, workers, output locations).

Exit codes: 2 usage, 3 unreadable or invalid input files, 4 dimension
mismatches, 5 singular covariance, 6 draw budget exhausted.
"""

from __future__ import annotations

import functools
import logging
import secrets
import sys
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import click
import numpy as np

from . import __version__, engine, fileio, simlab
from .assignment import expand_assignment
from .balance import CovariateMatrix, balance_profile, fit_covariance
from .criteria import (
    AcceptanceRule,
    ThresholdMode,
    Tier,
    accept,
    implied_acceptance_probability,
    resolve_thresholds,
)
from .design import DesignSpec, Order, build_design_matrix, expand_model_matrix
from .errors import (
    DimensionMismatch,
    MaxDrawsExceeded,
    ParseError,
    SingularCovariance,
)

_EXIT_CODES: tuple[tuple[type[Exception], int], ...] = (
    (ParseError, 3),
    (DimensionMismatch, 4),
    (SingularCovariance, 5),
    (MaxDrawsExceeded, 6),
)


def _with_exit_codes(fn: Callable) -> Callable:
    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except tuple(cls for cls, _ in _EXIT_CODES) as exc:
            code = next(c for cls, c in _EXIT_CODES if isinstance(exc, cls))
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(code) from exc

    return wrapper


@click.group()
@click.version_option(__version__, prog_name="rerand")
@click.option("-v", "--verbose", is_flag=True, help="Log progress details.")
def main(verbose: bool) -> None:
    """Rerandomization for balanced two-level factorial designs."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# ---------------------------------------------------------------------------
# Config handling


def _require_keys(section: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ParseError(f"{where}: unknown keys {sorted(unknown)}")


def _load_config(path: str) -> tuple[dict[str, Any], Path]:
    cfg = fileio.read_json(path)
    _require_keys(
        cfg,
        {
            "design",
            "covariates",
            "rule",
            "seed",
            "max_draws",
            "workers",
            "output_dir",
            "simulation",
            "calibration",
            "test",
        },
        path,
    )
    return cfg, Path(path).resolve().parent


def _section(cfg: Mapping[str, Any], key: str, where: str) -> dict[str, Any]:
    try:
        section = cfg[key]
    except KeyError:
        raise ParseError(f"{where}: missing required section {key!r}") from None
    if not isinstance(section, dict):
        raise ParseError(f"{where}: section {key!r} must be an object")
    return section


def _config_design(cfg: Mapping[str, Any], where: str) -> DesignSpec:
    section = _section(cfg, "design", where)
    _require_keys(section, {"k", "r", "order", "factor_names"}, f"{where}: design")
    try:
        return DesignSpec(
            k=section["k"],
            r=section["r"],
            order=Order(section.get("order", "lexicographic")),
            factor_names=(
                tuple(section["factor_names"]) if "factor_names" in section else None
            ),
        )
    except KeyError as exc:
        raise ParseError(f"{where}: design is missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ParseError(f"{where}: design: {exc}") from None


def _config_covariates(
    cfg: Mapping[str, Any], where: str, base: Path
) -> CovariateMatrix:
    section = _section(cfg, "covariates", where)
    _require_keys(section, {"path", "columns"}, f"{where}: covariates")
    if "path" not in section:
        raise ParseError(f"{where}: covariates is missing 'path'")
    x = fileio.read_covariates(_resolve(section["path"], base))
    if "columns" in section:
        try:
            x = x.subset(section["columns"])
        except (ValueError, KeyError) as exc:
            raise ParseError(f"{where}: covariates: {exc}") from None
    return x


def _config_rule(cfg: Mapping[str, Any], where: str, base: Path, p: int) -> AcceptanceRule:
    section = _section(cfg, "rule", where)
    _require_keys(section, {"mode", "tiers", "thresholds_path"}, f"{where}: rule")
    mode = ThresholdMode(section.get("mode", "chi2"))
    try:
        if "thresholds_path" in section:
            if "tiers" in section:
                raise ValueError("give either tiers or thresholds_path, not both")
            thresholds, p_file = fileio.read_thresholds(
                _resolve(section["thresholds_path"], base)
            )
            if p_file != p:
                raise ValueError(
                    f"thresholds were calibrated for {p_file} covariates, have {p}"
                )
            return AcceptanceRule.from_thresholds(thresholds, p=p, mode=mode)
        tiers = []
        for i, entry in enumerate(section.get("tiers", [])):
            _require_keys(
                entry, {"name", "effects", "a", "joint_prob"}, f"{where}: rule tier {i}"
            )
            tiers.append(
                Tier(
                    name=entry.get("name", f"tier{i + 1}"),
                    effects=tuple(entry["effects"]),
                    a=entry.get("a"),
                    joint_prob=entry.get("joint_prob"),
                )
            )
        return AcceptanceRule(tiers=tuple(tiers), p=p, mode=mode)
    except KeyError as exc:
        raise ParseError(f"{where}: rule tier is missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ParseError(f"{where}: rule: {exc}") from None


def _config_model(section: Mapping[str, Any], where: str) -> simlab.OutcomeModel:
    _require_keys(
        section,
        {"effects", "beta", "grand_mean", "sigma", "target_r2"},
        f"{where}: model",
    )
    try:
        return simlab.OutcomeModel(
            effects={str(k): float(v) for k, v in section.get("effects", {}).items()},
            beta=np.asarray(section["beta"], dtype=np.float64),
            grand_mean=float(section.get("grand_mean", 0.0)),
            sigma=section.get("sigma"),
            target_r2=section.get("target_r2"),
        )
    except KeyError as exc:
        raise ParseError(f"{where}: model is missing {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: model: {exc}") from None


def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _resolve_seed(flag: int | None, cfg: Mapping[str, Any]) -> tuple[int, bool]:
    if flag is not None:
        return flag, False
    if cfg.get("seed") is not None:
        return int(cfg["seed"]), False
    return secrets.randbits(63), True


def _out_dir(flag: str | None, cfg: Mapping[str, Any], base: Path) -> Path:
    if flag is not None:
        return Path(flag)
    return _resolve(str(cfg.get("output_dir", ".")), base)


def _effect_list(text: str | None) -> tuple[str, ...] | None:
    if text is None:
        return None
    labels = tuple(part.strip() for part in text.split(",") if part.strip())
    if not labels:
        raise ParseError("effect list is empty")
    return labels


def _echo_table(rows: list[Sequence[Any]], header: Sequence[str]) -> None:
    table = [list(map(str, header))] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    for i, row in enumerate(table):
        click.echo("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            click.echo("  ".join("-" * w for w in widths))


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


# ---------------------------------------------------------------------------
# Commands


@main.command()
@click.option("--k", "k", type=int, required=True, help="Number of factors.")
@click.option("--r", "r", type=int, default=1, show_default=True, help="Units per combination.")
@click.option(
    "--order",
    type=click.Choice([o.value for o in Order]),
    default=Order.LEXICOGRAPHIC.value,
    show_default=True,
)
@click.option("--factors", help="Comma-separated factor names.")
@click.option("--expanded", is_flag=True, help="Include interaction and mean columns.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Write CSV here instead of stdout.")
@_with_exit_codes
def design(k: int, r: int, order: str, factors: str | None, expanded: bool, output: str | None) -> None:
    """Print the design matrix for a 2^K factorial."""
    try:
        spec = DesignSpec(k=k, r=r, order=Order(order), factor_names=_effect_list(factors))
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    dm = build_design_matrix(spec)
    if expanded:
        mm = expand_model_matrix(dm)
        header = ["combination", *mm.labels]
        body = mm.entries
    else:
        header = ["combination", *spec.factor_names]
        body = dm.entries
    lines = [",".join(header)]
    for j in range(dm.n_combinations):
        lines.append(",".join([str(j + 1), *(str(int(v)) for v in body[j])]))
    text = "\n".join(lines) + "\n"
    if output:
        Path(output).write_text(text, encoding="utf-8")
        click.echo(f"wrote {output}")
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--max-draws", type=int, help="Override the draw budget.")
@click.option("--workers", type=int, help="Worker threads for candidate scanning.")
@click.option("-o", "--output-dir", type=click.Path(file_okay=False), help="Override the output directory.")
@_with_exit_codes
def allocate(
    config_path: str,
    seed: int | None,
    max_draws: int | None,
    workers: int | None,
    output_dir: str | None,
) -> None:
    """Draw an accepted allocation and write it with its audit trail."""
    cfg, base = _load_config(config_path)
    spec = _config_design(cfg, config_path)
    x = _config_covariates(cfg, config_path, base)
    rule = _config_rule(cfg, config_path, base, x.p)
    seed_value, generated = _resolve_seed(seed, cfg)
    budget = max_draws if max_draws is not None else int(cfg.get("max_draws", engine.DEFAULT_MAX_DRAWS))
    nworkers = workers if workers is not None else int(cfg.get("workers", 1))

    result = engine.rerandomize(x, spec, rule, seed_value, max_draws=budget, workers=nworkers)

    out = _out_dir(output_dir, cfg, base)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_allocation(out / "allocation.csv", result.allocation)
    fileio.write_json(out / "manifest.json", result.manifest(version=__version__))
    fileio.write_balance_report(out / "balance.csv", result.profile)

    if generated:
        click.echo(f"seed: {seed_value} (generated)")
    else:
        click.echo(f"seed: {seed_value}")
    click.echo(
        f"accepted after {result.draws_attempted} draws "
        f"(implied acceptance probability {result.acceptance_probability:.3g})"
    )
    rows = [
        (eff, result.profile.m(eff), result.thresholds[eff])
        for eff in rule.monitored_effects
    ]
    _echo_table(rows, header=("effect", "distance", "threshold"))
    click.echo(f"wrote {out / 'allocation.csv'}, {out / 'manifest.json'}, {out / 'balance.csv'}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--allocation", "allocation_path", required=True, type=click.Path(exists=False))
@click.option("--effects", help="Comma-separated effects to profile (default: monitored).")
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Write the report CSV here.")
@_with_exit_codes
def diagnose(
    config_path: str, allocation_path: str, effects: str | None, output: str | None
) -> None:
    """Profile covariate balance for an existing allocation."""
    cfg, base = _load_config(config_path)
    spec = _config_design(cfg, config_path)
    x = _config_covariates(cfg, config_path, base)
    rule = _config_rule(cfg, config_path, base, x.p)
    alloc = fileio.read_allocation(allocation_path, spec)
    mm = expand_model_matrix(build_design_matrix(spec))
    w = expand_assignment(alloc, mm)
    labels = _effect_list(effects) or rule.monitored_effects
    profile = balance_profile(x, w, labels)
    thresholds = resolve_thresholds(rule)
    rows = []
    for eff in labels:
        a = thresholds.get(eff)
        verdict = "" if a is None else ("PASS" if profile.m(eff) <= a else "FAIL")
        rows.append((eff, profile.m(eff), "" if a is None else a, verdict))
    _echo_table(rows, header=("effect", "distance", "threshold", "status"))
    ok = accept(balance_profile(x, w, rule.monitored_effects), rule)
    click.echo(f"acceptance rule: {'PASS' if ok else 'FAIL'}")
    if output:
        fileio.write_balance_report(output, profile)
        click.echo(f"wrote {output}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--allocation", "allocation_path", required=True, type=click.Path(exists=False))
@click.option("--outcomes", "outcomes_path", required=True, type=click.Path(exists=False))
@click.option("--effects", help="Comma-separated effects to test (default: monitored).")
@click.option("--draws", type=int, help="Reference draws (default 1000, or config test.n_draws).")
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--workers", type=int)
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Write results JSON here.")
@_with_exit_codes
def test(
    config_path: str,
    allocation_path: str,
    outcomes_path: str,
    effects: str | None,
    draws: int | None,
    seed: int | None,
    workers: int | None,
    output: str | None,
) -> None:
    """Randomization test over the accepted-allocation reference set."""
    cfg, base = _load_config(config_path)
    spec = _config_design(cfg, config_path)
    x = _config_covariates(cfg, config_path, base)
    rule = _config_rule(cfg, config_path, base, x.p)
    section = cfg.get("test", {})
    _require_keys(section, {"n_draws", "effects"}, f"{config_path}: test")
    alloc = fileio.read_allocation(allocation_path, spec)
    y = fileio.read_outcomes(outcomes_path, n=spec.n)
    labels = _effect_list(effects) or tuple(section.get("effects", ())) or rule.monitored_effects
    n_draws = draws if draws is not None else int(section.get("n_draws", 1000))
    seed_value, generated = _resolve_seed(seed, cfg)
    nworkers = workers if workers is not None else int(cfg.get("workers", 1))

    result = engine.randomization_test(
        y, alloc, x, rule, labels, n_draws=n_draws, seed=seed_value, workers=nworkers
    )
    if generated:
        click.echo(f"seed: {seed_value} (generated)")
    rows = [
        (eff, result.observed[eff], result.p_values[eff])
        for eff in result.effects
    ]
    _echo_table(rows, header=("effect", "estimate", "p_value"))
    click.echo(f"reference draws: {result.n_reference} (scanned {result.draws_scanned})")
    if output:
        fileio.write_json(output, result.to_dict())
        click.echo(f"wrote {output}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--reps", type=int, help="Override simulation.n_reps.")
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--workers", type=int)
@click.option("-o", "--output-dir", type=click.Path(file_okay=False), help="Override the output directory.")
@_with_exit_codes
def simulate(
    config_path: str,
    reps: int | None,
    seed: int | None,
    workers: int | None,
    output_dir: str | None,
) -> None:
    """Monte Carlo study of the acceptance rule's effect on balance and estimates."""
    cfg, base = _load_config(config_path)
    spec = _config_design(cfg, config_path)
    x = _config_covariates(cfg, config_path, base)
    rule = _config_rule(cfg, config_path, base, x.p)
    section = _section(cfg, "simulation", config_path)
    _require_keys(
        section,
        {"study", "n_reps", "model", "effects", "report_covariates"},
        f"{config_path}: simulation",
    )
    kind = section.get("study", "variance")
    if kind not in ("variance", "independence"):
        raise ParseError(f"{config_path}: simulation.study must be 'variance' or 'independence'")
    n_reps = reps if reps is not None else int(section.get("n_reps", 1000))
    seed_value, generated = _resolve_seed(seed, cfg)
    nworkers = workers if workers is not None else int(cfg.get("workers", 1))
    out = _out_dir(output_dir, cfg, base) / "study"
    if generated:
        click.echo(f"seed: {seed_value} (generated)")

    if kind == "independence":
        report = simlab.independence_study(spec, x, rule, n_reps, seed_value, workers=nworkers)
        click.echo(
            f"joint acceptance {report.joint_rate:.4f} "
            f"(rule implies {report.rule_implied_joint:.4f}, "
            f"marginal product {report.empirical_product:.4f})"
        )
        click.echo(f"largest indicator correlation: {report.max_indicator_corr:.4f}")
    else:
        model = _config_model(section["model"], config_path) if "model" in section else None
        report_x = None
        if "report_covariates" in section:
            full = fileio.read_covariates(
                _resolve(_section(cfg, "covariates", config_path)["path"], base)
            )
            try:
                report_x = full.subset(section["report_covariates"])
            except (ValueError, KeyError) as exc:
                raise ParseError(f"{config_path}: report_covariates: {exc}") from None
        labels = tuple(section["effects"]) if "effects" in section else None
        report = simlab.variance_study(
            spec, x, rule, model, n_reps, seed_value,
            effects=labels, report_x=report_x, workers=nworkers,
        )
        click.echo(
            f"acceptance rate {report.acceptance_rate:.4f} over {report.draws_scanned} draws"
        )
        rows = [
            (o, red, report.d_pct_reduction.shape[1])
            for o, red in report.mean_reduction_by_order().items()
        ]
        _echo_table(rows, header=("interaction_order", "mean_pct_reduction", "covariates"))
        if report.r2_realized is not None:
            click.echo(f"unit-level R^2: {report.r2_realized:.4f}")
    written = fileio.write_study_report(out, report)
    click.echo("wrote " + ", ".join(str(p) for p in written))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--draws", type=int, help="Override calibration.n_draws.")
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--workers", type=int)
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Write thresholds JSON here.")
@_with_exit_codes
def calibrate(
    config_path: str,
    draws: int | None,
    seed: int | None,
    workers: int | None,
    output: str | None,
) -> None:
    """Estimate per-effect thresholds as empirical distance quantiles."""
    cfg, base = _load_config(config_path)
    spec = _config_design(cfg, config_path)
    x = _config_covariates(cfg, config_path, base)
    section = _section(cfg, "calibration", config_path)
    _require_keys(section, {"effects", "q", "n_draws"}, f"{config_path}: calibration")
    try:
        labels = tuple(section["effects"])
        q = section["q"]
    except KeyError as exc:
        raise ParseError(f"{config_path}: calibration is missing {exc.args[0]!r}") from None
    n_draws = draws if draws is not None else int(section.get("n_draws", 10_000))
    seed_value, generated = _resolve_seed(seed, cfg)
    nworkers = workers if workers is not None else int(cfg.get("workers", 1))
    try:
        thresholds = simlab.calibrate_empirical_thresholds(
            spec, x, labels, q, n_draws, seed_value, workers=nworkers
        )
    except ValueError as exc:
        raise ParseError(f"{config_path}: calibration: {exc}") from None
    if generated:
        click.echo(f"seed: {seed_value} (generated)")
    _echo_table(sorted(thresholds.items()), header=("effect", "threshold"))
    target = Path(output) if output else _out_dir(None, cfg, base) / "thresholds.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_thresholds(target, thresholds, p=x.p)
    click.echo(f"wrote {target}")


if __name__ == "__main__":
    main()
