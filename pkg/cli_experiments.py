"""
cli_experiments.py - Command-line entry point for the percolation experiments

Usage:
    python cli_experiments.py count --d 2 --n 5 --alpha 0
    python cli_experiments.py estimate-lambda --d 1 --p 0.5 --alpha 0.25 --n 200 --reps 100
    python cli_experiments.py rho --d 1 --T 10000

Every sub-command resolves its options as defaults < LPP_* environment < TOML
file (--config) < flags, writes manifest.json before computing, then a JSON
result and a CSV table into --out. Exit codes: 0 success, 2 invalid input,
3 resource refusal, 1 anything else.
"""

import argparse
import logging
import sys
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic import ValidationError as PydanticValidationError
from pydantic.alias_generators import to_camel

from analytic import (
    DEFAULT_RHO_T,
    AnnealedParams,
    alpha_one,
    collision_rho,
    largest_exact_t,
    meeting_table_bytes,
    phi,
    phi_curve_rows,
    phi_root,
    second_moment_sum,
)
from errors import LatticeLabError, ValidationError
from estimators import (
    CSV_HEADER,
    ExperimentConfig,
    annealed_mean_check,
    estimate_lambda,
    estimate_m,
    lambda_above_one_probe,
    lambda_profile,
    markov_check,
    prob_n_zero,
    scaling_fit,
    second_moment_ratio,
)
from exact_counting import (
    build_count_layers,
    build_max_layers,
    count_n,
    count_table_rows,
    estimate_peak_bytes,
    max_weight,
    resolve_backend,
    threshold,
    validate_against_oracle,
)
from lattice_core import Environment, GraphMode
from results_store import ensure_writable, finish_manifest, get_result_path, save_json, write_csv, write_manifest
from shared_config import CODE_VERSION, Settings, load_shared_config, load_toml_config, merge_config
from utils.logging_config import configure_logging

logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, Any] = {
    "d": 1,
    "mode": "semi",
    "p": 0.5,
    "b": 1.0,
    "reps": 1,
    "seed": 0,
    "T": None,
    "mc_samples": 0,
    "horizon": 1000,
    "sample_size": 64,
    "seeds": 10,
    "force": False,
    "dry_run": False,
    "verbose": False,
}


class RunOptions(BaseModel):
    """Fully resolved options of one sub-command run"""

    model_config = ConfigDict(extra="forbid")

    command: str
    d: int = Field(ge=1)
    mode: str
    p: float
    b: float = Field(gt=0.0)
    alpha: Optional[float] = None
    alpha_grid: Optional[List[float]] = None
    n: Optional[int] = Field(default=None, ge=0)
    n_grid: Optional[List[int]] = None
    p_grid: Optional[List[float]] = None
    reps: int = Field(ge=1)
    seed: int = Field(ge=0, lt=2 ** 64)
    backend: Optional[str] = None
    threads: int = Field(ge=1)
    out: str
    memory_budget: int = Field(gt=0)
    oracle_cap: int = Field(gt=0)
    n_max: Optional[int] = Field(default=None, ge=1)
    T: Optional[int] = Field(default=None, ge=1)
    mc_samples: int = Field(ge=0)
    horizon: int = Field(ge=1)
    beta: Optional[float] = None
    rho: Optional[float] = None
    sample_size: int = Field(ge=1)
    seeds: int = Field(ge=1)
    oracle_n_max: Optional[int] = Field(default=None, ge=0)
    config: Optional[str] = None
    force: bool
    dry_run: bool
    verbose: bool

    @field_validator("alpha_grid", "p_grid", mode="before")
    @classmethod
    def _float_grid(cls, value):
        if isinstance(value, str):
            return [float(part) for part in value.split(",") if part.strip()]
        return value

    @field_validator("n_grid", mode="before")
    @classmethod
    def _int_grid(cls, value):
        if isinstance(value, str):
            return [int(part) for part in value.split(",") if part.strip()]
        return value

    def params(self) -> AnnealedParams:
        return AnnealedParams.of(self.p, self.d, self.mode)

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig(
            params=self.params(),
            n=self.n,
            n_grid=self.n_grid,
            alpha=self.alpha,
            alpha_grid=self.alpha_grid,
            reps=self.reps,
            master_seed=self.seed,
            backend=self.backend or "log",
            memory_budget=self.memory_budget,
            threads=self.threads,
            b=self.b,
        )

    def lengths(self) -> List[int]:
        return list(self.n_grid) if self.n_grid else ([self.n] if self.n is not None else [])


class RunManifest(BaseModel):
    model_config = ConfigDict(alias_generator=to_camel, populate_by_name=True)

    subcommand: str
    config: Dict[str, Any]
    master_seed: int
    outputs: List[str]
    started_at: str
    finished_at: Optional[str] = None
    code_version: str = CODE_VERSION


def resolve_options(args: argparse.Namespace, settings: Settings) -> RunOptions:
    """
    Merge defaults < environment settings < TOML file < explicit flags

    Args:
        args: Parsed flags (unset flags are None)
        settings: Ambient settings from LPP_* variables

    Returns:
        RunOptions: Validated options
    """
    ambient = {
        "threads": settings.threads,
        "out": settings.out_dir,
        "memory_budget": settings.memory_budget_bytes,
        "oracle_cap": settings.oracle_cap,
    }
    flags = {key: value for key, value in vars(args).items() if value is not None}
    toml_layer = load_toml_config(flags["config"]) if "config" in flags else None
    merged = merge_config(DEFAULTS, ambient, toml_layer, flags)
    try:
        return RunOptions(**merged)
    except PydanticValidationError as e:
        raise ValidationError(f"Invalid options for {merged.get('command')}: {e}") from e


def _require(value, flag: str):
    if value is None:
        raise ValidationError(f"{flag} is required for this command")
    return value


def _environment(options: RunOptions, n: int) -> Environment:
    return Environment.from_config(
        options.model_dump(include={"seed", "p", "b", "mode", "d"}),
        n_max=options.n_max or max(n, 1),
    )


def _max_dp_bytes(options: RunOptions) -> int:
    graph = GraphMode.from_name(options.mode, options.d)
    n = max(options.lengths() or [0])
    return 12 * (graph.reachable_count(n) + graph.reachable_count(max(n - 1, 0)))


def _count_dp_bytes(options: RunOptions, default_backend: str) -> int:
    graph = GraphMode.from_name(options.mode, options.d)
    n = max(options.lengths() or [0])
    backend = resolve_backend(options.backend or default_backend, n, graph.out_degree)
    return estimate_peak_bytes(graph, n, backend)


Computation = Callable[[], Tuple[Any, List[str], List[List[Any]], List[str]]]


def run_command(options: RunOptions, name: str, estimated_bytes: int, compute: Computation) -> int:
    """
    Shared flow of every sub-command: dry run, manifest, computation, outputs

    Args:
        options: Resolved options
        name: Base name of the output files
        estimated_bytes: Estimated peak memory reported by --dry-run
        compute: Returns (JSON payload, CSV header, CSV rows, summary lines)

    Returns:
        int: Process exit code
    """
    json_path = get_result_path(options.out, name, "json")
    csv_path = get_result_path(options.out, name, "csv")
    resolved = options.model_dump(mode="json")

    if options.dry_run:
        print(f"Resolved configuration for {options.command}:")
        for key in sorted(resolved):
            print(f"  {key} = {resolved[key]}")
        print(f"Estimated peak memory: {estimated_bytes} bytes")
        return 0

    for path in (json_path, csv_path):
        ensure_writable(path, options.force)

    manifest = RunManifest(
        subcommand=options.command,
        config=resolved,
        master_seed=options.seed,
        outputs=[json_path, csv_path],
        started_at=datetime.now().isoformat(),
    )
    write_manifest(options.out, manifest, force=options.force)

    payload, header, rows, summary = compute()
    save_json(json_path, payload, force=options.force)
    write_csv(csv_path, header, rows, force=options.force)

    manifest.finished_at = datetime.now().isoformat()
    finish_manifest(options.out, manifest)
    for line in summary:
        print(line)
    return 0


def _experiment_outputs(result) -> Tuple[Any, List[str], List[List[Any]]]:
    return result, CSV_HEADER, result.csv_rows()


def _headline(result) -> str:
    a = result.aggregates
    return (
        f"{result.rows[0].statistic} (n={result.rows[0].n}): mean {a.mean:.6g}, "
        f"95% CI [{a.ci_low:.6g}, {a.ci_high:.6g}], zero fraction {result.zero_fraction:.3f}"
    )


def cmd_count(options: RunOptions) -> int:
    """Count table of one environment, N_n(alpha), the maximal weight and the conservation check"""
    n = _require(options.n, "--n")
    alpha = options.alpha if options.alpha is not None else 0.0
    threshold(alpha, n)

    def compute():
        env = _environment(options, n)
        layers = build_count_layers(env, n, backend=options.backend or "auto", memory_budget=options.memory_budget)
        count = count_n(layers, n, alpha)
        best = max_weight(build_max_layers(env, n, keep_levels=[n], memory_budget=options.memory_budget), n)
        conserved = layers[-1].is_conserved()
        payload = {
            "environment": env.describe(),
            "n": n,
            "alpha": alpha,
            "threshold": threshold(alpha, n),
            "backend": layers[-1].backend.value,
            "count": None if count.exact is None else str(count.exact),
            "log10Count": count.log10,
            "maxWeight": best,
            "conserved": conserved,
            "codeVersion": CODE_VERSION,
        }
        shown = f"N={count.exact}" if count.exact is not None else f"log10 N={count.log10:.12g}"
        summary = [shown, f"max_weight={best}", f"conservation={'ok' if conserved else 'FAILED'}"]
        return payload, ["level", "endpoint", "k", "count", "backend"], list(count_table_rows(layers)), summary

    return run_command(options, "count", _count_dp_bytes(options, "auto"), compute)


def cmd_estimate_m(options: RunOptions) -> int:
    config = options.experiment_config()

    def compute():
        result = estimate_m(config)
        return (*_experiment_outputs(result), [_headline(result), f"means by n: {result.extras['meanSequence']}"])

    return run_command(options, "estimate_m", _max_dp_bytes(options), compute)


def cmd_estimate_lambda(options: RunOptions) -> int:
    config = options.experiment_config()
    profile = bool(options.alpha_grid and len(options.alpha_grid) > 1)

    def compute():
        result = lambda_profile(config) if profile else estimate_lambda(config)
        return (*_experiment_outputs(result), [_headline(result)])

    return run_command(options, "lambda_profile" if profile else "estimate_lambda", _count_dp_bytes(options, "log"), compute)


def cmd_annealed_check(options: RunOptions) -> int:
    config = options.experiment_config()

    def compute():
        result = annealed_mean_check(config)
        return (*_experiment_outputs(result), [_headline(result), f"z-scores: {result.extras['zScores']}"])

    return run_command(options, "annealed_check", _count_dp_bytes(options, "log"), compute)


def cmd_markov_check(options: RunOptions) -> int:
    config = options.experiment_config()

    def compute():
        result = markov_check(config)
        return (*_experiment_outputs(result), [f"within Markov bound: {result.extras['withinMarkovBound']}"])

    return run_command(options, "markov_check", _count_dp_bytes(options, "log"), compute)


def cmd_prob_zero(options: RunOptions) -> int:
    config = options.experiment_config()

    def compute():
        result = prob_n_zero(config)
        extras = result.extras
        return (*_experiment_outputs(result), [f"P(N=0) by t: {extras['frequencies']}", f"fitted slope: {extras['slope']}"])

    return run_command(options, "prob_zero", _max_dp_bytes(options), compute)


def cmd_second_moment(options: RunOptions) -> int:
    config = options.experiment_config()

    def compute():
        result = second_moment_ratio(config)
        if options.beta is not None and options.rho is not None:
            result.extras["secondMomentSum"] = {
                f"n={n},alpha={alpha}": second_moment_sum(n, alpha, options.beta, options.rho, config.params)
                for n in config.lengths()
                for alpha in config.alphas()
            }
        return (*_experiment_outputs(result), [_headline(result)])

    return run_command(options, "second_moment", _count_dp_bytes(options, "log"), compute)


def cmd_scaling(options: RunOptions) -> int:
    p_grid = _require(options.p_grid, "--p-grid")
    template = options.experiment_config()

    def compute():
        fit, results = scaling_fit(p_grid, template)
        payload = {
            "fit": fit.model_dump(mode="json", by_alias=True),
            "results": [r.model_dump(mode="json", by_alias=True) for r in results],
            "codeVersion": CODE_VERSION,
        }
        rows = [[p] + row for p, r in zip(p_grid, results) for row in r.csv_rows()]
        summary = [f"gamma={fit.gamma:.4f} (95% CI [{fit.gamma_ci_low:.4f}, {fit.gamma_ci_high:.4f}]), reference 1/(d+1)={fit.expected_gamma:.4f}"]
        return payload, ["p"] + CSV_HEADER, rows, summary

    return run_command(options, "scaling", _max_dp_bytes(options), compute)


def cmd_rho(options: RunOptions) -> int:
    params = options.params()
    T = options.T
    if T is None:
        T = largest_exact_t(params.graph.d, options.memory_budget)
        if T < DEFAULT_RHO_T:
            logger.warning(f"Exact truncation lowered to T={T} to fit d={params.graph.d} into {options.memory_budget} bytes")

    def compute():
        estimate = collision_rho(
            params,
            T,
            options.mc_samples,
            horizon=options.horizon,
            seed=options.seed,
            threads=options.threads,
            memory_budget=options.memory_budget,
        )
        rows = [[t, value] for t, value in enumerate(estimate.lower_bound_curve, start=1)]
        summary = [f"lowerBound={estimate.lower_bound:.6f}", f"pointEstimate={estimate.point_estimate:.6f}"]
        return estimate, ["T", "lowerBound"], rows, summary

    return run_command(options, "rho", meeting_table_bytes(params.graph.d, T), compute)


def cmd_phi_curve(options: RunOptions) -> int:
    params = options.params()
    alphas = options.alpha_grid or ([options.alpha] if options.alpha is not None else [round(a, 6) for a in np.linspace(0.0, 1.0, 21)])
    lengths = options.lengths()

    def compute():
        rows = phi_curve_rows(alphas, params, lengths)
        root = phi_root(params)
        payload = {
            "params": params.model_dump(mode="json", by_alias=True),
            "alphaOne": alpha_one(params),
            "treeRoot": root.model_dump(mode="json", by_alias=True),
            "rows": rows,
            "codeVersion": CODE_VERSION,
        }
        header = ["alpha", "phi"] + [f"expectedRoot_n{n}" for n in lengths]
        summary = [f"alpha={alpha:g} phi={phi(alpha, params):.10g}" for alpha in alphas]
        summary.append(f"phi root (tree value of M) = {root.alpha:.10f}" + (f" [{root.boundary}]" if root.boundary else ""))
        return payload, header, rows, summary

    return run_command(options, "phi_curve", 0, compute)


def cmd_interchange_check(options: RunOptions) -> int:
    config = options.experiment_config()

    def compute():
        result = lambda_above_one_probe(config, sample_size=options.sample_size)
        extras = result.extras
        summary = [
            f"fraction with N^(1/n) > 1: {extras['fractionAboveOne']:.3f}",
            f"interchange bound holds in every replication: {extras['allBoundsHold']}",
            f"degenerate replications: {extras['degenerateReps']}",
        ]
        return (*_experiment_outputs(result), summary)

    return run_command(options, "interchange_check", _count_dp_bytes(options, "log"), compute)


def cmd_oracle_validate(options: RunOptions) -> int:
    n_max = options.oracle_n_max if options.oracle_n_max is not None else _require(options.n, "--nmax")
    failures: List[Dict[str, Any]] = []

    def compute():
        failures.extend(validate_against_oracle(options.d, n_max, options.seeds, options.p, options.seed, options.mode, options.oracle_cap))
        payload = {"d": options.d, "mode": options.mode, "nMax": n_max, "seeds": options.seeds, "mismatches": failures, "codeVersion": CODE_VERSION}
        rows = [[f["seed"], f["n"], f["dp_endpoints"], f["oracle_endpoints"]] for f in failures]
        summary = [f"{options.seeds} seeds x n=0..{n_max}: {len(failures)} mismatches"]
        return payload, ["seed", "n", "dpEndpoints", "oracleEndpoints"], rows, summary

    code = run_command(options, "oracle_validate", 0, compute)
    if failures:
        logger.error(f"DP count tables disagree with enumeration in {len(failures)} cases")
        return 1
    return code


COMMANDS: Dict[str, Callable[[RunOptions], int]] = {
    "count": cmd_count,
    "estimate-m": cmd_estimate_m,
    "estimate-lambda": cmd_estimate_lambda,
    "annealed-check": cmd_annealed_check,
    "markov-check": cmd_markov_check,
    "prob-zero": cmd_prob_zero,
    "second-moment": cmd_second_moment,
    "scaling": cmd_scaling,
    "rho": cmd_rho,
    "phi-curve": cmd_phi_curve,
    "interchange-check": cmd_interchange_check,
    "oracle-validate": cmd_oracle_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--d", type=int, help="Spatial dimension")
    common.add_argument("--mode", choices=["semi", "full"], help="Semi-oriented (default) or fully oriented lattice")
    common.add_argument("--p", type=float, help="Probability of a good site")
    common.add_argument("--b", type=float, help="Log-weight of a good site (reported only)")
    common.add_argument("--alpha", type=float, help="Threshold density")
    common.add_argument("--alpha-grid", help="Comma-separated thresholds")
    common.add_argument("--n", type=int, help="Path length")
    common.add_argument("--n-grid", help="Comma-separated path lengths")
    common.add_argument("--reps", type=int, help="Number of environment replications")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--backend", choices=["exact", "log", "auto"], help="Count backend")
    common.add_argument("--threads", type=int, help="Worker threads")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--config", help="TOML file with option values")
    common.add_argument("--memory-budget", type=int, help="Memory budget in bytes")
    common.add_argument("--n-max", type=int, help="Coordinate bound of the environment")
    common.add_argument("--force", action="store_true", default=None, help="Overwrite existing outputs")
    common.add_argument("--dry-run", action="store_true", default=None, help="Print the resolved configuration and memory estimate only")
    common.add_argument("--verbose", action="store_true", default=None, help="Debug logging")

    parser = argparse.ArgumentParser(description="Semi-oriented last-passage percolation experiments", allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], allow_abbrev=False)

    sub.choices["second-moment"].add_argument("--beta", type=float, help="Fraction of n covered by the second-moment sum")
    sub.choices["second-moment"].add_argument("--rho", type=float, help="Collision probability used in the second-moment sum")
    sub.choices["scaling"].add_argument("--p-grid", help="Comma-separated values of p")
    sub.choices["rho"].add_argument("--T", type=int, help="Truncation level of the exact computation")
    sub.choices["rho"].add_argument("--mc-samples", type=int, help="Monte Carlo walk pairs")
    sub.choices["rho"].add_argument("--horizon", type=int, help="Monte Carlo horizon")
    sub.choices["interchange-check"].add_argument("--sample-size", type=int, help="Family members generated per replication")
    sub.choices["oracle-validate"].add_argument("--nmax", dest="oracle_n_max", type=int, help="Largest path length checked")
    sub.choices["oracle-validate"].add_argument("--seeds", type=int, help="Number of random environments")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main function
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = load_shared_config()
    except LatticeLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    configure_logging("lpp-lab", "DEBUG" if args.verbose else settings.log_level, settings.log_file)
    try:
        options = resolve_options(args, settings)
        logger.debug(f"Resolved options: {options.model_dump()}")
        return COMMANDS[options.command](options)
    except LatticeLabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception:
        logger.exception("Unexpected failure")
        return 1


if __name__ == "__main__":
    sys.exit(main())
