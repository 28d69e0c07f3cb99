"""Command-line entry point: run, eval, distill, rounds-sweep.

Config files are TOML (or JSON, by extension). Validation collects every
violation with its field path before failing. Exit codes: 0 success, 1
validation/usage error, 2 runtime failure. Diagnostics go to stderr;
machine-readable output goes only to the declared output files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from . import __version__, distill, prompts
from .backend import (
    Backend,
    BackendBinding,
    DecodingConfig,
    HttpBackend,
    RetryPolicy,
    ScriptedBackend,
)
from .evaluate import DEFAULT_LAMBDA_MATCH, EvalError, evaluate_run
from .model import Aspect, ReviewPair, load_results, load_review_pairs, write_results
from .pipeline import ROLES, PipelineConfig, run_corpus
from .prompts import CATALOG_VERSION

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class ConfigError(Exception):
    """Carries every violation found, each prefixed with its field path."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {v}" for v in violations))


@dataclass(frozen=True)
class AppConfig:
    pipeline: PipelineConfig
    lambda_match: float = DEFAULT_LAMBDA_MATCH
    script_path: str | None = None
    http_timeout_s: float = 120.0
    log_level: str = "INFO"

    def normalized(self) -> dict:
        """Stable dump of the effective configuration (no credentials)."""
        return {
            "pipeline": {
                "rounds": self.pipeline.rounds,
                "dedup_threshold": self.pipeline.dedup_threshold,
                "aspects": [a.value for a in self.pipeline.aspects],
                "parallel_aspects": self.pipeline.parallel_aspects,
                "candidate_workers": self.pipeline.candidate_workers,
                "pair_workers": self.pipeline.pair_workers,
            },
            "bindings": {
                role: {
                    "model": b.model,
                    "base_url": b.base_url,
                    "credential_env": b.credential_env,
                    "decoding": {
                        "temperature": b.decoding.temperature,
                        "top_p": b.decoding.top_p,
                        "top_k": b.decoding.top_k,
                        "seed": b.decoding.seed,
                        "max_output_tokens": b.decoding.max_output_tokens,
                    },
                    "retry": {
                        "max_attempts": b.retry.max_attempts,
                        "backoff_s": b.retry.backoff_s,
                    },
                }
                for role, b in sorted(self.pipeline.bindings.items())
            },
            "eval": {"lambda_match": self.lambda_match},
            "script": self.script_path,
            "http_timeout_s": self.http_timeout_s,
            "log_level": self.log_level,
        }


def load_raw_config(path: str | Path) -> dict:
    text = Path(path).read_bytes()
    if str(path).endswith(".json"):
        return json.loads(text)
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(text.decode("utf-8"))


def _expect(raw: Any, types: tuple, path: str, violations: list[str], default: Any) -> Any:
    if raw is None:
        return default
    if isinstance(raw, bool) and bool not in types:
        violations.append(f"{path}: expected {types}, got bool")
        return default
    if not isinstance(raw, types):
        violations.append(f"{path}: expected {types}, got {type(raw).__name__}")
        return default
    return raw


def _parse_aspects(raw: Any, path: str, violations: list[str]) -> tuple[Aspect, ...]:
    if raw is None:
        return tuple(Aspect)
    if not isinstance(raw, list) or not raw:
        violations.append(f"{path}: expected a non-empty list of aspect names")
        return tuple(Aspect)
    aspects = []
    for index, name in enumerate(raw):
        try:
            aspects.append(Aspect.from_string(str(name)))
        except ValueError:
            violations.append(f"{path}[{index}]: unknown aspect {name!r}")
    seen = set()
    unique = []
    for aspect in aspects:
        if aspect not in seen:
            seen.add(aspect)
            unique.append(aspect)
    return tuple(unique) if unique else tuple(Aspect)


def _parse_binding(role: str, raw: Any, scripted: bool, violations: list[str]) -> BackendBinding:
    path = f"bindings.{role}"
    if raw is None:
        if not scripted:
            violations.append(f"{path}: binding required in live mode (model, base_url)")
        return BackendBinding(role=role)
    if not isinstance(raw, dict):
        violations.append(f"{path}: expected a table")
        return BackendBinding(role=role)
    model = _expect(raw.get("model"), (str,), f"{path}.model", violations, "scripted")
    base_url = _expect(raw.get("base_url"), (str,), f"{path}.base_url", violations, "")
    credential_env = raw.get("credential_env")
    if credential_env is not None and not isinstance(credential_env, str):
        violations.append(f"{path}.credential_env: expected a string")
        credential_env = None
    if not scripted:
        if not raw.get("model"):
            violations.append(f"{path}.model: required in live mode")
        if not raw.get("base_url"):
            violations.append(f"{path}.base_url: required in live mode")

    decoding_raw = raw.get("decoding") or {}
    if not isinstance(decoding_raw, dict):
        violations.append(f"{path}.decoding: expected a table")
        decoding_raw = {}
    temperature = _expect(
        decoding_raw.get("temperature"), (int, float), f"{path}.decoding.temperature", violations, 0.0
    )
    top_p = _expect(decoding_raw.get("top_p"), (int, float), f"{path}.decoding.top_p", violations, 1.0)
    top_k = decoding_raw.get("top_k")
    if top_k is not None and (isinstance(top_k, bool) or not isinstance(top_k, int)):
        violations.append(f"{path}.decoding.top_k: expected an integer")
        top_k = None
    seed = _expect(decoding_raw.get("seed"), (int,), f"{path}.decoding.seed", violations, 42)
    max_tokens = _expect(
        decoding_raw.get("max_output_tokens"),
        (int,),
        f"{path}.decoding.max_output_tokens",
        violations,
        8192,
    )
    retry_raw = raw.get("retry") or {}
    if not isinstance(retry_raw, dict):
        violations.append(f"{path}.retry: expected a table")
        retry_raw = {}
    max_attempts = _expect(
        retry_raw.get("max_attempts"), (int,), f"{path}.retry.max_attempts", violations, 3
    )
    backoff_s = _expect(
        retry_raw.get("backoff_s"), (int, float), f"{path}.retry.backoff_s", violations, 0.5
    )

    try:
        decoding = DecodingConfig(
            temperature=float(temperature),
            top_p=float(top_p),
            top_k=top_k,
            seed=seed,
            max_output_tokens=max_tokens,
        )
    except ValueError as exc:
        violations.append(f"{path}.decoding: {exc}")
        decoding = DecodingConfig()
    try:
        retry = RetryPolicy(max_attempts=max_attempts, backoff_s=float(backoff_s))
    except ValueError as exc:
        violations.append(f"{path}.retry: {exc}")
        retry = RetryPolicy()
    return BackendBinding(
        role=role,
        model=model,
        base_url=base_url,
        credential_env=credential_env,
        decoding=decoding,
        retry=retry,
    )


def validate_config(raw: dict, script_path: str | None = None) -> AppConfig:
    """Apply defaults, collect all violations, and build the app config.

    With a script path present the run is scripted and live-endpoint fields
    become optional; without one, every role needs a full binding.
    """
    violations: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config root: expected a table/object"])

    script_path = script_path or raw.get("script")
    if script_path is not None and not isinstance(script_path, str):
        violations.append("script: expected a string path")
        script_path = None
    scripted = script_path is not None

    pipeline_raw = raw.get("pipeline") or {}
    if not isinstance(pipeline_raw, dict):
        violations.append("pipeline: expected a table")
        pipeline_raw = {}
    rounds = _expect(pipeline_raw.get("rounds"), (int,), "pipeline.rounds", violations, 4)
    if isinstance(rounds, int) and rounds < 1:
        violations.append("pipeline.rounds: must be >= 1")
        rounds = 4
    threshold = _expect(
        pipeline_raw.get("dedup_threshold"),
        (int, float),
        "pipeline.dedup_threshold",
        violations,
        0.9,
    )
    if not 0 < float(threshold) <= 1:
        violations.append("pipeline.dedup_threshold: must be in (0, 1]")
        threshold = 0.9
    aspects = _parse_aspects(pipeline_raw.get("aspects"), "pipeline.aspects", violations)
    parallel_aspects = _expect(
        pipeline_raw.get("parallel_aspects"), (bool,), "pipeline.parallel_aspects", violations, True
    )
    candidate_workers = _expect(
        pipeline_raw.get("candidate_workers"), (int,), "pipeline.candidate_workers", violations, 1
    )
    if candidate_workers < 1:
        violations.append("pipeline.candidate_workers: must be >= 1")
        candidate_workers = 1
    pair_workers = _expect(
        pipeline_raw.get("pair_workers"), (int,), "pipeline.pair_workers", violations, 1
    )
    if pair_workers < 1:
        violations.append("pipeline.pair_workers: must be >= 1")
        pair_workers = 1

    bindings_raw = raw.get("bindings") or {}
    if not isinstance(bindings_raw, dict):
        violations.append("bindings: expected a table with one entry per role")
        bindings_raw = {}
    for role in bindings_raw:
        if role not in ROLES:
            violations.append(f"bindings.{role}: unknown role (expected one of {list(ROLES)})")
    bindings = {
        role: _parse_binding(role, bindings_raw.get(role), scripted, violations)
        for role in ROLES
    }

    eval_raw = raw.get("eval") or {}
    if not isinstance(eval_raw, dict):
        violations.append("eval: expected a table")
        eval_raw = {}
    lambda_match = _expect(
        eval_raw.get("lambda_match"), (int, float), "eval.lambda_match", violations, DEFAULT_LAMBDA_MATCH
    )
    if not 0 <= float(lambda_match) <= 1:
        violations.append("eval.lambda_match: must be in [0, 1]")
        lambda_match = DEFAULT_LAMBDA_MATCH

    http_timeout = _expect(
        raw.get("http_timeout_s"), (int, float), "http_timeout_s", violations, 120.0
    )
    log_level = _expect(raw.get("log_level"), (str,), "log_level", violations, "INFO")
    if log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        violations.append(f"log_level: unknown level {log_level!r}")
        log_level = "INFO"

    if violations:
        raise ConfigError(violations)

    pipeline = PipelineConfig(
        bindings=bindings,
        rounds=rounds,
        dedup_threshold=float(threshold),
        aspects=aspects,
        parallel_aspects=parallel_aspects,
        candidate_workers=candidate_workers,
        pair_workers=pair_workers,
    )
    return AppConfig(
        pipeline=pipeline,
        lambda_match=float(lambda_match),
        script_path=script_path,
        http_timeout_s=float(http_timeout),
        log_level=log_level.upper(),
    )


def _load_app_config(config_path: str | None, script_flag: str | None) -> AppConfig:
    if config_path is None:
        return validate_config({}, script_path=script_flag)
    path = Path(config_path)
    if not path.exists():
        raise ConfigError([f"config: file not found: {path}"])
    return validate_config(load_raw_config(path), script_path=script_flag)


def _build_backend(config: AppConfig) -> Backend:
    if config.script_path is not None:
        script = Path(config.script_path)
        if not script.exists():
            raise ConfigError([f"script: file not found: {script}"])
        return ScriptedBackend.from_file(script)
    return HttpBackend(timeout_s=config.http_timeout_s)


def _require_file(path: str, label: str) -> Path:
    resolved = Path(path)
    if not resolved.exists():
        raise ConfigError([f"{label}: file not found: {resolved}"])
    return resolved


def _apply_overrides(config: AppConfig, args: argparse.Namespace) -> AppConfig:
    pipeline = config.pipeline
    changes: dict[str, Any] = {}
    if getattr(args, "rounds", None) is not None:
        if args.rounds < 1:
            raise ConfigError(["--rounds: must be >= 1"])
        changes["rounds"] = args.rounds
    if getattr(args, "aspects", None):
        violations: list[str] = []
        aspects = _parse_aspects(
            [a.strip() for a in args.aspects.split(",") if a.strip()], "--aspects", violations
        )
        if violations:
            raise ConfigError(violations)
        changes["aspects"] = aspects
    if changes:
        pipeline = PipelineConfig(
            bindings=pipeline.bindings,
            rounds=changes.get("rounds", pipeline.rounds),
            dedup_threshold=pipeline.dedup_threshold,
            aspects=changes.get("aspects", pipeline.aspects),
            parallel_aspects=pipeline.parallel_aspects,
            candidate_workers=pipeline.candidate_workers,
            pair_workers=pipeline.pair_workers,
        )
        return AppConfig(
            pipeline=pipeline,
            lambda_match=config.lambda_match,
            script_path=config.script_path,
            http_timeout_s=config.http_timeout_s,
            log_level=config.log_level,
        )
    return config


def _dump_prompts(pairs: Sequence[ReviewPair], config: AppConfig, index: int) -> None:
    """Print every prompt the pipeline would render for one pair."""
    if not 0 <= index < len(pairs):
        raise ConfigError([f"--pair-index: {index} out of range (corpus has {len(pairs)} pairs)"])
    pair = pairs[index]

    def banner(title: str) -> None:
        print(f"{'=' * 70}\n{title}\n{'=' * 70}")

    for aspect in config.pipeline.aspects:
        banner(f"extraction prompt / aspect {aspect.value}")
        print(prompts.render_extraction_prompt(aspect, pair.review_a.text, pair.review_b.text))
    if pair.gold:
        evidence = pair.gold[0].evidence
        quote_a, quote_b = evidence.quote_a, evidence.quote_b
        source = "first gold instance"
    else:
        quote_a = pair.review_a.sentence_texts()[0] if pair.review_a.sentences else pair.review_a.text
        quote_b = pair.review_b.sentence_texts()[0] if pair.review_b.sentences else pair.review_b.text
        source = "first sentences (no gold available)"
    banner(f"initial scoring prompt / evidence from {source}")
    print(prompts.render_initial_score_prompt(pair.review_a.text, pair.review_b.text, quote_a, quote_b))
    banner("teacher system prompt")
    print(prompts.render_teacher_system_prompt())
    banner("teacher user prompt")
    print(prompts.render_teacher_user_prompt(pair.paper_id, pair.review_a.text, pair.review_b.text))


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_app_config(args.config, args.script)
    config = _apply_overrides(config, args)
    pairs = load_review_pairs(_require_file(args.input, "--input"))
    if args.dump_prompts:
        _dump_prompts(pairs, config, args.pair_index)
        return EXIT_OK
    backend = _build_backend(config)
    results = run_corpus(pairs, config.pipeline, backend)
    write_results(results, args.output, include_timing=False)
    n_instances = sum(len(r.instances) for r in results)
    n_failed = sum(any(d.stage == "pair" for d in r.diagnostics) for r in results)
    logger.info(
        "processed %d pairs -> %d instances (%d failed pairs); wrote %s",
        len(pairs),
        n_instances,
        n_failed,
        args.output,
    )
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    predictions = load_results(_require_file(args.pred, "--pred"))
    golds = load_review_pairs(_require_file(args.gold, "--gold"))
    report = evaluate_run(predictions, golds, lambda_match=args.lambda_match)
    with open(args.report, "w", encoding="utf-8") as handle:
        json.dump(report.to_dict(), handle, indent=2, ensure_ascii=False)
        handle.write("\n")
    logger.info(
        "evaluated %d pairs: fnr=%s fpr=%s kappa=%s composite=%s; wrote %s",
        report.n_pairs,
        report.confusion.fnr,
        report.confusion.fpr,
        report.kappa,
        report.composite_c,
        args.report,
    )
    return EXIT_OK


def _cmd_distill(args: argparse.Namespace) -> int:
    if not 0 < args.train_frac < 1:
        raise ConfigError(["--train-frac: must be in (0, 1)"])
    config = _load_app_config(args.config, args.script)
    pairs = load_review_pairs(_require_file(args.input, "--input"))
    backend = _build_backend(config)
    records = distill.generate_teacher_dataset(pairs, config.pipeline, backend)
    manifest = distill.write_dataset(records, args.out, args.train_frac, args.seed)
    logger.info(
        "distilled %d records (%d train / %d validation, %d instances) into %s",
        manifest["n_records"],
        manifest["n_train"],
        manifest["n_validation"],
        manifest["n_instances"],
        args.out,
    )
    return EXIT_OK


def _format_metric(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def _cmd_rounds_sweep(args: argparse.Namespace) -> int:
    config = _load_app_config(args.config, args.script)
    if config.script_path is None:
        raise ConfigError(["rounds-sweep requires --script (deterministic replay)"])
    pairs = load_review_pairs(_require_file(args.input, "--input"))
    backend = _build_backend(config)
    rows = []
    for rounds in range(1, 7):
        pipeline = PipelineConfig(
            bindings=config.pipeline.bindings,
            rounds=rounds,
            dedup_threshold=config.pipeline.dedup_threshold,
            aspects=config.pipeline.aspects,
            parallel_aspects=config.pipeline.parallel_aspects,
            candidate_workers=config.pipeline.candidate_workers,
            pair_workers=config.pipeline.pair_workers,
        )
        results = run_corpus(pairs, pipeline, backend)
        report = evaluate_run(results, pairs, lambda_match=config.lambda_match)
        rows.append(
            {
                "rounds": rounds,
                "composite_c": _format_metric(report.composite_c),
                "kappa": _format_metric(report.kappa),
                "spearman_rho": _format_metric(report.spearman),
                "kendall_tau": _format_metric(report.kendall),
                "fnr": _format_metric(report.confusion.fnr),
                "fpr": _format_metric(report.confusion.fpr),
            }
        )
        logger.info("rounds=%d composite=%s", rounds, rows[-1]["composite_c"] or "absent")
    with open(args.output, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(
            handle,
            fieldnames=["rounds", "composite_c", "kappa", "spearman_rho", "kendall_tau", "fnr", "fpr"],
        )
        writer.writeheader()
        writer.writerows(rows)
    logger.info("wrote sweep table to %s", args.output)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """argparse that exits with the validation code on usage errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="revconflict",
        description=(
            "Detect contradiction evidence between paired peer reviews and grade "
            "its intensity; evaluate predictions; export distillation data."
        ),
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"revconflict {__version__} (prompt catalog {CATALOG_VERSION})",
    )
    parser.add_argument("--log-level", default=None, help="override the config log level")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline over a review-pair corpus")
    run.add_argument("--input", required=True, help="review pairs JSONL")
    run.add_argument("--config", default=None, help="TOML or JSON config file")
    run.add_argument("--output", required=True, help="prediction JSONL to write")
    run.add_argument("--rounds", type=int, default=None, help="override debate rounds")
    run.add_argument("--aspects", default=None, help="comma-separated aspect subset")
    run.add_argument("--script", default=None, help="scripted-backend transcript JSONL")
    run.add_argument(
        "--dump-prompts",
        action="store_true",
        help="print fully rendered prompts for one pair and exit",
    )
    run.add_argument("--pair-index", type=int, default=0, help="pair used by --dump-prompts")
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="score predictions against gold annotations")
    ev.add_argument("--pred", required=True, help="prediction JSONL from `run`")
    ev.add_argument("--gold", required=True, help="review pairs JSONL with gold annotations")
    ev.add_argument(
        "--lambda",
        dest="lambda_match",
        type=float,
        default=DEFAULT_LAMBDA_MATCH,
        help="minimum similarity for an alignment edge",
    )
    ev.add_argument("--report", required=True, help="report JSON to write")
    ev.set_defaults(func=_cmd_eval)

    di = sub.add_parser("distill", help="generate teacher SFT data from pipeline runs")
    di.add_argument("--input", required=True, help="review pairs JSONL")
    di.add_argument("--config", default=None, help="TOML or JSON config file")
    di.add_argument("--out", required=True, help="output dataset directory")
    di.add_argument("--train-frac", type=float, default=0.8)
    di.add_argument("--seed", type=int, default=42)
    di.add_argument("--script", default=None, help="scripted-backend transcript JSONL")
    di.set_defaults(func=_cmd_distill)

    sweep = sub.add_parser(
        "rounds-sweep", help="replay a scripted corpus at 1..6 debate rounds"
    )
    sweep.add_argument("--input", required=True, help="review pairs JSONL with gold")
    sweep.add_argument("--config", default=None, help="TOML or JSON config file")
    sweep.add_argument("--script", default=None, help="scripted-backend transcript JSONL")
    sweep.add_argument("--output", required=True, help="CSV path for the sweep table")
    sweep.set_defaults(func=_cmd_rounds_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = args.log_level or "INFO"
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except EvalError as exc:
        print(f"evaluation input error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.exception("runtime failure")
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
