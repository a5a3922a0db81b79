"""Command-line entry point: ``idt <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys

from .agents import agent_from_dict, generate_log, log_to_jsonl, read_log
from .classes import class_from_dict, family_from_dict
from .errors import EstimationError, IDTError, ValidationError
from .estimators import audit_fairness, estimate_known_class, estimate_optimal, estimate_unknown_family
from .harness import (
    REGIMES,
    TrialConfig,
    curve_to_csv,
    lower_bound_demo,
    rate_check,
    rate_curve,
    resolve_problem,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ESTIMATION = 3
EXIT_CHECK = 4


def _load_json(text_or_path: str):
    """Parse an argument that is either inline JSON or a path to a JSON file."""
    stripped = text_or_path.lstrip()
    if stripped.startswith(("{", "[")):
        source = text_or_path
    else:
        try:
            with open(text_or_path) as fh:
                source = fh.read()
        except OSError as exc:
            raise ValidationError(f"cannot read {text_or_path}: {exc}") from exc
    try:
        return json.loads(source)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {text_or_path[:60]!r}: {exc}") from exc


def _problem_spec(args) -> dict:
    if args.construction:
        return {"construction": args.construction, "params": _load_json(args.params) if args.params else {}}
    if args.problem:
        return _load_json(args.problem)
    raise ValidationError("give either --problem or --construction")


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _add_problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", help="distribution JSON (inline or file), or a {construction, params} spec")
    p.add_argument("--construction", help="named construction")
    p.add_argument("--params", help="construction parameters as JSON")


def _read_matching_log(path: str, dist):
    log = read_log(path)
    recorded = log.metadata.get("distribution")
    if recorded is not None and recorded != dist.digest:
        raise ValidationError("log was generated from a different distribution than the one given")
    return log


def cmd_simulate(args) -> int:
    problem = resolve_problem(_problem_spec(args))
    if args.agent:
        agent = agent_from_dict(_load_json(args.agent))
    elif problem.bundle is not None:
        if not 0 <= args.agent_index < len(problem.bundle.agents):
            raise ValidationError(f"agent index {args.agent_index} out of range")
        agent = problem.bundle.agents[args.agent_index]
    else:
        raise ValidationError("an inline problem needs --agent")
    log = generate_log(agent, problem.distribution, args.m, args.seed)
    _emit(log_to_jsonl(log), args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    problem = resolve_problem(_problem_spec(args))
    dist = problem.distribution
    log = _read_matching_log(args.log, dist)
    if args.regime == "optimal":
        result = estimate_optimal(dist, log)
    elif args.regime == "known_class":
        if args.cls:
            cls = class_from_dict(_load_json(args.cls))
        else:
            agent = agent_from_dict(log.metadata.get("agent") or {"kind": None})
            if not hasattr(agent, "cls"):
                raise ValidationError("known_class needs --class or a class-restricted log")
            cls = agent.cls
        result = estimate_known_class(dist, cls, log)
    else:
        if args.family:
            family = family_from_dict(_load_json(args.family))
        elif problem.bundle is not None and problem.bundle.family is not None:
            family = problem.bundle.family
        else:
            raise ValidationError("unknown_family needs --family")
        result = estimate_unknown_family(dist, family, log)
    _emit(json.dumps(result.to_dict(), sort_keys=True, indent=2), args.out)
    return EXIT_OK


def cmd_verify_rate(args) -> int:
    config = TrialConfig.from_dict(_load_json(args.config))
    m_values = [int(v) for v in args.m_values.split(",") if v.strip()] if args.m_values else [config.m]
    rows = rate_curve(config, m_values)
    _emit(curve_to_csv(rows), args.out)
    bad = rate_check(config, rows)
    for row in bad:
        print(f"rate check failed at m={row['m']}: failure frequency {row['failure_frequency']}", file=sys.stderr)
    return EXIT_CHECK if bad else EXIT_OK


def cmd_lower_bound(args) -> int:
    params = _load_json(args.params) if args.params else {}
    report = lower_bound_demo(
        args.name, params, args.m, args.trials, args.eps, args.delta, args.seed, args.regime
    )
    _emit(json.dumps(report, sort_keys=True, indent=2), args.out)
    if args.check and not report["demonstrated"]:
        return EXIT_CHECK
    return EXIT_OK


def cmd_audit_fairness(args) -> int:
    problem = resolve_problem(_problem_spec(args))
    log = _read_matching_log(args.log, problem.distribution)
    report = audit_fairness(problem.distribution, log, args.eps)
    _emit(json.dumps(report.to_dict(args.include_scores), sort_keys=True, indent=2), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idt", description="Estimate loss parameters from observed decisions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a decision log")
    _add_problem_args(p)
    p.add_argument("--agent", help="agent descriptor JSON (defaults to a bundled agent)")
    p.add_argument("--agent-index", type=int, default=0)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate c from a decision log")
    _add_problem_args(p)
    p.add_argument("--log", required=True)
    p.add_argument("--regime", choices=REGIMES, default="optimal")
    p.add_argument("--class", dest="cls", help="threshold class JSON for known_class")
    p.add_argument("--family", help="class family JSON for unknown_family")
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("verify-rate", help="failure frequency against sample size, as CSV")
    p.add_argument("--config", required=True, help="trial config JSON")
    p.add_argument("--m-values", help="comma separated sample sizes (default: the config's m)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_rate)

    p = sub.add_parser("lower-bound", help="run a lower-bound construction on shared seeds")
    p.add_argument("name")
    p.add_argument("--params", help="construction parameters as JSON")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--regime", choices=REGIMES)
    p.add_argument("--check", action="store_true", help="exit 4 unless the failure rate exceeds delta")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lower_bound)

    p = sub.add_parser("audit-fairness", help="group calibration audit of an attributed log")
    _add_problem_args(p)
    p.add_argument("--log", required=True)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--include-scores", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit_fairness)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (IDTError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
