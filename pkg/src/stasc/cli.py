"""Command-line entry points.

Exit codes are stable for CI use:
  0  success
  2  configuration or validation error
  3  backend/transport error
  4  training failure (or empty-filter halt)
  5  state-integrity error
  1  unexpected failure
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .datasets import convert_nq_open, validate_qa_rows
from .errors import (
    ConfigurationError,
    EmptyFilterHalt,
    GenerationError,
    StateIntegrityError,
    StascError,
    TrainingError,
    TransportError,
)
from .evaluation import evaluate_iteration, write_report
from .core import InitMode
from .prompts import default_template, load_template
from .store import RunDirectory

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_TRAINING = 4
EXIT_STATE = 5

logger = logging.getLogger(__name__)


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", help="variant code (e.g. EIF) or preset (sc, star)")
    p.add_argument("--iterations", type=int, help="number of iterations N")
    p.add_argument("--n-init", type=int, dest="n_init", help="initial samples per item")
    p.add_argument("--n-corr", type=int, dest="n_corr", help="corrections per initial answer")
    p.add_argument("--threshold", type=float, help="non-decreasing filter threshold t")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--run-dir", dest="run_dir", help="run directory")
    p.add_argument("--base-model", dest="base_model", help="base model id (M_0)")
    p.add_argument("--gen-endpoint", dest="gen_endpoint", help="generation endpoint URL")
    p.add_argument("--train-endpoint", dest="train_endpoint", help="trainer endpoint URL")
    p.add_argument(
        "--policy-empty-filter",
        dest="empty_filter_policy",
        choices=["skip", "halt"],
        help="what to do when an iteration selects no trajectories",
    )


def _overrides_from_args(args: argparse.Namespace) -> dict:
    keys = (
        "variant",
        "iterations",
        "n_init",
        "n_corr",
        "threshold",
        "seed",
        "run_dir",
        "base_model",
        "gen_endpoint",
        "train_endpoint",
        "empty_filter_policy",
    )
    return {k: getattr(args, k, None) for k in keys}


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    return cfg.with_overrides(_overrides_from_args(args))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stasc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured run")
    p_run.add_argument("--config", required=True)
    _add_override_flags(p_run)

    p_resume = sub.add_parser("resume", help="continue an interrupted run")
    p_resume.add_argument("--run-dir", dest="run_dir", required=True)

    p_val = sub.add_parser("validate", help="validate config, datasets, and templates")
    p_val.add_argument("--config", required=True)
    _add_override_flags(p_val)

    p_eval = sub.add_parser("eval", help="(re)evaluate a run's iterations on the test split")
    p_eval.add_argument("--run-dir", dest="run_dir", required=True)
    p_eval.add_argument("--iteration", type=int, help="evaluate only this iteration")

    p_rep = sub.add_parser("report", help="render the report for a run directory")
    p_rep.add_argument("--run-dir", dest="run_dir", required=True)

    p_mock = sub.add_parser("mock-serve", help="serve a scripted mock backend over HTTP")
    p_mock.add_argument("--script", required=True)
    p_mock.add_argument("--host", default="127.0.0.1")
    p_mock.add_argument("--port", type=int, default=8099)

    p_nq = sub.add_parser("convert-nq", help="convert NQ-open jsonl to the native format")
    p_nq.add_argument("--input", required=True)
    p_nq.add_argument("--output", required=True)
    p_nq.add_argument("--limit", type=int, default=500)

    return parser


def cmd_run(args: argparse.Namespace) -> int:
    from .loop import Runner

    cfg = _load_config(args)
    runner = Runner(cfg)
    state = runner.run()
    print(f"run {state.run_id} finished with status {state.status}")
    print(f"artifacts in {cfg.run_dir}")
    return EXIT_OK


def cmd_resume(args: argparse.Namespace) -> int:
    from .loop import Runner

    snapshot = Path(args.run_dir) / "config.yaml"
    if not snapshot.exists():
        raise ConfigurationError(f"no config snapshot at {snapshot}")
    cfg = RunConfig.from_file(snapshot)
    state = Runner(cfg).run(resume=True)
    print(f"run {state.run_id} finished with status {state.status}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    violations = cfg.validate()
    for which, path in (("train", cfg.train_dataset), ("test", cfg.test_dataset)):
        if not path:
            continue
        p = Path(path)
        if not p.exists():
            violations.append(f"dataset.{which}: file not found: {p}")
            continue
        _, dataset_violations = validate_qa_rows(p.read_text(encoding="utf-8"), source=str(p))
        violations.extend(dataset_violations)
    for kind, ref in (("initial", cfg.prompts.initial), ("correction", cfg.prompts.correction)):
        try:
            tmpl = default_template(kind) if ref == "default" else load_template(ref)
            if tmpl.kind != kind:
                violations.append(f"prompts.{kind}: template file declares kind {tmpl.kind!r}")
        except StascError as exc:
            violations.append(f"prompts.{kind}: {exc}")
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_CONFIG
    print(cfg.describe())
    print(f"run_id: {cfg.effective_run_id}")
    print(f"empty-filter policy: {cfg.empty_filter_policy}; reward: {cfg.reward.name}")
    print(
        f"endpoints: gen={cfg.backends.gen_endpoint} train={cfg.backends.train_endpoint}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from .datasets import load_qa_items
    from .loop import build_backends, _load_templates
    from .reward import make_reward

    rd = RunDirectory(args.run_dir)
    state = rd.load_state()
    cfg = RunConfig.from_dict(state.config)
    if not cfg.test_dataset:
        raise ConfigurationError("run config has no dataset.test; cannot evaluate")
    gen, _ = build_backends(cfg)
    initial_tmpl, correction_tmpl = _load_templates(cfg)
    reward_fn = make_reward(cfg.reward.name, cfg.reward.params)
    test_items = load_qa_items(cfg.test_dataset)
    train_ids = {i.id for i in load_qa_items(cfg.train_dataset)}
    v = cfg.variant
    targets = [
        rec
        for rec in state.iterations
        if rec.produced_model and (args.iteration is None or rec.n == args.iteration)
    ]
    if not targets:
        raise StateIntegrityError("no completed iterations to evaluate")
    init_mode = state.axes()[0]
    for rec in targets:
        generator = state.base_model if init_mode is InitMode.FIXED else rec.produced_model
        metrics = evaluate_iteration(
            generator,
            rec.produced_model,
            test_items,
            backend=gen,
            initial_template=initial_tmpl,
            correction_template=correction_tmpl,
            reward_fn=reward_fn,
            sampling=v.sampling,
            n_init=cfg.eval.n_init or v.n_init,
            n_corr=cfg.eval.n_corr or v.n_corr,
            aggregation=cfg.eval.aggregation,
            run_seed=cfg.seed,
            iteration=rec.n,
            score_full_text=cfg.reward.score_full_text,
            initial_slot=cfg.prompts.initial_slot,
            parallelism=cfg.backends.request_parallelism,
            train_ids=train_ids,
        )
        rd.commit_eval(rec.n, metrics.to_dict())
        rec.metrics = metrics.summary()
        print(
            f"iteration {rec.n}: initial_acc={metrics.initial_acc:.3f} "
            f"correction_acc={metrics.correction_acc:.3f}"
        )
    rd.save_state(state)
    write_report(rd, state)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    rd = RunDirectory(args.run_dir)
    state = rd.load_state()
    write_report(rd, state)
    print(rd.report_text_path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_mock_serve(args: argparse.Namespace) -> int:
    from .mockserver import serve_forever

    serve_forever(args.script, args.host, args.port)
    return EXIT_OK


def cmd_convert_nq(args: argparse.Namespace) -> int:
    n = convert_nq_open(args.input, args.output, limit=args.limit)
    print(f"wrote {n} items to {args.output}")
    return EXIT_OK


_COMMANDS = {
    "run": cmd_run,
    "resume": cmd_resume,
    "validate": cmd_validate,
    "eval": cmd_eval,
    "report": cmd_report,
    "mock-serve": cmd_mock_serve,
    "convert-nq": cmd_convert_nq,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="[%(asctime)s] %(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except EmptyFilterHalt as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (TransportError, GenerationError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except StateIntegrityError as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StascError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
