"""Run AA-QS games, mixability estimates, bound checks and the weather experiment.

Exit codes: 0 on success, 2 for usage or input errors, 3 when a bound or
assertion fails.  Every option can also be given in a ``--config`` file of
``key = value`` lines; flags on the command line take precedence.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from datetime import date
from pathlib import Path

import numpy as np

from . import bounds
from .adversary import (AAQSLearner, GlobalGameConfig, make_environment, play_global_game)
from .aggregation import CATALOG, DomainError, check_axioms, get_generator
from .engine import StateError, random_streams, run_game
from .game import GameTrace, PredictionGame
from .substitution import SubstitutionError, estimate_c, is_f_mixable
from .weatherlab import (DEFAULT_CONFIGS, IngestionError, chrono_split, ingest_dwd,
                         load_expert_file, run_experiment, tail_comparison)

EXIT_OK, EXIT_INPUT, EXIT_BOUND = 0, 2, 3
CONFIG_ALIASES = {"grid": "resolution"}


class UsageError(Exception):
    pass


# -- JSON with 17 significant digits -----------------------------------------------

def _num(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON; floats carry 17 significant digits, non-finite floats become strings."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        items = [inner + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit(payload: dict, args) -> None:
    text = dumps(payload) + "\n"
    sys.stdout.write(text)
    if getattr(args, "json_out", None):
        Path(args.json_out).write_text(text)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


# -- config file --------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[CONFIG_ALIASES.get(key, key)] = value
    return out


# -- subcommands ---------------------------------------------------------------

def _spec(args, n: int) -> PredictionGame:
    try:
        return PredictionGame.build(args.loss, args.gen, args.eta, n_experts=n,
                                    outcomes=args.outcomes, resolution=args.resolution)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


def _bound_report(kind: str, trace: GameTrace, spec: PredictionGame, tol: float, c_hat=None):
    gen, eta = spec.generator, spec.eta
    if kind == "classic":
        if not gen.is_identity:
            raise UsageError("the classic bound needs --gen sum")
        return bounds.classic_bound(trace, eta, tol)
    if kind == "quasi":
        return bounds.quasi_sum_bound(trace, gen, eta, tol)
    if kind == "apa":
        return bounds.apa_pseudo_bound(trace, gen, eta, tol)
    if kind == "nonmixable":
        if c_hat is None:
            c_hat = estimate_c(spec.with_(n_experts=1)).c_hat
        return bounds.nonmixable_bound(trace, gen, eta, c_hat, tol)
    raise UsageError(f"unknown bound {kind!r}")


def cmd_synthetic(args) -> int:
    if args.T < 0 or args.n < 1:
        raise UsageError("need T >= 0 and n >= 1")
    spec = _spec(args, args.n)
    rng = np.random.default_rng(args.seed)
    preds, outcomes = random_streams(rng, args.T, args.n, spec.m)
    trace = run_game(spec, preds, outcomes)
    kind = args.bound
    if kind == "auto":
        kind = "classic" if spec.generator.is_identity else "quasi"
    c_hat = None
    if kind == "quasi" and not spec.generator.is_identity:
        verdict = is_f_mixable(spec.with_(n_experts=1))
        if not verdict.mixable:
            c_hat = verdict.estimate.c_hat
            _warn(f"game is not mixable (c_hat={c_hat:.6g}); checking the non-mixable bound instead")
            kind = "nonmixable"
    report = _bound_report(kind, trace, spec, args.tolerance, c_hat)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv")
    payload = {"command": "synthetic", "T": args.T, "n": args.n, "seed": args.seed,
               "loss": args.loss, "generator": spec.generator.name, "eta": args.eta,
               "report": report.to_dict()}
    (out / "report.json").write_text(dumps(payload) + "\n")
    _emit(payload, args)
    return EXIT_OK if report.satisfied else EXIT_BOUND


def _parse_configs(text: str | None):
    if not text:
        return list(DEFAULT_CONFIGS)
    out = []
    for item in text.split(","):
        try:
            g, e = item.split(":")
            out.append((g.strip(), float(e)))
        except ValueError:
            raise UsageError(f"bad configuration {item!r}; expected gen:eta") from None
    return out


def cmd_weather(args) -> int:
    start = date.fromisoformat(args.start) if args.start else None
    try:
        records, drops = ingest_dwd(args.data, start=start)
    except (IngestionError, OSError) as exc:
        raise UsageError(f"ingestion failed: {exc}") from None
    train, test = chrono_split(records)
    experts = None
    if args.expert_file:
        try:
            experts = load_expert_file(args.expert_file, expected_rounds=len(test))
        except (IngestionError, OSError) as exc:
            raise UsageError(f"expert file: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for gen, eta in _parse_configs(args.configs):
        try:
            res = run_experiment(records, gen, eta, experts=experts, resolution=args.resolution)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
        res.histogram.to_csv(out / f"hist_{res.generator}_{eta:g}.csv")
        results.append(res)
    payload = {"command": "weather", "records": len(records), "dropped": drops,
               "train": len(train), "test": len(test),
               "runs": [r.summary() for r in results],
               "tail_comparison": tail_comparison(results)}
    (out / "summary.json").write_text(dumps(payload) + "\n")
    _emit(payload, args)
    return EXIT_OK if all(r.bound.satisfied for r in results) else EXIT_BOUND


def cmd_mixability(args) -> int:
    spec = _spec(args, 1)
    verdict = is_f_mixable(spec, tolerance=args.mix_tolerance, psi_enumeration_depth=args.depth)
    payload = {"command": "mixability", "loss": args.loss, "generator": spec.generator.name,
               "eta": args.eta, "mixable": verdict.mixable, "consistent": verdict.consistent,
               **verdict.estimate.to_dict()}
    _emit(payload, args)
    return EXIT_OK


def cmd_global_game(args) -> int:
    spec = _spec(args, args.n)
    c, a = args.c, args.a
    if c is None or a is None:
        c_hat = estimate_c(spec.with_(n_experts=1)).c_hat
        c = c_hat if c is None else c
        a = c_hat / args.eta if a is None else a
    try:
        config = GlobalGameConfig(spec, args.T, c, a)
        env = make_environment(args.adversary, args.transcript)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    games = []
    dump = Path(args.dump) if args.dump else None
    if dump:
        dump.mkdir(parents=True, exist_ok=True)
    for seed in range(args.seed, args.seed + args.seeds):
        try:
            rep = play_global_game(config, env, AAQSLearner(spec), seed=seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        games.append({"seed": seed, **rep.to_dict()})
        if dump:
            rep.to_csv(dump / f"transcript_seed{seed}.csv")
    wins = sum(g["learner_wins"] for g in games)
    payload = {"command": "global-game", "generator": spec.generator.name, "eta": args.eta,
               "adversary": args.adversary, "c": c, "a": a, "T": args.T, "n": args.n,
               "learner_wins": wins, "nature_wins": len(games) - wins, "games": games}
    _emit(payload, args)
    return EXIT_OK


def cmd_bounds_check(args) -> int:
    try:
        trace = GameTrace.from_csv(args.trace)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read trace: {exc}") from None
    spec = PredictionGame.build(args.loss, args.gen, args.eta, n_experts=max(trace.n, 1),
                                outcomes=trace.m or args.outcomes, resolution=args.resolution)
    report = _bound_report(args.bound, trace, spec, args.tolerance, args.c_hat)
    _emit({"command": "bounds-check", "trace": str(args.trace), **report.to_dict()}, args)
    return EXIT_OK if report.satisfied else EXIT_BOUND


def cmd_axioms(args) -> int:
    keys = list(CATALOG) if args.gen == "all" else [args.gen]
    try:
        samples = [float(s) for s in args.samples.split(",")]
    except ValueError:
        raise UsageError("samples must be comma-separated numbers") from None
    reports = []
    for key in keys:
        try:
            reports.append(check_axioms(get_generator(key), samples))
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
        except (DomainError, ValueError) as exc:
            raise UsageError(str(exc)) from None
    _emit({"command": "axioms", "reports": [r.to_dict() for r in reports]}, args)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_BOUND


# -- parser --------------------------------------------------------------------

def _game_options(p: argparse.ArgumentParser, resolution: int = 1000) -> None:
    p.add_argument("--loss", default="log", help="log, brier or abs")
    p.add_argument("--gen", default="sum", help="sum, sqrt, square, pow10, focal or pow:<p>")
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--outcomes", type=int, default=2)
    p.add_argument("--resolution", "--grid", dest="resolution", type=int, default=resolution,
                   help="decision grid resolution")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aaqs", description=__doc__.splitlines()[0],
                                     allow_abbrev=False)
    parser.add_argument("--config", help="key = value file with option defaults")
    parser.add_argument("--json-out", help="also write the JSON report to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthetic", allow_abbrev=False, help="seeded random game with a bound check")
    _game_options(p)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bound", default="auto", choices=["auto", "classic", "quasi", "nonmixable", "apa"])
    p.add_argument("--tolerance", type=float, default=bounds.DEFAULT_TOLERANCE)
    p.add_argument("--out", default="synthetic-out")
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("weather", allow_abbrev=False, help="DWD weather classification experiment")
    p.add_argument("--data", required=True, help="DWD KL product (zip or txt)")
    p.add_argument("--expert-file")
    p.add_argument("--configs", help="comma-separated gen:eta pairs")
    p.add_argument("--resolution", type=int, default=20)
    p.add_argument("--start", default="2000-01-01", help="first day considered (ISO date, empty for all)")
    p.add_argument("--out", default="weather-out")
    p.set_defaults(func=cmd_weather)

    p = sub.add_parser("mixability", allow_abbrev=False, help="estimate the mixability constant c(eta)")
    _game_options(p)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--mix-tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_mixability)

    p = sub.add_parser("global-game", allow_abbrev=False, help="adversarial global game")
    _game_options(p)
    p.add_argument("--c", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--adversary", default="random", choices=["random", "greedy", "replay"])
    p.add_argument("--transcript", help="transcript CSV for the replay adversary")
    p.add_argument("--dump", help="directory for per-seed transcripts")
    p.set_defaults(func=cmd_global_game)

    p = sub.add_parser("bounds-check", allow_abbrev=False, help="evaluate a bound on a trace CSV")
    _game_options(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--bound", default="quasi", choices=["classic", "quasi", "nonmixable", "apa"])
    p.add_argument("--c-hat", type=float)
    p.add_argument("--tolerance", type=float, default=bounds.DEFAULT_TOLERANCE)
    p.set_defaults(func=cmd_bounds_check)

    p = sub.add_parser("axioms", allow_abbrev=False, help="check quasi-sum axioms on a sample grid")
    p.add_argument("--gen", default="all")
    p.add_argument("--samples", default="0,0.25,0.5,1,2,3.5,5,10")
    p.set_defaults(func=cmd_axioms)
    return parser


def _subparsers(parser: argparse.ArgumentParser) -> dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        values = read_config(known.config)
        subs = _subparsers(parser)
        command = next((tok for tok in argv if tok in subs), None)
        if command is None:
            raise UsageError("no subcommand given")
        sub = subs[command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in values.items():
            action = actions.get(key)
            if action is None or key == "help":
                raise UsageError(f"{known.config}: unknown option {key!r} for {command}")
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except ValueError:
                raise UsageError(f"{known.config}: bad value for {key}: {raw!r}") from None
            action.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        if getattr(args, "eta", 1.0) <= 0:
            raise UsageError("eta must be positive")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (StateError, SubstitutionError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BOUND


if __name__ == "__main__":
    sys.exit(main())
