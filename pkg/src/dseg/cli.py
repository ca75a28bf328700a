"""Command-line entry point: generate, solve, bench, spectral."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import BenchError, ExperimentConfig, default_out_root, run_bench, write_bench
from .games import (BILINEAR, FULL, SIMPLEX, UNCONSTRAINED, GameSynthesisParams, QuadraticGame,
                    rock_paper_scissors, synthesize_game)
from .geometry import DomainError
from .metrics import MetricError
from .rng import make_rng
from .sampling import SamplerConfigError
from .solvers import ConfigError, SolverConfig, run
from . import spectral

EXIT_OK, EXIT_CONFIG, EXIT_TARGET, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _read_json(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None


def _merge(base: dict, args, names):
    out = dict(base)
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            out[name] = v
    return out


def _out_dir(args, default_name: str) -> Path:
    return Path(args.out) if args.out else default_out_root() / default_name


# -- generate -------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _merge(_read_json(args.config), args,
                 ["n", "d", "alpha", "mu", "reg_l1", "noise_std", "geometry", "own_term", "seed"])
    try:
        params = GameSynthesisParams(int(cfg.get("n", 5)), int(cfg.get("d", 3)),
                                     float(cfg.get("alpha", 0.9)), float(cfg.get("mu", 0.01)),
                                     int(cfg.get("seed", 0)))
        game = synthesize_game(params, float(cfg.get("reg_l1", 0.0)), float(cfg.get("noise_std", 0.0)),
                               cfg.get("geometry", SIMPLEX), cfg.get("own_term", FULL))
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out) if args.out else default_out_root() / f"game_n{params.n}_seed{params.seed}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    game.save(out)
    sym = 0.5 * (game.payoff + game.payoff.T)
    probe = game.monotonicity_probe(make_rng(params.seed))
    print(f"wrote {out}")
    print(f"min eigenvalue of symmetric payoff part: {np.linalg.eigvalsh(sym).min():.6g}")
    print(f"monotonicity probe (min <F(x)-F(y), x-y> over 100 pairs): {probe:.6g}")
    return EXIT_OK


# -- solve ----------------------------------------------------------------------------


def _load_game(spec: str) -> QuadraticGame:
    if spec == "rps":
        return rock_paper_scissors()
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"game file {spec} not found")
    try:
        return QuadraticGame.load(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load game {spec}: {exc}") from None


def cmd_solve(args) -> int:
    game = _load_game(args.game)
    cfg = _read_json(args.config)
    cfg = _merge(cfg, args, ["method", "sampler", "k_max", "checkpoints", "init", "seed", "mirror"])
    if args.vr:
        cfg["vr"] = True
    if args.gamma is not None:
        cfg["schedule"] = {"kind": "constant", "gamma": args.gamma}
    if args.noise_std is not None:
        game = game.with_noise(args.noise_std)
    config = SolverConfig.from_dict(cfg)
    trace = run(game, None, config)
    out = _out_dir(args, "solve")
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(trace.to_csv(timing=args.timing))
    strategy = {"theta": [float(v) for v in trace.final_theta], "dims": list(game.layout.dims),
                "final_err": float(trace.final_err), "k": int(trace.k[-1]),
                "solver": config.to_dict()}
    (out / "strategy.json").write_text(json.dumps(strategy, indent=1, sort_keys=True) + "\n")
    print(f"final Nash error {trace.final_err:.6g} after k={int(trace.k[-1])} gradient computations")
    for k, msg in trace.failures:
        print(f"warning: checkpoint k={k}: {msg}", file=sys.stderr)
    if args.target is not None and not trace.final_err <= args.target:
        print(f"target {args.target:g} not met", file=sys.stderr)
        return EXIT_TARGET
    return EXIT_OK


# -- bench ----------------------------------------------------------------------------


def cmd_bench(args) -> int:
    data = _read_json(args.config)
    if args.seed is not None:
        data["seeds"] = [args.seed]
    config = ExperimentConfig.from_dict(data)
    out = Path(args.out) if args.out else (Path(config.out) if config.out
                                           else default_out_root() / f"bench-{config.config_hash()}")
    result = run_bench(config, jobs=args.jobs)
    write_bench(result, out)
    for sid, r in result.solvers.items():
        flag = "  (grid boundary)" if r.boundary else ""
        print(f"{sid:24s} best gamma {r.best_gamma:.4g}  final Err {r.final_err:.4g}{flag}")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"results in {out}")
    return EXIT_OK


# -- spectral -------------------------------------------------------------------------


def cmd_spectral(args) -> int:
    cfg = _read_json(args.config)
    alphas = args.alphas or cfg.get("alphas", [0.0, 0.5, 0.9, 1.0])
    mus = args.mus or cfg.get("mus", [0.01])
    games = args.games if args.games is not None else int(cfg.get("games", 100))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    grid = cfg.get("grid")
    gammas = np.geomspace(grid["min"], grid["max"], grid["count"]) if grid else None
    if games < 1:
        raise UsageError("games must be positive")
    rows = spectral.radius_study(alphas, mus, games, seed, gammas=gammas)
    out = _out_dir(args, "spectral")
    out.mkdir(parents=True, exist_ok=True)
    (out / "radius.csv").write_text(spectral.rows_to_csv(rows))
    summary = spectral.summarize(rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    for s in summary:
        print(f"alpha={s['alpha']:<5g} mu={s['mu']:<6g} {s['scheme']:7s} mean rho* {s['mean_rho']:.6f}"
              f"  median ratio to full {s['median_ratio']:.4f}")
    print(f"results in {out}")
    return EXIT_OK


# -- entry ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dseg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output file or directory (default under $DSEG_OUT)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    g = sub.add_parser("generate", help="sample a random quadratic game")
    common(g)
    g.add_argument("--n", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--mu", type=float)
    g.add_argument("--reg-l1", dest="reg_l1", type=float)
    g.add_argument("--noise-std", dest="noise_std", type=float)
    g.add_argument("--geometry", choices=[SIMPLEX, UNCONSTRAINED])
    g.add_argument("--own-term", dest="own_term", choices=[FULL, BILINEAR])
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="single solver run on a game file (or 'rps')")
    common(s)
    s.add_argument("--game", required=True)
    s.add_argument("--method", choices=["eg", "dseg"])
    s.add_argument("--sampler")
    s.add_argument("--vr", action="store_true")
    s.add_argument("--gamma", type=float)
    s.add_argument("--k-max", dest="k_max", type=int)
    s.add_argument("--checkpoints", type=int)
    s.add_argument("--init", choices=["center", "random"])
    s.add_argument("--mirror", choices=["entropy", "euclidean"])
    s.add_argument("--noise-std", dest="noise_std", type=float)
    s.add_argument("--target", type=float, help="exit 3 unless the final Nash error is <= target")
    s.add_argument("--timing", action="store_true", help="record wall time in trace.csv")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="step-size grid search over games and seeds")
    common(b)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("spectral", help="spectral radius study on random 2-player games")
    common(r)
    r.add_argument("--alphas", type=float, nargs="+")
    r.add_argument("--mus", type=float, nargs="+")
    r.add_argument("--games", type=int)
    r.set_defaults(func=cmd_spectral)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except (UsageError, ConfigError, SamplerConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MetricError, DomainError, BenchError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (TypeError, ValueError, KeyError) as exc:
        # malformed configs surface as these while building dataclasses
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, RuntimeError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
