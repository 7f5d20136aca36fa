"""Command-line entry point: ``seplearn {solve,learn,simulate,reproduce-example,compare}``.

Exit codes: 0 ok, 2 configuration error, 3 solver failure, 4 learning did not
converge (with ``--strict``), 5 example reproduction failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import __version__
from .config import RunManifest, ScenarioConfig, load_config
from .errors import ConfigError, NonConvergence, NumericalFailure, RankDeficient, SeplearnError
from .solver import (PlantResponse, bind_parameters, export_strategy, import_strategy, model_lqg,
                     solve_tracking_lq)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CONVERGENCE, EXIT_REPRODUCE = 0, 2, 3, 4, 5


class _Exit(Exception):
    def __init__(self, code, msg=""):
        super().__init__(msg)
        self.code, self.msg = code, msg


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario YAML file")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--episodes", type=int, help="episodes per Monte Carlo batch")
    common.add_argument("--outer", type=int, help="outer learning iterations")
    common.add_argument("--beta", type=float, help="discrepancy penalty weight (overrides cost.beta)")
    common.add_argument("--json", metavar="PATH", help="write the machine-readable report here")
    common.add_argument("--dump-episodes", metavar="PATH", help="write per-step episode CSV here")
    common.add_argument("--strict", action="store_true", help="exit 4 when learning does not converge")
    common.add_argument("--cov-sign", choices=["+", "-"], default="-",
                        help="sign of cov(X0, W0) in the bundled example")
    common.add_argument("--out", metavar="DIR", help="directory for strategy, CSV and manifest files")
    common.add_argument("--workers", type=int, help="worker threads for Monte Carlo batches")

    p = argparse.ArgumentParser(prog="seplearn", description="Separated control strategies with a learned plant response.")
    p.add_argument("--version", action="version", version=f"seplearn {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="synthesize the parameterized separated strategy")
    sub.add_parser("learn", parents=[common], help="learn the plant response and bind it")
    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo evaluation of a strategy")
    s.add_argument("--strategy", metavar="PATH", help="strategy file from `solve` (default: solve now)")
    sub.add_parser("reproduce-example", parents=[common], help="run every route on the two-step example")
    sub.add_parser("compare", parents=[common], help="known-plant, model-only and learned strategies")
    return p


# helpers --------------------------------------------------------------------------

def _config(args, need_plant=False) -> ScenarioConfig:
    if not args.config:
        raise _Exit(EXIT_CONFIG, "--config is required for this command")
    cfg = load_config(args.config)
    if args.beta is not None:
        if args.beta < 0:
            raise _Exit(EXIT_CONFIG, "--beta must be nonnegative")
        cfg = cfg.with_beta(args.beta)
    if need_plant and cfg.plant is None:
        raise _Exit(EXIT_CONFIG, f"{cfg.source}: plant: missing required section (needed to simulate the plant)")
    run = dict(cfg.run)
    for key in ("seed", "episodes", "outer", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            if key != "seed" and v < 1:
                raise _Exit(EXIT_CONFIG, f"--{key} must be >= 1")
            run[key] = v
    return replace(cfg, run=run)


def _outdir(args, cfg=None) -> str:
    d = args.out or (cfg.output.get("dir") if cfg is not None else None) or "."
    os.makedirs(d, exist_ok=True)
    return d


def _write(path, text, manifest=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    if manifest is not None:
        manifest.artifacts.append(path)


def _manifest(args, cfg, command):
    return RunManifest(config_digest=cfg.digest if cfg else "", tool_version=__version__,
                       seed=int(cfg.run["seed"] if cfg else (args.seed or 0)), command=command,
                       started=RunManifest.now())


def _finish(manifest, outdir):
    manifest.finished = RunManifest.now()
    path = os.path.join(outdir, "manifest.json")
    manifest.artifacts.append(path)
    _write(path, manifest.to_json() + "\n")


def _solve(cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficient)
        return solve_tracking_lq(cfg.model, cfg.cost)


def _probe_controls(cfg, strategy, resp):
    """Realized controls on unit primitive vectors; a fixed fingerprint of the law."""
    from .sim import rollout_primitives

    N = cfg.dims.n_primitives
    prims = np.vstack([np.zeros(N), np.eye(N)])
    plant = cfg.plant or cfg.model
    return rollout_primitives(plant, cfg.model, strategy, cfg.noise, prims, plant_belief=resp).u


def _fmt_table(rows, header):
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    line = lambda r: "  ".join(str(v).rjust(w) for v, w in zip(r, widths))
    return "\n".join([line(header)] + [line(r) for r in rows])


def _learn(cfg, args):
    from .sim import closed_loop_learn

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonConvergence)
        rep = closed_loop_learn(cfg.plant, cfg.model, _solve(cfg), cfg.noise, cfg.cost,
                                n_outer=cfg.run["outer"], n_inner=cfg.run.get("learn_episodes", cfg.run["episodes"]),
                                seed=cfg.run["seed"], dither=cfg.run["dither"], tol=cfg.run["tol"],
                                n_eval=cfg.run["episodes"], workers=cfg.run["workers"],
                                keep_batch=bool(args.dump_episodes))
    notes = [str(w.message) for w in caught if issubclass(w.category, NonConvergence)]
    return rep, notes


# commands -------------------------------------------------------------------------

def cmd_solve(args) -> int:
    cfg = _config(args)
    strategy = _solve(cfg)
    outdir = _outdir(args, cfg)
    man = _manifest(args, cfg, "solve")
    path = os.path.join(outdir, "strategy.txt")
    _write(path, export_strategy(strategy), man)
    if args.json:
        _write(args.json, json.dumps({"strategy": path, "T": strategy.T, "beta": cfg.cost.beta,
                                      "config_digest": cfg.digest}, indent=2, sort_keys=True) + "\n", man)
    _finish(man, outdir)
    print(f"wrote {path} (T={strategy.T}, beta={cfg.cost.beta:g})")
    return EXIT_OK


def cmd_learn(args) -> int:
    cfg = _config(args, need_plant=True)
    rep, notes = _learn(cfg, args)
    outdir = _outdir(args, cfg)
    man = _manifest(args, cfg, "learn")
    truth = PlantResponse.from_system(cfg.plant)
    known = bind_parameters(_solve(cfg), truth)
    gap = float(np.max(np.abs(_probe_controls(cfg, rep.strategy, rep.response) - _probe_controls(cfg, known, truth))))
    doc = rep.as_dict()
    doc.update({"known_plant_law_gap": gap, "agrees_with_known_plant_law": gap <= 1e-6,
                "warnings": notes, "config_digest": cfg.digest, "seed": cfg.run["seed"]})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = cfg.dims.n
    w.writerow(["iteration", "t"] + [f"xhat{i}" for i in range(n)])
    for it, tr in enumerate(rep.xhat_trace):
        for t, row in enumerate(np.atleast_2d(tr)):
            w.writerow([it, t] + [format(float(v), ".17g") for v in row])
    _write(os.path.join(outdir, "xhat_trace.csv"), buf.getvalue(), man)
    _write(os.path.join(outdir, "strategy_bound.txt"), export_strategy(rep.strategy), man)
    if args.dump_episodes:
        from .sim import episodes_csv
        _write(args.dump_episodes, episodes_csv(rep.batch), man)
    if args.json:
        _write(args.json, json.dumps(doc, indent=2, sort_keys=True) + "\n", man)
    _finish(man, outdir)
    c = rep.cost
    print(f"J1 = {c.J1_mean:.6f} +/- {c.J1_stderr:.6f}  J2 = {c.J2_mean:.6f}  penalty = {c.penalty_mean:.3e}")
    print(f"learned law vs known-plant law: max control gap {gap:.3e}"
          f" ({'agrees' if gap <= 1e-6 else 'differs'})")
    for msg in notes:
        print(f"warning: {msg}", file=sys.stderr)
    if notes and args.strict:
        raise _Exit(EXIT_CONVERGENCE, "learning did not converge")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .sim import episodes_csv, run_monte_carlo

    cfg = _config(args)
    plant = cfg.plant or cfg.model
    resp = PlantResponse.from_system(plant)
    if args.strategy:
        try:
            with open(args.strategy, encoding="utf-8") as fh:
                strategy = import_strategy(fh.read())
        except (OSError, KeyError, ValueError, IndexError) as exc:
            raise _Exit(EXIT_CONFIG, f"{args.strategy}: cannot load strategy ({exc})") from None
        strategy = replace(strategy, model_sys=cfg.model, cost=cfg.cost)
    else:
        strategy = _solve(cfg)
    if not strategy.bound:
        strategy = bind_parameters(strategy, resp)
    rep = run_monte_carlo(plant, cfg.model, strategy, cfg.noise, cfg.cost, cfg.run["episodes"], cfg.run["seed"],
                          workers=cfg.run["workers"], plant_belief=resp, keep_batch=bool(args.dump_episodes))
    outdir = _outdir(args, cfg)
    man = _manifest(args, cfg, "simulate")
    if args.dump_episodes:
        _write(args.dump_episodes, episodes_csv(rep.batch), man)
    if args.json:
        doc = rep.as_dict()
        doc.update({"config_digest": cfg.digest, "seed": cfg.run["seed"]})
        _write(args.json, json.dumps(doc, indent=2, sort_keys=True) + "\n", man)
    _finish(man, outdir)
    c = rep.cost
    print(f"episodes = {c.episodes}")
    print(f"J1 = {c.J1_mean:.6f} +/- {c.J1_stderr:.6f}")
    print(f"J2 = {c.J2_mean:.6f} +/- {c.J2_stderr:.6f}  penalty = {c.penalty_mean:.3e}")
    return EXIT_OK


def cmd_reproduce_example(args) -> int:
    from .oracle.example import reproduce_example

    kw = {"cov_sign": args.cov_sign, "seed": args.seed or 0}
    if args.episodes:
        kw["episodes"] = args.episodes
    if args.outer:
        kw["n_outer"] = args.outer
    if args.workers:
        kw["workers"] = args.workers
    rep = reproduce_example(**kw)
    print(rep.to_text())
    if args.json:
        _write(args.json, rep.to_json() + "\n")
    if not rep.passed:
        raise _Exit(EXIT_REPRODUCE, "failed: " + "; ".join(rep.failures()))
    return EXIT_OK


def cmd_compare(args) -> int:
    from .sim import run_monte_carlo

    cfg = _config(args, need_plant=True)
    truth = PlantResponse.from_system(cfg.plant)
    model_resp = PlantResponse.from_system(cfg.model)
    known = bind_parameters(_solve(cfg), truth)
    naive = model_lqg(cfg.model, cfg.cost)
    learned, notes = _learn(cfg, args)
    rows = []
    evals = [("known_plant", known, truth), ("model_only_lqg", naive, model_resp),
             ("separated_learned", learned.strategy, learned.response)]
    n, seed, workers = cfg.run["episodes"], cfg.run["seed"], cfg.run["workers"]
    for name, strat, resp in evals:
        # common random numbers: every strategy sees the same episodes
        c = run_monte_carlo(cfg.plant, cfg.model, strat, cfg.noise, cfg.cost, n, seed + 7919,
                            workers=workers, plant_belief=resp).cost
        rows.append({"strategy": name, "J1_mean": c.J1_mean, "J1_stderr": c.J1_stderr, "episodes": c.episodes})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["strategy", "J1_mean", "J1_stderr", "episodes"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "J1_mean": format(r["J1_mean"], ".17g"), "J1_stderr": format(r["J1_stderr"], ".17g")})
    outdir = _outdir(args, cfg)
    man = _manifest(args, cfg, "compare")
    _write(os.path.join(outdir, "compare.csv"), buf.getvalue(), man)
    if args.json:
        _write(args.json, json.dumps({"rows": rows, "warnings": notes, "config_digest": cfg.digest},
                                     indent=2, sort_keys=True) + "\n", man)
    _finish(man, outdir)
    print(_fmt_table([[r["strategy"], f"{r['J1_mean']:.6f}", f"{r['J1_stderr']:.6f}"] for r in rows],
                     ["strategy", "J1_mean", "J1_stderr"]))
    for msg in notes:
        print(f"warning: {msg}", file=sys.stderr)
    if notes and args.strict:
        raise _Exit(EXIT_CONVERGENCE, "learning did not converge")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "learn": cmd_learn, "simulate": cmd_simulate,
            "reproduce-example": cmd_reproduce_example, "compare": cmd_compare}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)  # usage errors exit 2 here
    try:
        return COMMANDS[args.command](args)
    except _Exit as exc:
        if exc.msg:
            print(f"seplearn: {exc.msg}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"seplearn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"seplearn: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SeplearnError as exc:
        print(f"seplearn: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
