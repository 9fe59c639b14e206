"""Command-line driver for the worked examples.

Every subcommand writes CSV files into ``--out`` whose first line is a
``#`` comment recording the preset, variants, seed, log base, the budget
rule and the solver parameters.  Exit status is 0 on success, 1 when some
solver did not converge (the outputs are still written) and 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bayes, pareto, vi
from .config import ConfigError, ExperimentConfig, load_config, validate
from .rates import set_log_base

log = logging.getLogger("fadegame")

BUDGET_RULE = "Pbar_i = 10^(snr_db/10), unit noise"


def provenance(cfg: ExperimentConfig, command: str, variants=None, extra=None) -> str:
    info = {
        "command": command,
        "preset": cfg.label(),
        "variants": variants if variants is not None else cfg.variants,
        "seed": cfg.seed,
        "log_base": cfg.log_base,
        "budget_rule": BUDGET_RULE,
        "solver": dataclasses.asdict(cfg.solve_params()),
    }
    if cfg.model is not None:
        info["model"] = cfg.model
    info.update(extra or {})
    return "# " + json.dumps(info, sort_keys=False)


def write_csv(path: Path, header: str, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def read_csv(path) -> tuple[dict, list[dict]]:
    """Provenance dict and data rows of a CSV written by this tool."""
    text = Path(path).read_text().splitlines()
    meta = json.loads(text[0][2:]) if text and text[0].startswith("# ") else {}
    body = [line for line in text if not line.startswith("#")]
    return meta, list(csv.DictReader(body))


# Sweep points run in worker processes, so each task is a plain tuple.

def _ne_point(task):
    cfg, variant, snr = task
    set_log_base(cfg.log_base)
    model = cfg.build_model(snr)
    rep = vi.solve_ne(model, variant, cfg.solve_params())
    imp, ok = vi.verify_ne(model, variant, rep.profile)
    return variant, snr, rep, imp


def _pareto_point(task):
    cfg, variant, snr, kind = task
    set_log_base(cfg.log_base)
    model = cfg.build_model(snr)
    params = cfg.aug_params()
    n = model.n_users
    if kind == "bargain":
        d = cfg.objective.get("disagreement") or [0.0] * n
        rep = pareto.solve_bargaining(model, variant, d, params, seed=cfg.seed)
    else:
        if cfg.objective.get("kind", "weighted_sum") == "nash_product":
            obj = pareto.SocialObjective.nash_product(
                cfg.objective.get("disagreement") or [0.0] * n, variant)
        else:
            obj = pareto.SocialObjective.weighted_sum(cfg.objective.get("weights") or [1.0] * n,
                                                      variant)
        rep = pareto.solve_pareto(model, variant, obj, params, seed=cfg.seed)
    return variant, snr, rep


def _bayes_point(task):
    cfg, snr, seed = task
    set_log_base(cfg.log_base)
    model = cfg.build_model(snr)
    trace = bayes.simulate(model, cfg.power_levels(model.n_users), cfg.bayes_params(), seed)
    return snr, seed, trace


def _phase1_point(task):
    cfg, variant, snr = task
    set_log_base(cfg.log_base)
    model = cfg.build_model(snr)
    before, after = vi.phase1_study(model, variant, cfg.starts, cfg.max_iter, cfg.seed,
                                    cfg.solve_params())
    return variant, snr, before, after


def _run(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _tag(snr: float) -> str:
    return f"{snr:g}".replace("-", "m").replace(".", "p")


def cmd_solve_ne(cfg: ExperimentConfig, out: Path) -> int:
    tasks = [(cfg, v, s) for v in cfg.variants for s in cfg.snr_db]
    rows, failed = [], 0
    for variant, snr, rep, imp in _run(_ne_point, tasks, cfg.jobs):
        ok = rep.converged and bool(np.all(imp <= 1e-3))
        failed += not ok
        print(f"{cfg.label()} {snr:g} dB {rep.summary()}; max BR gain {imp.max():.2e}")
        for i, r in enumerate(rep.rates):
            rows.append([variant, snr, i, float(r), rep.sum_rate, rep.residual,
                         rep.converged, float(imp[i]), rep.picard_iterations,
                         rep.descent_iterations, rep.restarts])
        head = provenance(cfg, "solve-ne", [variant], {"snr_db": snr})
        pol = [[i, s, float(p)] for i, v in enumerate(rep.profile.values) for s, p in enumerate(v)]
        write_csv(out / f"policy_{variant}_{_tag(snr)}.csv", head,
                  ["user", "info_state_index", "power"], pol)
    write_csv(out / "solve_ne.csv", provenance(cfg, "solve-ne"),
              ["variant", "snr_db", "user", "rate", "sum_rate", "residual", "converged",
               "br_gain", "picard", "descent", "restarts"], rows)
    return 1 if failed else 0


def cmd_pareto(cfg: ExperimentConfig, out: Path, kind: str = "pareto") -> int:
    tasks = [(cfg, v, s, kind) for v in cfg.variants for s in cfg.snr_db]
    rows, failed = [], 0
    for variant, snr, rep in _run(_pareto_point, tasks, cfg.jobs):
        failed += not rep.converged
        print(f"{cfg.label()} {snr:g} dB {kind} {rep.summary()}")
        for i, r in enumerate(rep.rates):
            rows.append([variant, snr, i, float(r), rep.sum_rate, rep.start, rep.converged,
                         float(rep.multipliers[i]), float(rep.constraint_gap[i]),
                         rep.outer_iterations, rep.clamps])
    extra = {"aug_lagrangian": dataclasses.asdict(cfg.aug_params()), "objective": cfg.objective}
    write_csv(out / f"{kind}.csv", provenance(cfg, kind, extra=extra),
              ["variant", "snr_db", "user", "rate", "sum_rate", "start", "converged",
               "multiplier", "constraint_gap", "outer", "clamps"], rows)
    return 1 if failed else 0


def cmd_bayes(cfg: ExperimentConfig, out: Path) -> int:
    tasks = [(cfg, s, cfg.seed) for s in cfg.snr_db]
    rows, failed = [], 0
    extra = {"bayes": dataclasses.asdict(cfg.bayes_params()), "levels": cfg.levels}
    for snr, seed, trace in _run(_bayes_point, tasks, cfg.jobs):
        failed += not trace.converged
        print(f"{cfg.label()} {snr:g} dB {trace.summary()}")
        for s in trace.strategies:
            rows.append([snr, s.user, trace.slots, trace.converged,
                         float(trace.rates[s.user]), float(trace.improvements[s.user]),
                         " ".join(f"{p:g}" for p in s.powers(trace.levels))])
        head = provenance(cfg, "bayes", ["direct"], {**extra, "snr_db": snr})
        trace_rows = [[t + 1, i, float(trace.actions[t, i]), float(trace.interference[t, i])]
                      for t in range(trace.slots) for i in range(trace.actions.shape[1])]
        write_csv(out / f"bayes_trace_{_tag(snr)}.csv", head,
                  ["slot", "user", "action", "interference"], trace_rows)
    write_csv(out / "bayes.csv", provenance(cfg, "bayes", ["direct"], extra),
              ["snr_db", "user", "slots", "converged", "rate", "max_gain", "powers"], rows)
    return 1 if failed else 0


def format_phase1(results, variants) -> str:
    """Rows per SNR, a before/after column pair per variant."""
    table = {(v, s): (b, a) for v, s, b, a in results}
    snrs = sorted({s for _, s, _, _ in results})
    head = f"{'SNR(dB)':>8}" + "".join(f"  {v + ' before':>16}  {v + ' after':>16}"
                                        for v in variants)
    lines = [head]
    for s in snrs:
        cells = "".join(f"  {table[v, s][0]:>16.4e}  {table[v, s][1]:>16.4e}" for v in variants)
        lines.append(f"{s:>8g}{cells}")
    return "\n".join(lines)


def cmd_phase1(cfg: ExperimentConfig, out: Path) -> int:
    tasks = [(cfg, v, s) for s in cfg.snr_db for v in cfg.variants]
    results = _run(_phase1_point, tasks, cfg.jobs)
    print(format_phase1(results, cfg.variants))
    extra = {"starts": cfg.starts, "max_iter": cfg.max_iter}
    write_csv(out / "phase1.csv", provenance(cfg, "phase1-study", extra=extra),
              ["snr_db", "variant", "mean_g_before", "mean_g_after"],
              [[s, v, b, a] for v, s, b, a in results])
    return 0


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    tasks = [(cfg, v, s) for v in cfg.variants for s in cfg.snr_db]
    rows, failed = [], 0
    for variant, snr, rep, imp in _run(_ne_point, tasks, cfg.jobs):
        failed += not rep.converged
        rows.append([variant, snr, rep.sum_rate, *[float(r) for r in rep.rates],
                     rep.residual, rep.converged])
    n = len(rows[0]) - 5
    write_csv(out / "sweep.csv", provenance(cfg, "sweep"),
              ["variant", "snr_db", "sum_rate", *[f"rate_{i}" for i in range(n)], "residual",
               "converged"], rows)
    for r in rows:
        print(f"{r[0]:>9} {r[1]:>6g} dB  sum rate {r[2]:.4f}")
    return 1 if failed else 0


COMMANDS = {
    "solve-ne": cmd_solve_ne,
    "pareto": lambda c, o: cmd_pareto(c, o, "pareto"),
    "bargain": lambda c, o: cmd_pareto(c, o, "bargain"),
    "bayes": cmd_bayes,
    "phase1-study": cmd_phase1,
    "sweep": cmd_sweep,
}


def _floats(text: str) -> list[float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid SNR list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", help="example1, example2, example3 or example2-bayes")
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--variant", action="append",
                        help="full, incident or direct; repeat or comma-separate")
    common.add_argument("--snr", type=_floats, help="SNR grid in dB, e.g. 0,5,10")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--log-base", choices=["e", "2"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fadegame",
                                     description="Power games on fading interference channels")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "phase1-study":
            p.add_argument("--starts", type=int, help="random starts per cell")
            p.add_argument("--max", dest="max_iter", type=int, help="Picard iterations")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.preset:
        cfg.preset, cfg.model = args.preset, None
    if args.variant:
        cfg.variants = [v for item in args.variant for v in item.split(",") if v]
    if args.snr is not None:
        cfg.snr_db = args.snr
    for name in ("seed", "jobs", "out", "log_base", "starts", "max_iter"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    validate(cfg)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    set_log_base(cfg.log_base)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    status = COMMANDS[args.command](cfg, out)
    if status:
        print("warning: some runs did not converge; see the CSV outputs", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
