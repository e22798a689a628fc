"""Command-line entry point: ``fewstep {train,sample,eval,sweep,flops,prune}``.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime error.
Every command is deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from itertools import product

from .config import ConfigError, ExperimentConfig, load_config
from .denoisers import ResidualDenoiser, load_checkpoint, save_checkpoint
from .errors import DivergenceError, DomainError, SamplingError, ValidationError
from .experiments import prune_study, sweep_cell, summarize
from .flops import PRESETS, WorkloadShape, flops_curve, rows_to_csv
from .geom import RngStream, StructureParseError, read_structure, write_structure
from .metrics import (ClashRule, UndefinedScore, clash_stats, diversity_spread, metric_report,
                      reports_to_csv)
from .samplers import sample
from .train import make_task, train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class RuntimeFailure(Exception):
    pass


def _write(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)


def _out_dir(args, cfg: ExperimentConfig):
    d = args.out or cfg.output_dir
    os.makedirs(d, exist_ok=True)
    _write(os.path.join(d, "effective_config.yaml"), cfg.echo())
    return d


def _task(cfg: ExperimentConfig):
    return make_task(cfg.data(), cfg.raw["data"]["data_seed"])


def _denoiser(cfg: ExperimentConfig, checkpoint):
    """Analytic oracle when configured, otherwise a trained checkpoint."""
    spec = cfg.denoiser()
    if spec.backend == "gmm-analytic":
        return cfg.analytic_denoiser(), None
    path = checkpoint or cfg.raw["checkpoint"]
    if not path:
        raise ConfigError("a residual-net denoiser needs --checkpoint or a checkpoint key", None, cfg.source)
    try:
        params, saved = load_checkpoint(path)
    except OSError as e:
        raise RuntimeFailure(f"cannot read checkpoint {path}: {e.strerror}") from None
    spec = saved or spec
    return ResidualDenoiser(spec, params, cfg.noise()), params


def _csv(rows, cols) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    return buf.getvalue()


# -- commands -----------------------------------------------------------------

def cmd_train(args):
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    spec, tcfg, noise = cfg.denoiser(), cfg.train(), cfg.noise()
    task = _task(cfg)
    ckpts = []

    def on_eval(params):
        from .train import heldout_loss
        path = os.path.join(out, f"checkpoint_{len(ckpts) + 1:06d}.bin")
        save_checkpoint(path, params, spec)
        ckpts.append(path)
        return {"heldout_loss": heldout_loss(params, spec, task, tcfg, noise)}

    rep = train(spec, task, tcfg, noise, eval_fn=on_eval)
    save_checkpoint(os.path.join(out, "checkpoint.bin"), rep.params, spec)
    _write(os.path.join(out, "train_curve.csv"), rep.to_csv())
    return EXIT_OK


def cmd_sample(args):
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    D, _ = _denoiser(cfg, args.checkpoint)
    task = _task(cfg)
    s = cfg.raw["sampler"]
    scfg = cfg.sampler()
    cond = task.condition(s["pathway"])
    m = cfg.raw["metrics"]
    rule = cfg.clash_rule()
    grid, rows = [], []
    for i in range(s["n_seeds"]):
        grid.append([])
        for j in range(s["n_samples"]):
            traj = sample(D, cond, scfg, task.reference, RngStream(cfg.seed, (i, j)))
            grid[-1].append(traj.final)
            write_structure(traj.final, os.path.join(out, f"sample_{i:03d}_{j:03d}.txt"))
            if i == 0 and j == 0:
                _write(os.path.join(out, "trajectory_000_000.jsonl"), traj.to_jsonl(coords=args.coords))
            rep = metric_report(traj.final, task.reference, m["inclusion_radius"], rule, m["rmsd_threshold"])
            rows.append(("sample", i, j, rep))
    _write(os.path.join(out, "metrics.csv"), reports_to_csv(rows))
    summary = {"clash": vars(clash_stats(grid, rule))}
    flat = [x for row in grid for x in row]
    if len(flat) > 1:
        summary["diversity"] = diversity_spread(flat, task.reference, m["inclusion_radius"])
    _write(os.path.join(out, "summary.json"), json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return EXIT_OK


def cmd_eval(args):
    try:
        pred = read_structure(args.pred)
        target = read_structure(args.target)
    except OSError as e:
        raise RuntimeFailure(f"cannot read structure: {e}") from None
    except StructureParseError as e:
        raise RuntimeFailure(str(e)) from None
    rule = ClashRule(args.clash_min_distance, args.clash_mode)
    rep = metric_report(pred, target, args.inclusion_radius, rule, args.rmsd_threshold)
    text = json.dumps(rep.to_dict(), sort_keys=True, indent=1) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _sweep_worker(job):
    cfg, checkpoint, pathway, mode, eta, steps = job
    D, _ = _denoiser(cfg, checkpoint)
    task = _task(cfg)
    return sweep_cell(D, task.condition(pathway), task, mode, eta, steps, range(cfg.raw["sweep"]["n_seeds"]),
                      cfg.noise())


SWEEP_COLUMNS = ("mode", "eta", "steps", "n_seeds", "mean", "var", "best", "worst", "spread")


def cmd_sweep(args):
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    _denoiser(cfg, args.checkpoint)  # fail fast before spawning workers
    sw = cfg.raw["sweep"]
    pathway = cfg.raw["sampler"]["pathway"]
    jobs = [(cfg, args.checkpoint, pathway, mode, eta, steps)
            for mode, eta, steps in product(sw["modes"], sw["etas"], sw["steps"])]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as ex:
            rows = list(ex.map(_sweep_worker, jobs))  # map keeps submission order
    else:
        rows = [_sweep_worker(j) for j in jobs]
    _write(os.path.join(out, "sweep.csv"), _csv(rows, SWEEP_COLUMNS))
    return EXIT_OK


def parse_grid(text):
    """``a:b:step`` (inclusive) or a comma list of positive integers."""
    try:
        if ":" in text:
            a, b, step = (int(v) for v in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            vals = list(range(a, b + 1, step))
        else:
            vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use a:b:step or a,b,c") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"grid {text!r} must hold positive integers")
    return vals


def cmd_flops(args):
    names = list(PRESETS) if args.preset == "all" else [args.preset]
    unknown = [n for n in names if n not in PRESETS]
    if unknown:
        raise ConfigError(f"unknown preset {unknown[0]!r}; available: {', '.join(PRESETS)}, all", None, "--preset")
    fixed = WorkloadShape()
    tokens = args.tokens or [fixed.n_tokens]
    msa = args.msa or [fixed.n_msa_rows]
    atoms = args.atoms or [fixed.n_atoms]
    rows = []
    for name in names:
        for m, at in product(msa, atoms):
            rows += flops_curve(PRESETS[name], "tokens", tokens, WorkloadShape(tokens[0], m, at))
    text = rows_to_csv(rows)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


PRUNE_COLUMNS = ("k", "seed", "baseline", "zero_shot", "finetuned")


def cmd_prune(args):
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    D, params = _denoiser(cfg, args.checkpoint)
    if params is None:
        raise ConfigError("pruning needs a trained residual-net checkpoint", None, cfg.source)
    if max(cfg.raw["prune"]["ks"]) >= params.n_blocks:
        raise ConfigError(f"prune ks must lie in 0..{params.n_blocks - 1}", cfg.lines.get("prune.ks"), cfg.source)
    p = cfg.raw["prune"]
    rows = prune_study(params, D.spec, _task(cfg), cfg.noise(), p["ks"], p["seeds"], p["iterations"], p["lr"],
                       range(cfg.raw["sweep"]["n_seeds"]))
    _write(os.path.join(out, "prune.csv"), _csv(rows, PRUNE_COLUMNS))
    med = {}
    for k in p["ks"]:
        sel = [r for r in rows if r["k"] == k]
        med[str(k)] = {"zero_shot": summarize([r["zero_shot"] for r in sel]),
                       "finetuned": summarize([r["finetuned"] for r in sel])}
    _write(os.path.join(out, "prune_summary.json"), json.dumps(med, sort_keys=True, indent=1) + "\n")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

class _Help(argparse.ArgumentDefaultsHelpFormatter):
    # None defaults are described in the help text itself
    def _get_help_string(self, action):
        return action.help if action.default is None else super()._get_help_string(action)


def build_parser():
    p = argparse.ArgumentParser(prog="fewstep", description=__doc__.splitlines()[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    fmt = _Help

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_, formatter_class=fmt)
        sp.add_argument("config", help="YAML experiment config")
        sp.add_argument("--out", default=None, help="output directory (default: output_dir from the config)")
        return sp

    with_config("train", "train the toy denoiser and write checkpoints and curves")
    sp = with_config("sample", "draw a seeds x samples grid and score it")
    sp.add_argument("--checkpoint", default=None, help="trained checkpoint (overrides the config)")
    sp.add_argument("--coords", action="store_true", help="include full coordinates in the trajectory dump")
    sp = with_config("sweep", "eta x steps x mode grid of LDDT statistics")
    sp.add_argument("--checkpoint", default=None, help="trained checkpoint (overrides the config)")
    sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    sp = with_config("prune", "zero-shot and finetuned pruning study")
    sp.add_argument("--checkpoint", default=None, help="trained checkpoint (overrides the config)")

    sp = sub.add_parser("eval", help="score a predicted structure file against a target", formatter_class=fmt)
    sp.add_argument("pred")
    sp.add_argument("target")
    sp.add_argument("--inclusion-radius", type=float, default=15.0)
    sp.add_argument("--rmsd-threshold", type=float, default=2.0)
    sp.add_argument("--clash-min-distance", type=float, default=1.1)
    sp.add_argument("--clash-mode", default="all", choices=["all", "intra-protein", "protein-ligand"])
    sp.add_argument("--out", default=None, help="write JSON here instead of stdout")

    sp = sub.add_parser("flops", help="analytic FLOPs table", formatter_class=fmt)
    sp.add_argument("--preset", default="all", help=f"one of {', '.join(PRESETS)} or all")
    sp.add_argument("--tokens", type=parse_grid, default=None, help="token grid, a:b:step or list (default 384)")
    sp.add_argument("--msa", type=parse_grid, default=None, help="MSA-row grid (default 2048)")
    sp.add_argument("--atoms", type=parse_grid, default=None, help="atom grid (default 8832)")
    sp.add_argument("--out", default=None, help="write CSV here instead of stdout")
    return p


COMMANDS = {"train": cmd_train, "sample": cmd_sample, "eval": cmd_eval, "sweep": cmd_sweep,
            "flops": cmd_flops, "prune": cmd_prune}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, DivergenceError, SamplingError, DomainError, UndefinedScore, ValidationError,
            OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
