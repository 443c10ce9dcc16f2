"""``prunekit`` command-line interface.

Subcommands: analyze, budget, prune, eval, lwp, go.  Settings come from
defaults, then an optional ``--config`` file of ``key=value`` lines, then
command-line flags.  ``PRUNEKIT_SEED`` supplies the seed when neither the
file nor the flags set one.  Errors exit nonzero and print a one-line JSON
object ``{"error": <category>, "message": ...}`` on stderr.
"""
import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import checkpoint
from .exceptions import PruneKitError
from .go import DataConfig, GoConfig, pairs_table, run_go, trajectory_table
from .harness import (
    DatasetSpec,
    SRHarness,
    build_toy_vdsr,
    evaluate,
    fine_tune,
    generate_dataset,
    load_image_dir,
    mean_factor_harness,
)
from .lwp import SegmentSplit, report_table, run_lwp
from .pruning import (
    NetworkSpec,
    PruningPlan,
    apply_plan,
    factors_from_counts,
    kept_counts,
    plan_from_factors,
    snap_to_architecture,
    uniform_factors,
    weights_remained,
)
from .sparsity import analyze_network, report_rows
from .validation import parse_factor_list

logger = logging.getLogger("prunekit")

EXIT_CODES = {
    "usage": 2,
    "config": 2,
    "io": 3,
    "checkpoint": 4,
    "infeasible": 5,
    "divergence": 6,
    "shape": 7,
    "plan": 8,
    "not-fitted": 9,
    "error": 1,
}


class ConfigError(PruneKitError):
    category = "config"


def _env_seed():
    value = os.environ.get("PRUNEKIT_SEED")
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"PRUNEKIT_SEED must be an integer, got {value!r}")


def _floats(text):
    return parse_factor_list(text)


DATA_OPTIONS = {
    "images": (int, 32, "number of synthetic images"),
    "patch": (int, 16, "image edge length in pixels (even, >= 8)"),
    "data_seed": (int, None, "dataset seed (defaults to --seed)"),
    "image_dir": (str, None, "directory of 8-bit P5 PGM images to use instead of synthetic data"),
}

NET_OPTIONS = {
    "checkpoint": (str, None, "trained baseline checkpoint; a toy VDSR is built and trained if omitted"),
    "depth": (int, 6, "toy network depth"),
    "width": (int, 16, "toy network width"),
    "pretrain_epochs": (int, 60, "baseline training epochs for the toy network"),
    "pretrain_lr": (float, 0.05, "baseline training learning rate"),
}

TUNE_OPTIONS = {
    "harness": (str, "sr", "scorer: 'sr' (fine-tune + PSNR drop) or 'mean' (drop = mean(r))"),
    "epochs": (int, 3, "fine-tuning epochs per candidate"),
    "lr": (float, 1e-3, "fine-tuning learning rate"),
    "multiple": (int, 4, "snap kept-kernel counts to this multiple"),
    "seed": (int, None, "global seed (falls back to PRUNEKIT_SEED, then 0)"),
    "out": (str, ".", "output directory"),
}

COMMAND_OPTIONS = {
    "analyze": {
        "out": (str, None, "CSV output path (stdout if omitted)"),
    },
    "budget": {
        "r": (str, "0", "reducing factor: one value (uniform, output layer kept) or one per layer"),
        "multiple": (int, 1, "snap kept-kernel counts to this multiple"),
    },
    "prune": {
        "r": (str, None, "reducing factor, as for 'budget'"),
        "plan": (str, None, "JSON plan to apply instead of --r"),
        "multiple": (int, 1, "snap kept-kernel counts to this multiple"),
        "out": (str, None, "output checkpoint path"),
    },
    "eval": {
        **DATA_OPTIONS,
        "seed": (int, None, "global seed"),
        "out": (str, None, "JSON output path (stdout if omitted)"),
    },
    "lwp": {
        **NET_OPTIONS,
        **DATA_OPTIONS,
        **TUNE_OPTIONS,
        "budget": (float, 0.6, "maximum fraction of kernel weights kept"),
        "candidates": (str, "0.12,0.18,0.25,0.32,0.38,0.44,0.50", "uniform factors to sweep"),
        "split": (str, None, "front,middle,end segment lengths"),
        "delta_grid": (str, "0,0.0625,0.125,0.1875", "per-segment shift values"),
        "signs": (str, "1,-1,-1", "direction of the front,middle,end shifts"),
        "tolerance": (float, 0.01, "allowed budget deviation of adjusted candidates"),
    },
    "go": {
        **NET_OPTIONS,
        **DATA_OPTIONS,
        **TUNE_OPTIONS,
        "target_drop": (float, 0.29, "target performance drop (dB)"),
        "samples": (int, 64, "number of (r, drop) training pairs"),
        "surrogate": (str, "linear", "surrogate kind: linear or mlp"),
        "surrogate_epochs": (int, 5000, "surrogate training epochs"),
        "alpha": (float, 0.01, "gradient step on r"),
        "margin": (float, 0.01, "stop when |R(r) - target| is below this"),
        "max_iters": (int, 10000, "iteration cap for the r search"),
        "r0": (str, "0.25", "start point (one value or one per layer)"),
        "sample_low": (float, 0.0, "lower bound of sampled factors"),
        "sample_high": (float, 0.5, "upper bound of sampled factors"),
    },
}

POSITIONALS = {
    "analyze": ["checkpoint_path"],
    "budget": ["spec_path"],
    "prune": ["checkpoint_path"],
    "eval": ["baseline", "pruned"],
    "lwp": [],
    "go": [],
}


def build_parser():
    parser = argparse.ArgumentParser(prog="prunekit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in COMMAND_OPTIONS.items():
        p = sub.add_parser(name)
        for pos in POSITIONALS[name]:
            p.add_argument(pos)
        p.add_argument("--config", default=None, help="key=value config file")
        for key, (typ, default, help_text) in options.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ,
                           default=argparse.SUPPRESS, help=f"{help_text} (default: {default})")
    return parser


def read_config_file(path, allowed):
    settings = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in allowed:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            typ = allowed[key][0]
            try:
                settings[key] = typ(value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}")
    return settings


def resolve_config(command, args):
    options = COMMAND_OPTIONS[command]
    cfg = {key: default for key, (_, default, _) in options.items()}
    if args.config:
        cfg.update(read_config_file(args.config, options))
    for key in options:
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    if "seed" in cfg and cfg["seed"] is None:
        cfg["seed"] = _env_seed()
    if "data_seed" in cfg and cfg["data_seed"] is None:
        cfg["data_seed"] = cfg.get("seed", 0)
    return cfg


# output location does not affect results and is left out of report headers
_UNECHOED = {"out"}


def _config_header(cfg):
    return [f"# {key}={cfg[key]}" for key in sorted(cfg) if key not in _UNECHOED]


def _write_csv(path, table, cfg=None):
    buf = io.StringIO()
    for line in _config_header(cfg or {}):
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(table)
    text = buf.getvalue()
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _write_json(path, data):
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _load_spec(path):
    if checkpoint.is_checkpoint(path):
        return NetworkSpec.from_network(checkpoint.load(path))
    with open(path) as fh:
        return NetworkSpec.parse(fh.read())


def _factor_vector(text, spec):
    values = _floats(text)
    if len(values) == 1:
        return uniform_factors(spec, values[0])
    return np.array(values)


def _dataset(cfg):
    if cfg.get("image_dir"):
        return load_image_dir(cfg["image_dir"], cfg["patch"], seed=cfg["data_seed"])
    return generate_dataset(DatasetSpec(n_images=cfg["images"], patch=cfg["patch"], seed=cfg["data_seed"]))


def _baseline(cfg, dataset):
    if cfg["checkpoint"]:
        return checkpoint.load(cfg["checkpoint"]), False
    net = build_toy_vdsr(cfg["depth"], cfg["width"], seed=cfg["seed"])
    if cfg["pretrain_epochs"]:
        net, _ = fine_tune(net, dataset, cfg["pretrain_epochs"], cfg["pretrain_lr"])
    return net, True


def _harness(cfg, net, dataset):
    if cfg["harness"] == "sr":
        return SRHarness(net, dataset, cfg["epochs"], cfg["lr"])
    if cfg["harness"] == "mean":
        return mean_factor_harness
    raise ConfigError(f"unknown harness {cfg['harness']!r}")


def cmd_analyze(args, cfg):
    net = checkpoint.load(args.checkpoint_path)
    reports = analyze_network(net)
    for report in reports:
        if report.degenerate:
            logger.warning("layer %d is all zeros; every sparsity is 0", report.layer_index)
    table = [("layer", "kernel", "sparsity", "rank")]
    table += [(l, k, f"{s:.6f}", rank) for l, k, s, rank in report_rows(reports)]
    _write_csv(cfg["out"], table)


def budget_table(spec, r):
    kept = kept_counts(spec, r)
    table = [("layer", "kernels", "kept", "reducing_factor")]
    for l, (n, k) in enumerate(zip(spec.kernel_counts, kept)):
        table.append((l, int(n), k, f"{1 - k / n:.6f}"))
    return table


def cmd_budget(args, cfg):
    spec = _load_spec(args.spec_path)
    r = _factor_vector(cfg["r"], spec)
    if cfg["multiple"] > 1:
        r = snap_to_architecture(r, spec, cfg["multiple"])
    _write_csv(None, budget_table(spec, r))
    frac = weights_remained(spec, r)
    print(f"weights_remained={frac:.6f} ({100 * frac:.1f}%)")


def cmd_prune(args, cfg):
    net = checkpoint.load(args.checkpoint_path)
    if not cfg["out"]:
        raise ConfigError("prune needs --out")
    if cfg["plan"]:
        with open(cfg["plan"]) as fh:
            plan = PruningPlan.from_dict(json.load(fh))
    else:
        r = _factor_vector(cfg["r"] or "0", net)
        if cfg["multiple"] > 1:
            r = snap_to_architecture(r, net, cfg["multiple"])
        plan = plan_from_factors(net, r)
    pruned = apply_plan(net, plan)
    checkpoint.save(pruned, cfg["out"])
    r_eff = factors_from_counts(net, plan.kept_counts)
    sidecar = {
        **plan.to_dict(),
        "reducing_factor": [round(float(v), 6) for v in r_eff],
        "weights_remained": round(weights_remained(net, r_eff), 6),
    }
    _write_json(os.path.splitext(cfg["out"])[0] + ".plan.json", sidecar)


def cmd_eval(args, cfg):
    base = checkpoint.load(args.baseline)
    pruned = checkpoint.load(args.pruned)
    result = evaluate(base, pruned, _dataset(cfg))
    _write_json(cfg["out"], result.to_dict())


def _prepare_run(cfg):
    os.makedirs(cfg["out"], exist_ok=True)
    dataset = _dataset(cfg)
    net, built = _baseline(cfg, dataset)
    if built:
        checkpoint.save(net, os.path.join(cfg["out"], "baseline.pkt"))
    return dataset, net


def _finalize(cfg, harness, winner, prefix):
    if isinstance(harness, SRHarness):
        winner = harness.tune(winner)
    checkpoint.save(winner, os.path.join(cfg["out"], f"{prefix}_winner.pkt"))


def cmd_lwp(args, cfg):
    dataset, net = _prepare_run(cfg)
    harness = _harness(cfg, net, dataset)
    split = SegmentSplit.parse(cfg["split"]) if cfg["split"] else SegmentSplit.default(len(net))
    result = run_lwp(
        net, _floats(cfg["candidates"]), cfg["budget"], split, _floats(cfg["delta_grid"]),
        cfg["tolerance"], harness, cfg["multiple"], tuple(_floats(cfg["signs"])),
    )
    _write_csv(os.path.join(cfg["out"], "lwp_report.csv"), report_table(result.rows), cfg)
    row = result.rows[result.selected]
    _write_json(os.path.join(cfg["out"], "lwp_plan.json"), {
        "kept": [int(k) for k in row.kept],
        "reducing_factor": [round(float(v), 6) for v in row.r],
        "weights_remained": round(row.weights_remained, 6),
        "drop": round(row.drop, 6),
    })
    _finalize(cfg, harness, result.network, "lwp")


def cmd_go(args, cfg):
    dataset, net = _prepare_run(cfg)
    harness = _harness(cfg, net, dataset)
    r0 = _floats(cfg["r0"])
    go_cfg = GoConfig(cfg["target_drop"], cfg["alpha"], cfg["margin"], cfg["max_iters"],
                      r0[0] if len(r0) == 1 else r0)
    data_cfg = DataConfig(cfg["samples"], cfg["seed"], cfg["sample_low"], cfg["sample_high"],
                          cfg["multiple"], cfg["surrogate"], cfg["surrogate_epochs"], cfg["seed"])
    result = run_go(net, go_cfg, data_cfg, harness)
    _write_csv(os.path.join(cfg["out"], "go_pairs.csv"), pairs_table(result.pairs), cfg)
    _write_csv(os.path.join(cfg["out"], "go_trajectory.csv"), trajectory_table(result.optimized.trajectory), cfg)
    kept = kept_counts(net, result.r)
    _write_json(os.path.join(cfg["out"], "go_plan.json"), {
        "kept": kept,
        "reducing_factor_optimized": [round(float(v), 6) for v in result.optimized.r],
        "reducing_factor": [round(float(v), 6) for v in result.r],
        "weights_remained": round(result.weights_remained, 6),
        "target_drop": result.target,
        "predicted_drop": round(result.predicted, 6),
        "achieved_drop": round(result.achieved, 6),
        "converged": result.optimized.converged,
        "iterations": result.optimized.iterations,
        "failed_samples": result.n_failed,
    })
    checkpoint.save(result.network, os.path.join(cfg["out"], "go_winner.pkt"))


COMMANDS = {
    "analyze": cmd_analyze,
    "budget": cmd_budget,
    "prune": cmd_prune,
    "eval": cmd_eval,
    "lwp": cmd_lwp,
    "go": cmd_go,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        COMMANDS[args.command](args, cfg)
    except PruneKitError as exc:
        return _fail(exc.category, exc)
    except OSError as exc:
        return _fail("io", exc)
    except ValueError as exc:
        return _fail("usage", exc)
    return 0


def _fail(category, exc):
    sys.stderr.write(json.dumps({"error": category, "message": str(exc)}) + "\n")
    return EXIT_CODES.get(category, 1)


if __name__ == "__main__":
    sys.exit(main())
