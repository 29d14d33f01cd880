"""Operator-facing command surface.

Subcommands: ingest, pretrain, sample, eval, probe, selftest. A flat
key=value config file (default path from MJAE_CONFIG) supplies defaults;
flags override. Every completed run writes a JSON manifest next to its
output. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from .evalsuite import (generation_metrics, linear_probe, radius_of_gyration,
                        symmetry_report)
from .molgraph import ParseError, parse_molecule, serialize_molecule
from .network import NetworkConfig, init_params
from .sampling import SamplerConfig, generate
from .schedule import NoiseSchedule
from .selftest import run_selftest
from .training import (TrainConfig, build_schedules, check_shapes,
                       load_checkpoint, save_checkpoint, train)

__version__ = "0.1.0"


def load_config_file(path):
    """Flat key=value config; blank lines and # comments ignored."""
    cfg = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def _file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path, command, config, seed, inputs, outputs, started):
    """Atomic run manifest: what ran, on what, producing what."""
    snapshot = {k: v for k, v in config.items()
                if isinstance(v, (str, int, float, bool, list, dict, type(None)))}
    manifest = {
        "command": command,
        "config": snapshot,
        "seed": seed,
        "build": __version__,
        "input_hashes": {p: _file_hash(p) for p in inputs if os.path.exists(p)},
        "outputs": outputs,
        "wall_time_s": round(time.time() - started, 3),
    }
    tmp = out_path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2)
    os.replace(tmp, out_path)


def read_dataset(path):
    """Parse a JSONL dataset; returns (graphs, diagnostics with line numbers)."""
    graphs = []
    diagnostics = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                graphs.append(parse_molecule(line))
            except ParseError as e:
                diagnostics.append(f"line {lineno}: {e}")
    return graphs, diagnostics


def _train_config(args):
    sched = NoiseSchedule(
        kind=args.schedule_kind, beta_min=args.beta_min, beta_max=args.beta_max,
        sigma_min=args.sigma_min, sigma_max=args.sigma_max, steps=args.steps)
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        seed=args.seed, lambda1=args.lambda1, lambda2=args.lambda2,
        schedule=sched, t_min=args.t_min, tau0=args.tau0,
        self_cond_prob=args.self_cond_prob,
        lr_schedule=getattr(args, "lr_schedule", "constant"))


def _net_config(args):
    return NetworkConfig(latent=args.latent, rounds=args.rounds,
                         gcn_layers=args.gcn_layers, d_time=args.d_time,
                         d_contrast=args.d_contrast)


# -- subcommands ---------------------------------------------------------

def cmd_ingest(args):
    started = time.time()
    graphs, diagnostics = read_dataset(args.input)
    for d in diagnostics:
        print(f"rejected: {d}", file=sys.stderr)
    if not graphs:
        print("error: no valid records", file=sys.stderr)
        return 1
    with open(args.output, "w") as fh:
        for g in graphs:
            fh.write(serialize_molecule(g) + "\n")
    print(f"ingested {len(graphs)} molecules, rejected {len(diagnostics)}")
    write_manifest(args.output + ".manifest.json", "ingest", vars(args),
                   None, [args.input], [args.output], started)
    return 0


def cmd_pretrain(args):
    started = time.time()
    graphs, diagnostics = read_dataset(args.dataset)
    if not graphs:
        print("error: no valid records in dataset", file=sys.stderr)
        return 1
    cfg = _train_config(args)
    net_cfg = _net_config(args)
    history = []

    def log_epoch(epoch, entry):
        history.append(entry)
        print(f"epoch {epoch:4d}  total {entry['total']:.4f}  "
              f"sc {entry['l_sc']:.4f}  co {entry['l_co']:.4f}")

    params, history = train(graphs, cfg, net_cfg, on_epoch=log_epoch)
    from .training import init_adam_state
    save_checkpoint(params, init_adam_state(params), args.out,
                    meta={"net": asdict(net_cfg), "epochs": cfg.epochs})
    if args.loss_log:
        with open(args.loss_log, "w") as fh:
            json.dump(history, fh, indent=2)
    write_manifest(args.out + ".manifest.json", "pretrain", vars(args),
                   args.seed, [args.dataset], [args.out], started)
    return 0


def _load_model(path, args):
    params, state, meta = load_checkpoint(path)
    net_cfg = _net_config(args)
    check_shapes(params, net_cfg)
    return params, net_cfg


def cmd_sample(args):
    started = time.time()
    params, net_cfg = _load_model(args.checkpoint, args)
    schedules = build_schedules(_train_config(args))
    cfg = SamplerConfig(steps=args.steps, lam=args.lam, n_atoms=args.n_atoms,
                        seed=args.seed, t_end=args.t_min)
    graphs = generate(params, net_cfg, schedules, cfg, args.count)
    with open(args.out, "w") as fh:
        for g in graphs:
            fh.write(serialize_molecule(g) + "\n")
    print(f"wrote {len(graphs)} samples to {args.out}")
    write_manifest(args.out + ".manifest.json", "sample",
                   vars(args) | {"checkpoint_hash": _file_hash(args.checkpoint)},
                   args.seed, [args.checkpoint], [args.out], started)
    return 0


def cmd_eval(args):
    started = time.time()
    report = {}
    params, net_cfg = _load_model(args.checkpoint, args)
    if args.probe_set:
        probes, _ = read_dataset(args.probe_set)
        rep = symmetry_report(params, net_cfg, probes[:args.max_probes],
                              n_rotations=args.n_rotations, seed=args.seed)
        report["symmetry"] = rep.as_dict()
    if args.samples and args.reference:
        samples, _ = read_dataset(args.samples)
        reference, _ = read_dataset(args.reference)
        report["generation"] = generation_metrics(samples, reference)
    if not report:
        print("error: nothing to evaluate (need --probe-set or --samples/--reference)",
              file=sys.stderr)
        return 2
    _emit_report(report, args.report)
    write_manifest((args.report or "eval") + ".manifest.json", "eval", vars(args),
                   args.seed, [args.checkpoint], [args.report or ""], started)
    return 0


def cmd_probe(args):
    started = time.time()
    graphs, _ = read_dataset(args.dataset)
    if not graphs:
        print("error: no valid records in dataset", file=sys.stderr)
        return 1
    labels = [radius_of_gyration(g) for g in graphs]
    seeds = tuple(range(args.probe_seeds))
    params, net_cfg = _load_model(args.checkpoint, args)
    pretrained = linear_probe(params, net_cfg, graphs, labels, seeds)
    rand_params = init_params(net_cfg, np.random.default_rng(args.seed))
    random_init = linear_probe(rand_params, net_cfg, graphs, labels, seeds)
    report = {"pretrained_mse": pretrained, "random_init_mse": random_init,
              "label": "radius_of_gyration", "seeds": list(seeds)}
    print(f"probe MSE  pretrained {pretrained:.5f}  random-init {random_init:.5f}")
    _emit_report(report, args.report)
    write_manifest((args.report or "probe") + ".manifest.json", "probe", vars(args),
                   args.seed, [args.checkpoint, args.dataset],
                   [args.report or ""], started)
    return 0


def cmd_selftest(args):
    started = time.time()
    ok, results = run_selftest(verbose=True)
    write_manifest(args.manifest, "selftest", vars(args), args.seed, [],
                   [args.manifest], started)
    return 0 if ok else 1


def _emit_report(report, path):
    if path:
        with open(path, "w") as fh:
            json.dump(report, fh, indent=2)
    print(json.dumps(report, indent=2, default=str))


# -- parser --------------------------------------------------------------

def build_parser(defaults):
    parser = argparse.ArgumentParser(prog="mjae",
                                     description="Joint 2D/3D molecular trajectory "
                                                 "pretraining, generation, and evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=int(defaults.get("seed", 0)))
        p.add_argument("--threads", type=int, default=1,
                       help="data-parallel width; 1 is the deterministic reference mode")
        p.add_argument("--schedule-kind", default=defaults.get("schedule.kind", "VP"))
        p.add_argument("--beta-min", type=float, default=float(defaults.get("schedule.beta_min", 0.1)))
        p.add_argument("--beta-max", type=float, default=float(defaults.get("schedule.beta_max", 10.0)))
        p.add_argument("--sigma-min", type=float, default=float(defaults.get("schedule.sigma_min", 0.01)))
        p.add_argument("--sigma-max", type=float, default=float(defaults.get("schedule.sigma_max", 1.0)))
        p.add_argument("--steps", type=int, default=int(defaults.get("schedule.steps", 1000)))
        p.add_argument("--t-min", type=float, default=float(defaults.get("trajectory.t_min", 1e-3)))
        p.add_argument("--latent", type=int, default=int(defaults.get("net.latent", 128)))
        p.add_argument("--rounds", type=int, default=int(defaults.get("net.rounds", 3)))
        p.add_argument("--gcn-layers", type=int, default=int(defaults.get("net.gcn_layers", 3)))
        p.add_argument("--d-time", type=int, default=int(defaults.get("net.d_time", 64)))
        p.add_argument("--d-contrast", type=int, default=int(defaults.get("net.d_contrast", 64)))
        p.add_argument("--lambda1", type=float, default=float(defaults.get("loss.lambda1", 1.0)))
        p.add_argument("--lambda2", type=float, default=float(defaults.get("loss.lambda2", 0.01)))
        p.add_argument("--tau0", type=float, default=float(defaults.get("loss.tau0", 0.5)))

    p = sub.add_parser("ingest", help="validate and normalize a JSONL dataset")
    p.add_argument("input")
    p.add_argument("output")
    common(p)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("pretrain", help="train the score network")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=int(defaults.get("train.epochs", 50)))
    p.add_argument("--batch-size", type=int, default=int(defaults.get("train.batch_size", 8)))
    p.add_argument("--lr", type=float, default=float(defaults.get("train.lr", 1e-4)))
    p.add_argument("--self-cond-prob", type=float,
                   default=float(defaults.get("train.self_cond_prob", 0.0)))
    p.add_argument("--lr-schedule", choices=("constant", "cosine"),
                   default=str(defaults.get("train.lr_schedule", "constant")))
    p.add_argument("--loss-log", default=None)
    common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("sample", help="generate molecules from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--n-atoms", type=int, default=8)
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--self-cond-prob", type=float, default=0.0)
    common(p)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="symmetry report and generation metrics")
    p.add_argument("checkpoint")
    p.add_argument("--probe-set", default=None)
    p.add_argument("--samples", default=None)
    p.add_argument("--reference", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--n-rotations", type=int, default=20)
    p.add_argument("--max-probes", type=int, default=10)
    common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("probe", help="frozen-embedding linear probe")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--probe-seeds", type=int, default=5)
    p.add_argument("--report", default=None)
    common(p)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("selftest", help="run the built-in verification battery")
    p.add_argument("--manifest", default="selftest.manifest.json")
    common(p)
    p.set_defaults(fn=cmd_selftest)

    return parser


def main(argv=None):
    defaults = {}
    config_path = os.environ.get("MJAE_CONFIG")
    if config_path:
        try:
            defaults = load_config_file(config_path)
        except (OSError, ValueError) as e:
            print(f"error reading config {config_path}: {e}", file=sys.stderr)
            return 2
    parser = build_parser(defaults)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
