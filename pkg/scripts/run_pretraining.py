"""Pretrain the twin-encoder score network on a JSONL corpus.

Thin wrapper over the library training loop with a per-epoch progress line;
the same run is reachable through `mjae pretrain`.

Usage:
    python3 scripts/run_pretraining.py corpus.jsonl --out model.ck \
        --epochs 50 --batch-size 2 --lr 1e-2 --lr-schedule cosine
"""

import argparse
import json
import sys

from mjae.cli import read_dataset
from mjae.network import NetworkConfig
from mjae.training import TrainConfig, init_adam_state, save_checkpoint, train


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dataset")
    ap.add_argument("--out", required=True)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--batch-size", type=int, default=2)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--lr-schedule", choices=("constant", "cosine"), default="cosine")
    ap.add_argument("--lambda1", type=float, default=1.0)
    ap.add_argument("--lambda2", type=float, default=0.01)
    ap.add_argument("--self-cond-prob", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--latent", type=int, default=96)
    ap.add_argument("--rounds", type=int, default=3)
    ap.add_argument("--gcn-layers", type=int, default=3)
    ap.add_argument("--loss-log", default=None)
    args = ap.parse_args(argv)

    graphs, diags = read_dataset(args.dataset)
    for d in diags:
        print(f"rejected: {d}", file=sys.stderr)
    if not graphs:
        print("no valid records", file=sys.stderr)
        return 1

    net = NetworkConfig(latent=args.latent, rounds=args.rounds,
                        gcn_layers=args.gcn_layers)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      lr=args.lr, lr_schedule=args.lr_schedule, seed=args.seed,
                      lambda1=args.lambda1, lambda2=args.lambda2,
                      self_cond_prob=args.self_cond_prob)

    def progress(epoch, entry):
        print(f"epoch {epoch:4d}  total {entry['total']:.4f}  "
              f"score {entry['l_sc']:.4f}  contrastive {entry['l_co']:.4f}")

    params, history = train(graphs, cfg, net, on_epoch=progress)
    save_checkpoint(params, init_adam_state(params), args.out,
                    meta={"net": vars(net) | {}, "epochs": args.epochs})
    if args.loss_log:
        with open(args.loss_log, "w") as fh:
            json.dump(history, fh, indent=2)
    ratio = history[-1]["total"] / history[0]["total"]
    print(f"checkpoint -> {args.out}  (final/first loss ratio {ratio:.3f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
