"""Command-line front end: simulate, train, evaluate, sample, inspect-c."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from .config import Config, ConfigError, parse_config, schema_text
from .event_data import Dataset, encode_sequences, intervalize, load_dataset, sequence_key, split, write_dataset
from .hawkes import simulate_many
from .math_core import Rng
from .metrics import evaluate, summarize
from .sampling import predict
from .training import batch_tensors, padded_batch, train, vlb

log = logging.getLogger("markedflow")

DATASET_FILE = "events.jsonl"
CHECKPOINT_FILE = "model.ckpt"


def blob_hash(data: bytes) -> str:
    """Content hash in the format git uses for blobs."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(out: Path, command: str, cfg: Config, inputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": cfg["seed"],
        "inputs": {str(p): blob_hash(p.read_bytes()) for p in inputs},
    }
    (out / f"run-manifest-{command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def print_table(rows: list[tuple], header: tuple) -> None:
    cells = [tuple(str(x) for x in header)] + [tuple(f"{x:.6g}" if isinstance(x, float) else str(x) for x in r) for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for r in cells:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))


def _splits(cfg: Config) -> tuple[Dataset, Dataset, Dataset, list[Path]]:
    if not cfg["data.path"]:
        raise ConfigError("data.path: required for this command")
    path = Path(cfg["data.path"])
    data = load_dataset(path, cfg["data.num_marks"])
    return (*split(data, tuple(cfg["data.split"]), Rng(cfg["data.split_seed"])), [path])


def _checkpoint_path(args, out: Path) -> Path:
    return Path(args.checkpoint) if args.checkpoint else out / CHECKPOINT_FILE


def cmd_simulate(cfg: Config, out: Path, args) -> list[Path]:
    spec = cfg.hawkes_spec()
    seqs = simulate_many(spec, cfg["hawkes.num_sequences"], Rng(cfg["seed"]))
    target = out / DATASET_FILE
    write_dataset(target, seqs)
    n_events = sum(len(s) for s in seqs)
    print(json.dumps({"simulate": {"sequences": len(seqs), "events": n_events, "marks": spec.num_marks, "path": str(target)}}))
    return []


def cmd_train(cfg: Config, out: Path, args) -> list[Path]:
    train_set, valid_set, _, inputs = _splits(cfg)
    tcfg = cfg.train_config()
    ckpt_path = out / CHECKPOINT_FILE
    with open(out / "loss.tsv", "w") as fh:
        fh.write("epoch\tmean_loss\tvlb\twall_time\n")

        def on_epoch(rec, model, rng):
            if cfg["train.log_vlb"]:
                # its own stream, so logging does not change the training run
                rec.vlb = vlb(valid_set, model, Rng(cfg["seed"]).fork(rec.epoch), K=tcfg.K).vlb
            fh.write(f"{rec.epoch}\t{rec.mean_loss!r}\t{'' if rec.vlb is None else repr(rec.vlb)}\t{rec.wall_time:.3f}\n")
            fh.flush()
            if tcfg.checkpoint_every and rec.epoch % tcfg.checkpoint_every == 0 and rec.epoch < tcfg.epochs:
                ck = checkpoint.Checkpoint(model, cfg.to_json(), rng.get_state(), {"epoch": rec.epoch})
                checkpoint.save(ckpt_path, ck)

        result = train(train_set, tcfg, on_epoch)
    last = result.history[-1]
    ckpt = checkpoint.Checkpoint(result.model, cfg.to_json(), result.rng.get_state(), {"epoch": last.epoch})
    checkpoint.save(ckpt_path, ckpt)
    print(json.dumps({"train": {"epochs": last.epoch, "final_loss": last.mean_loss, "checkpoint": str(ckpt_path)}}))
    return inputs


def cmd_evaluate(cfg: Config, out: Path, args) -> list[Path]:
    _, _, test_set, inputs = _splits(cfg)
    path = _checkpoint_path(args, out)
    model = checkpoint.load(path).model
    seeds = list(cfg["seeds"]) if args.seeds else [cfg["seed"]]
    reports = []
    for s in seeds:
        scfg = cfg.sample_config(seed=s)
        scfg.joint_noise = cfg["model.joint_noise"]
        rep = evaluate(test_set, model, scfg, with_vlb=cfg["eval.vlb"])
        reports.append(rep)
        print(json.dumps({"eval": {"seed": s, **rep.to_dict()}}))
    summary = summarize(reports)
    print(json.dumps({"summary": summary}))
    rows = [(k, v["mean"], v["sd"]) for k, v in summary.items()]
    print_table(rows, ("metric", "mean", "sd"))
    (out / "eval.json").write_text(
        json.dumps({"seeds": seeds, "reports": [r.to_dict() for r in reports], "summary": summary}, indent=2) + "\n"
    )
    return inputs + [path]


def cmd_sample(cfg: Config, out: Path, args) -> list[Path]:
    """One record per held-out event: truth, ``sample.count`` draws and the point prediction."""
    _, _, test_set, inputs = _splits(cfg)
    path = _checkpoint_path(args, out)
    model = checkpoint.load(path).model
    scfg = cfg.sample_config()
    scfg.num_samples = cfg["sample.count"]
    scfg.joint_noise = cfg["model.joint_noise"]
    base = Rng(cfg["seed"])
    encoded = encode_sequences(test_set.sequences, model.norm)
    records = 0
    with open(out / "samples.jsonl", "w") as fh, torch.no_grad():
        for i, seq in enumerate(test_set.sequences):
            batch = padded_batch(encoded, np.array([i]))
            h, _, _ = batch_tensors(batch, model)
            pp = predict(h, model, scfg, base.fork(sequence_key(seq)))
            taus = intervalize(seq).intervals
            for j in range(len(seq)):
                rec = {
                    "sequence": i,
                    "event": j,
                    "true_tau": float(taus[j]),
                    "true_mark": int(seq.marks[j]),
                    "draws": pp.tau_samples[j].tolist(),
                    "tau_point": float(pp.tau_point[j]),
                    "mark_point": int(pp.mark_point[j]),
                    "p_mark": pp.p_mean[j].tolist(),
                }
                fh.write(json.dumps(rec) + "\n")
                records += 1
    print(json.dumps({"sample": {"records": records, "draws_per_event": scfg.num_samples, "path": str(out / "samples.jsonl")}}))
    return inputs + [path]


def c_histogram(c: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Counts over the admissible range ``[-sqrt(M), sqrt(M)]``."""
    bound = float(np.sqrt(c.size))
    return np.histogram(c, bins=bins, range=(-bound, bound))


def cmd_inspect_c(cfg: Config, out: Path, args) -> list[Path]:
    path = _checkpoint_path(args, out)
    model = checkpoint.load(path).model
    c = model.cross_covariance().detach().numpy()
    counts, edges = c_histogram(c, cfg["inspect.bins"])
    with open(out / "c_values.tsv", "w") as fh:
        fh.write("mark\tc\n")
        for j, v in enumerate(c):
            fh.write(f"{j}\t{float(v)!r}\n")
    with open(out / "c_histogram.tsv", "w") as fh:
        fh.write("lo\thi\tcount\n")
        for lo, hi, k in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{float(lo)!r}\t{float(hi)!r}\t{int(k)}\n")
    print(json.dumps({"c": c.tolist(), "histogram": counts.tolist(), "edges": edges.tolist()}))
    print_table([(j, float(v)) for j, v in enumerate(c)], ("mark", "c"))
    return [path]


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sample": cmd_sample,
    "inspect-c": cmd_inspect_c,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markedflow", description=__doc__)
    parser.add_argument("--print-schema", action="store_true", help="print every config key and exit")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--joint-noise", choices=("on", "off"), help="ablation override")
        p.add_argument("--steps", type=int, help="discretisation steps K (overrides train.K)")
        if name in ("evaluate", "sample", "inspect-c"):
            p.add_argument("--checkpoint", help=f"defaults to OUT/{CHECKPOINT_FILE}")
        if name == "evaluate":
            p.add_argument("--seeds", help="comma-separated sampling seeds, reported as mean and SD")
        if name == "inspect-c":
            p.add_argument("--bins", type=int, help="overrides inspect.bins")
    return parser


def apply_overrides(cfg: Config, args) -> Config:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.joint_noise is not None:
        changes["model.joint_noise"] = args.joint_noise == "on"
    if args.steps is not None:
        changes["train.K"] = args.steps
    if getattr(args, "seeds", None):
        changes["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if getattr(args, "bins", None) is not None:
        changes["inspect.bins"] = args.bins
    return cfg.replace(**changes) if changes else cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_schema:
        sys.stdout.write(schema_text())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(parse_config(args.config), args)
        out = Path(cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        inputs = COMMANDS[args.command](cfg, out, args)
        write_manifest(out, args.command, cfg, [Path(args.config), *inputs])
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
