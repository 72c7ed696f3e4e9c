"""Command-line entry point: ``seldiv {gen-data,train,sample,eval,report}``.

Exit codes: 0 success, 2 configuration/usage error, 3 I/O error,
4 training divergence.  Outputs default to ``$SELDIV_OUTPUT_ROOT`` (or
``./runs``) when ``--out`` is omitted.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .datasets import (
    dataset_checksum,
    group_by_condition,
    load_dataset,
    make_calo_proxy,
    make_synthetic_2d,
    save_dataset,
)
from .diversity import build_table, load_table, save_table
from .errors import (
    CheckpointError,
    ConfigError,
    ConfigMismatchError,
    DatasetFileError,
    DivergenceError,
    InvalidArgumentError,
    MissingConditionError,
)
from .evaluation import EvalReport, evaluate, metrics_table
from .plotting import render_report
from .training import load_checkpoint, sample_generator, train

logger = logging.getLogger("seldiv")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "SELDIV_OUTPUT_ROOT"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _overrides(args, mapping) -> dict:
    """Nested override dict from the CLI flags that were actually given."""
    out: dict = {}
    for attr, path in mapping.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        node = out
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
    return out


DATA_FLAGS = {
    "kind": ("data", "kind"),
    "n_per_cluster": ("data", "n_per_cluster"),
    "particles": ("data", "n_particles"),
    "repeats": ("data", "n_repeats"),
    "seed": ("data", "seed"),
    "q": ("data", "q"),
}
TRAIN_FLAGS = {
    "steps": ("training", "steps"),
    "batch_size": ("training", "batch_size"),
    "seed": ("training", "seed"),
    "checkpoint_interval": ("training", "checkpoint_interval"),
    "regularizer": ("training", "loss", "regularizer_mode"),
    "lambda_div": ("training", "loss", "lambda_div"),
    "distance_mode": ("training", "loss", "distance_mode"),
}
EVAL_FLAGS = {
    "n_per_condition": ("eval", "n_per_condition"),
    "sample_seed": ("eval", "seed"),
}


def _write_fingerprint(out_dir: Path, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(config_mod.dump(cfg), encoding="utf-8")
    (out_dir / "FINGERPRINT").write_text(config_mod.fingerprint(cfg) + "\n", encoding="utf-8")


def cmd_gen_data(args) -> int:
    cfg = config_mod.load_config(args.config, _overrides(args, DATA_FLAGS))
    d = cfg["data"]
    if d["kind"] == "synth2d":
        ds = make_synthetic_2d(d["n_per_cluster"], d["seed"])
    else:
        ds = make_calo_proxy(d["n_particles"], d["n_repeats"], d["seed"], d["calo_params"])
    if d["q"]:
        ds = group_by_condition(ds, d["q"])
    ds.manifest["config_fingerprint"] = config_mod.fingerprint(cfg)
    out = Path(args.out) if args.out else output_root() / "data" / f"{d['kind']}-seed{d['seed']}.bin"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    sizes = np.array([len(i) for i in ds.groups.values()])
    print(f"wrote {out}: {len(ds)} samples, {len(sizes)} groups")
    print(f"group size min={sizes.min()} max={sizes.max()} mean={sizes.mean():.1f}")
    return EXIT_OK


def _cached_table(data_path: Path, dataset):
    """Diversity table stored beside the dataset, keyed by its checksum."""
    digest = dataset_checksum(dataset)[:16]
    path = data_path.with_name(f"{data_path.name}.fdiv-{digest}.json")
    if path.exists():
        return load_table(path), path
    table = build_table(dataset)
    try:
        save_table(table, path)
    except OSError:
        logger.warning("could not cache diversity table at %s", path)
    return table, path


def cmd_train(args) -> int:
    cfg = config_mod.load_config(args.config, _overrides(args, TRAIN_FLAGS))
    fp = config_mod.fingerprint(cfg)
    out = Path(args.out) if args.out else output_root() / f"train-{fp}"
    tcfg = config_mod.training_config(cfg, str(out))
    data_path = Path(args.data)
    dataset = load_dataset(data_path)
    table, table_path = _cached_table(data_path, dataset)
    _write_fingerprint(out, cfg)
    resume = load_checkpoint(args.resume, expect_fingerprint=tcfg.fingerprint()) if args.resume else None
    try:
        ckpt, rows = train(dataset, table, tcfg, resume=resume)
    except DivergenceError as exc:
        print(f"error: {exc}; last good checkpoint in {out}", file=sys.stderr)
        return EXIT_DIVERGED
    last = rows[-1] if rows else {}
    print(f"trained {ckpt.step} steps -> {out / 'final.pt'} (table {table_path.name})")
    if last:
        print(f"final d_loss={last['d_loss']:.4f} g_adv={last['g_adv']:.4f} reg={last['reg']:.4f}")
    return EXIT_OK


def _sample_for(checkpoint, real, n_per_condition, seed):
    conds = real.unique_conditions()
    if n_per_condition is None:
        sizes = {len(i) for i in real.groups.values()}
        n_per_condition = max(sizes)
    return sample_generator(checkpoint, conds, int(n_per_condition), int(seed))


def cmd_sample(args) -> int:
    cfg = config_mod.load_config(args.config, _overrides(args, EVAL_FLAGS))
    ckpt = load_checkpoint(args.checkpoint)
    source = load_dataset(args.conditions_from)
    if source.kind != ckpt.kind:
        raise InvalidArgumentError(f"checkpoint kind {ckpt.kind} vs dataset kind {source.kind}")
    gen = _sample_for(ckpt, source, cfg["eval"]["n_per_condition"], cfg["eval"]["seed"])
    gen.manifest["config_fingerprint"] = config_mod.fingerprint(cfg)
    out = Path(args.out) if args.out else output_root() / "samples" / f"{ckpt.fingerprint}-s{cfg['eval']['seed']}.bin"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(gen, out)
    print(f"wrote {out}: {len(gen)} samples")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = config_mod.load_config(args.config, _overrides(args, EVAL_FLAGS))
    fp = config_mod.fingerprint(cfg)
    real = load_dataset(args.real)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        if ckpt.kind != real.kind:
            raise InvalidArgumentError(f"checkpoint kind {ckpt.kind} vs dataset kind {real.kind}")
        generated = _sample_for(ckpt, real, cfg["eval"]["n_per_condition"], cfg["eval"]["seed"])
    else:
        generated = load_dataset(args.generated)
    report = evaluate(real, generated, fingerprint=fp)
    out = Path(args.out) if args.out else output_root() / f"eval-{fp}"
    _write_fingerprint(out, cfg)
    written = render_report(report, out, real, generated) if cfg["eval"]["plots"] and not args.no_plots else render_report(report, out)
    sys.stdout.write(metrics_table(report))
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
    report = EvalReport(**doc)
    real = load_dataset(args.real) if args.real else None
    generated = load_dataset(args.generated) if args.generated else None
    if real is not None and generated is not None and real.kind != generated.kind:
        raise InvalidArgumentError("real and generated datasets differ in kind")
    out = Path(args.out) if args.out else Path(args.report).parent
    written = render_report(report, out, real, generated)
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seldiv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic or calorimeter-proxy dataset")
    g.add_argument("kind", choices=["synth2d", "calo"])
    g.add_argument("--config")
    g.add_argument("--n-per-cluster", type=int)
    g.add_argument("--particles", type=int)
    g.add_argument("--repeats", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--q", type=float, help="condition quantization step (0 = exact)")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a conditional GAN")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--regularizer", choices=["none", "ms", "sdi"])
    t.add_argument("--lambda-div", type=float)
    t.add_argument("--distance-mode", choices=["pixel", "encoder_feature"])
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--checkpoint-interval", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw generations for every condition of a dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--conditions-from", required=True, help="dataset whose conditions are used")
    s.add_argument("--config")
    s.add_argument("--n-per-condition", type=int)
    s.add_argument("--seed", dest="sample_seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="compare generated data (or a checkpoint) with real data")
    e.add_argument("--real", required=True)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--generated")
    src.add_argument("--checkpoint")
    e.add_argument("--config")
    e.add_argument("--n-per-condition", type=int)
    e.add_argument("--seed", dest="sample_seed", type=int)
    e.add_argument("--no-plots", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="re-render figures and tables from a saved report.json")
    r.add_argument("--report", required=True)
    r.add_argument("--real")
    r.add_argument("--generated")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ConfigMismatchError, InvalidArgumentError, MissingConditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, DatasetFileError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
