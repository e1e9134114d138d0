"""Command-line interface.

Subcommands: share, server, run-local, generate, evaluate, calibrate,
make-cohort. Every config-file key can be overridden with a flag of the
same name. Exit codes: 0 success, 2 parameter error, 3 ingestion error,
4 protocol error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .data import ingest, make_demo_cohort, write_csv
from .errors import SgsynthError
from .generator import calibrate
from .metrics import evaluate_pair
from .pipeline import (RunConfig, generate_synthetic, load_config,
                       released_from_json, released_to_json, run_end_to_end,
                       share_rows)
from .primitives import Engine
from .protocols import execute_sdg
from .sharing import read_share_file, write_share_file
from .transport import connect_tcp_links


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    for key, help_text in [
        ("input", "cohort CSV path"),
        ("epsilon", "privacy budget"),
        ("delta", "DP failure probability"),
        ("sigma", "explicit noise scale (overrides epsilon/delta)"),
        ("classes", "number of label classes"),
        ("seed", "master seed"),
        ("holders", "number of data holders M"),
        ("noise-bin-means", "also perturb released bin means (true/false)"),
        ("ring-bits", "ring width k"),
        ("frac-bits", "fixed-point fractional bits f"),
        ("n-syn", "synthetic rows to generate"),
        ("test-fraction", "held-out fraction"),
        ("log1p", "apply log1p at ingest (true/false)"),
        ("timeout", "per-round timeout in seconds"),
        ("party1", "host:port of party 1"),
        ("party2", "host:port of party 2"),
        ("party3", "host:port of party 3"),
        ("outdir", "output directory"),
        ("figures", "render report figures (true/false)"),
        ("de-top-k", "top-K genes for DE recovery"),
        ("demo-n", "demo cohort rows"),
        ("demo-d", "demo cohort genes"),
        ("demo-classes", "demo cohort classes"),
    ]:
        p.add_argument(f"--{key}", dest=key.replace("-", "_"), help=help_text)


def _config_from(args: argparse.Namespace) -> RunConfig:
    from dataclasses import fields

    known = {f.name for f in fields(RunConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in known and v is not None}
    return load_config(args.config, overrides)


def _cmd_make_cohort(args) -> int:
    cfg = _config_from(args)
    table = make_demo_cohort(cfg.demo_n, cfg.demo_d, cfg.demo_classes, cfg.seed)
    out = Path(args.out or "cohort.csv")
    write_csv(table, out)
    print(f"wrote {table.n} x {table.d} cohort with {table.classes} classes to {out}")
    return 0


def _cmd_share(args) -> int:
    cfg = _config_from(args)
    table = ingest(cfg.input, log1p=cfg.log1p, classes=cfg.classes) if cfg.input \
        else make_demo_cohort(cfg.demo_n, cfg.demo_d, cfg.demo_classes, cfg.seed)
    codec = cfg.codec()
    offset = int(args.offset or 0)
    seed = cfg.seed if args.seeded else None
    triple = share_rows(table.values, table.labels, codec, seed, row_offset=offset)
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for p, sv in enumerate(triple, start=1):
        with open(outdir / f"party{p}.sgs", "wb") as fh:
            write_share_file(fh, sv, cfg.ring_bits, cfg.frac_bits)
    meta = {
        "n": table.n,
        "d": table.d,
        "classes": table.classes,
        "gene_names": table.gene_names,
        "row_offset": offset,
        "ring_bits": cfg.ring_bits,
        "frac_bits": cfg.frac_bits,
    }
    (outdir / "meta.json").write_text(json.dumps(meta, indent=2))
    print(f"wrote share files for {table.n} rows to {outdir}/party{{1,2,3}}.sgs")
    return 0


def _cmd_server(args) -> int:
    from .pipeline import party_seed

    cfg = _config_from(args)
    party = int(args.party)
    submissions = []
    meta = None
    for d in args.shares:
        share_dir = Path(d)
        sv, bits, frac = read_share_file(open(share_dir / f"party{party}.sgs", "rb"))
        submissions.append(sv)
        holder_meta = json.loads((share_dir / "meta.json").read_text())
        meta = holder_meta if meta is None else meta
    classes = cfg.classes or meta["classes"]
    sigma = cfg.noise_sigma(meta["d"])
    links = connect_tcp_links(party, cfg.endpoints(), timeout=cfg.timeout)
    try:
        eng = Engine(links, cfg.codec(), seed=party_seed(cfg.seed, party))
        eng.setup()
        released = execute_sdg(eng, submissions, classes, sigma, cfg.noise_bin_means)
    finally:
        links.close()
    if party != 1:
        print(f"party {party}: protocol run complete")
        return 0
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    n_train = sum(sv.shape[0] for sv in submissions)
    (outdir / "released.json").write_text(released_to_json(
        released, meta["gene_names"], classes, n_train, cfg.epsilon, cfg.seed))
    n_syn = cfg.n_syn or n_train
    synthetic = generate_synthetic(released, meta["gene_names"], classes, n_syn, cfg.seed)
    write_csv(synthetic, outdir / "synthetic.csv")
    print(f"party 1: wrote {outdir}/released.json and {outdir}/synthetic.csv")
    return 0


def _cmd_run_local(args) -> int:
    cfg = _config_from(args)
    result = run_end_to_end(cfg)
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_csv(result.synthetic, outdir / "synthetic.csv")
    (outdir / "released.json").write_text(released_to_json(
        result.released, result.synthetic.gene_names, result.synthetic.classes,
        result.train.n, cfg.epsilon, cfg.seed))
    (outdir / "metrics.json").write_text(result.report.to_json() + "\n")
    print(result.report.to_json())
    if cfg.figures:
        from .report import render_run_figures
        paths = render_run_figures(result.train, result.synthetic, outdir / "figures")
        print(f"figures: {', '.join(str(p) for p in paths)}")
    print(f"synthetic cohort written to {outdir}/synthetic.csv")
    return 0


def _cmd_generate(args) -> int:
    cfg = _config_from(args)
    released, meta = released_from_json(Path(args.released).read_text())
    n_syn = cfg.n_syn or meta["n_train"]
    seed = cfg.seed if args.seed is not None else meta["seed"]
    synthetic = generate_synthetic(released, meta["gene_names"], meta["classes"],
                                   n_syn, seed)
    out = Path(args.out or "synthetic.csv")
    write_csv(synthetic, out)
    print(f"wrote {synthetic.n} synthetic rows to {out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _config_from(args)
    real = ingest(args.real, log1p=cfg.log1p, classes=cfg.classes)
    syn = ingest(args.synthetic, classes=real.classes)
    report = evaluate_pair(real, real, syn, epsilon=cfg.epsilon,
                           sigma=cfg.sigma if cfg.sigma is not None else float("nan"),
                           seed=cfg.seed, de_top_k=cfg.de_top_k)
    print(report.to_json())
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "metrics.json").write_text(report.to_json() + "\n")
    if cfg.figures:
        from .report import render_run_figures
        paths = render_run_figures(real, syn, outdir / "figures")
        print(f"figures: {', '.join(str(p) for p in paths)}")
    return 0


def _cmd_calibrate(args) -> int:
    cfg = _config_from(args)
    d = int(args.genes)
    params = calibrate(cfg.epsilon, cfg.delta, d)
    print(json.dumps({
        "epsilon": params.epsilon,
        "delta": params.delta,
        "sensitivity": params.sensitivity,
        "sigma": params.sigma,
    }, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgsynth",
        description="Federated differentially private synthetic gene-expression data",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-cohort", help="write a demo cohort CSV")
    _add_config_flags(p)
    p.add_argument("--out", help="output CSV path (default cohort.csv)")
    p.set_defaults(func=_cmd_make_cohort)

    p = sub.add_parser("share", help="split a cohort into per-party share files")
    _add_config_flags(p)
    p.add_argument("--offset", help="this holder's global row offset")
    p.add_argument("--seeded", action="store_true",
                   help="derive share randomness from the master seed (reproducible runs)")
    p.set_defaults(func=_cmd_share)

    p = sub.add_parser("server", help="run one computing party over TCP")
    _add_config_flags(p)
    p.add_argument("--party", required=True, choices=["1", "2", "3"])
    p.add_argument("--shares", nargs="+", required=True,
                   help="share directories, one per data holder")
    p.set_defaults(func=_cmd_server)

    p = sub.add_parser("run-local", help="full pipeline with all parties in-process")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_run_local)

    p = sub.add_parser("generate", help="sample synthetic data from released tables")
    _add_config_flags(p)
    p.add_argument("--released", required=True, help="released.json from a protocol run")
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="score a synthetic cohort against real data")
    _add_config_flags(p)
    p.add_argument("--real", required=True, help="real cohort CSV")
    p.add_argument("--synthetic", required=True, help="synthetic cohort CSV")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("calibrate", help="print the noise scale for given DP parameters")
    _add_config_flags(p)
    p.add_argument("--genes", required=True, help="number of genes d")
    p.set_defaults(func=_cmd_calibrate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SgsynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
