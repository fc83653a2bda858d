"""Command-line entry point: ``specvoc <subcommand> [flags] [key=value ...]``.

Exit codes: 0 on success, 2 for configuration or input errors, 3 when a
runtime invariant is violated (including a failed self-check).
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import harness
from .config import ResolvedConfig, documented_keys, load_config, parse_float_list, read_text, split_overrides
from .errors import BuildError, ConfigError, InputError, InvariantViolation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

log = logging.getLogger("specvoc")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="FILE", default=default, help="key = value config file")
    parser.add_argument("--seed", type=int, metavar="N", default=default, help="run seed (overrides the config)")
    parser.add_argument("--out", metavar="DIR", default=default,
                        help="output directory (default: $SPECVOC_OUT, else ./specvoc-out)")
    parser.add_argument("-q", "--quiet", action="store_true", default=default,
                        help="do not print the resolved configuration")


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys:\n" + "\n".join(f"  {n} (default {d}){'  ' + doc if doc else ''}"
                                          for n, d, doc in documented_keys())
    parser = argparse.ArgumentParser(prog="specvoc", description=__doc__.splitlines()[0],
                                     epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def cmd(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        _global_flags(p, suppress=True)
        p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")
        return p

    p = cmd("run", "decode a request script with one or more engine variants")
    p.add_argument("--scenario", metavar="FILE", help="scenario file (default: code -> law topic switch)")
    p.add_argument("--variant", action="append", metavar="NAME",
                   help=f"engine variant, repeatable or comma-separated ({', '.join(harness.VARIANTS)})")
    p.add_argument("--trace", action="store_true", help="also write the adapter update trace per variant")

    p = cmd("coverage", "teacher-forced coverage study of the retrieval arms")
    p.add_argument("--streams", metavar="FILE", help="token streams, one per line (default: shifted-domain samples)")
    p.add_argument("--arms", metavar="LIST", help=f"comma-separated subset of {', '.join(harness.ARMS)}")
    p.add_argument("--domain", metavar="NAME", help="target domain (default: first non-source domain)")

    p = cmd("sweep-beta", "adapter training on a distal-noise stream for several beta values")
    p.add_argument("--betas", metavar="LIST", default="0.0,0.1,0.3,0.5,0.7", help="comma-separated beta values")
    p.add_argument("--replicates", type=int, default=1, metavar="N", help="seeds seed .. seed+N-1")

    p = cmd("build-static", "build and save the static vocabulary core")
    p.add_argument("--corpus", metavar="FILE", help="token corpus (text ids or SVTK); default: synthetic source corpus")

    p = cmd("build-graph", "build and save the successor graph")
    p.add_argument("--corpus", metavar="FILE", help="token streams, one per line; default: synthetic target samples")

    p = cmd("selftest", "run the built-in oracle checks")
    p.add_argument("--fast", action="store_true", help="smaller workloads")
    p.add_argument("--inject-fault", action="store_true",
                   help="add a check that feeds verification a proposal outside V_t (must exit 3)")
    return parser


def resolve_config(args: argparse.Namespace) -> ResolvedConfig:
    overrides = split_overrides(getattr(args, "overrides", []) or [])
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        overrides["seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)
    if cfg["model"]:
        cfg = cfg.attach("model", read_text(cfg["model"], "model spec"))
    return cfg


def output_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or os.environ.get("SPECVOC_OUT") or "specvoc-out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def announce(cfg: ResolvedConfig, args: argparse.Namespace) -> None:
    if args.quiet:
        print(f"# config hash {cfg.hash}")
    else:
        print(cfg.render())
    sys.stdout.flush()


def _parse_variants(raw: Optional[Sequence[str]]) -> List[str]:
    names: List[str] = []
    for item in raw or ["full"]:
        names.extend(v.strip() for v in item.split(",") if v.strip())
    for v in names:
        harness.variant_paths(v)
    if len(set(names)) != len(names):
        raise ConfigError("a variant was listed twice")
    return names


def cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    variants = _parse_variants(args.variant)
    if args.scenario:
        text = read_text(args.scenario, "scenario file")
        script = harness.parse_scenario(text, args.scenario)
    else:
        script = harness.topic_switch()
    cfg = cfg.attach("scenario", harness.format_scenario(script))
    announce(cfg, args)
    out = output_dir(args)
    bundle = harness.prepare_bundle(cfg)
    runs = []
    for v in variants:
        run = harness.run_scenario(script, cfg, v, bundle)
        runs.append(run)
        print(f"{v:14s} requests={len(run.records)} MAL={run.mal:.4f} tokens/ms={run.throughput:.4f} "
              f"oov={run.oov_events} updates={run.updates} peak_dynamic={run.peak_dynamic}")
        if args.trace:
            with open(out / f"trace_{v.replace('+', 'plus_')}.jsonl", "w") as fh:
                for rec in run.trace:
                    fh.write(rec.to_json() + "\n")
    harness.write_metrics_jsonl(out / "metrics.jsonl", cfg, runs, script)
    harness.write_summary_csv(out / "summary.csv", cfg, runs)
    print(f"wrote {out / 'metrics.jsonl'} and {out / 'summary.csv'}")
    return EXIT_OK


def cmd_coverage(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    arms = [a.strip() for a in args.arms.split(",") if a.strip()] if args.arms else list(harness.ARMS)
    for a in arms:
        if a not in harness.ARMS:
            raise ConfigError(f"unknown coverage arm {a!r}; choose from {', '.join(harness.ARMS)}")
    if args.streams:
        cfg = cfg.attach("streams", read_text(args.streams, "stream file"))
    announce(cfg, args)
    out = output_dir(args)
    bundle = harness.prepare_bundle(cfg)
    if args.domain:
        bundle.spec.domain(args.domain)
    if args.streams:
        streams = harness.read_streams(args.streams, bundle.spec.vocab_size)
    else:
        streams = harness.shifted_streams(bundle, cfg, args.domain)
    rows = harness.coverage_study(streams, cfg, arms, bundle, args.domain)
    for r in rows:
        print(f"{r.arm:20s} covered_mass={r.covered_mass:.4f} steps={r.steps} oov={r.oov_events}")
    harness.write_coverage_csv(out / "coverage.csv", cfg, rows)
    print(f"wrote {out / 'coverage.csv'}")
    return EXIT_OK


def cmd_sweep_beta(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    try:
        betas = parse_float_list(args.betas)
    except ValueError as exc:
        raise ConfigError(f"--betas: {exc}") from exc
    if args.replicates < 1:
        raise ConfigError("--replicates must be >= 1")
    if any(b < 0 for b in betas):
        raise ConfigError("beta values must be >= 0")
    announce(cfg, args)
    out = output_dir(args)
    seeds = [cfg["seed"] + i for i in range(args.replicates)]
    trajectories = harness.beta_sweep(betas, cfg, seeds)
    for t in trajectories:
        print(f"beta={t.beta:<5g} seed={t.seed} updates={len(t.eval_loss)} smoothed_heldout={t.smoothed:.5f}")
    harness.write_beta_csv(out / "beta_sweep.csv", cfg, trajectories)
    print(f"wrote {out / 'beta_sweep.csv'}")
    return EXIT_OK


def cmd_build_static(args: argparse.Namespace) -> int:
    from .vocab import build_static, read_corpus, save_static

    cfg = resolve_config(args)
    if args.corpus:
        try:
            raw = Path(args.corpus).read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read corpus {args.corpus}: {exc.strerror}") from exc
        cfg = cfg.attach("corpus", hashlib.sha256(raw).hexdigest())
    announce(cfg, args)
    out = output_dir(args)
    spec = harness.model_spec_for(cfg)
    if args.corpus:
        corpus = read_corpus(args.corpus)
    else:
        corpus = harness.static_corpus(spec, cfg["static_corpus_len"])
    static = build_static(corpus, cfg["static_size"], spec.vocab_size)
    save_static(out / "static.txt", static)
    print(f"static core: {len(static)} of {spec.vocab_size} ids from {corpus.size} tokens -> {out / 'static.txt'}")
    return EXIT_OK


def cmd_build_graph(args: argparse.Namespace) -> int:
    from .retrieval.graph import GraphThresholds, build_graph, save_graph
    from .world import build_world

    cfg = resolve_config(args)
    if args.corpus:
        cfg = cfg.attach("corpus", read_text(args.corpus, "stream file"))
    announce(cfg, args)
    out = output_dir(args)
    spec = harness.model_spec_for(cfg)
    if args.corpus:
        streams = harness.read_streams(args.corpus, spec.vocab_size)
    else:
        streams = harness.graph_corpus(build_world(spec), cfg["graph_streams"], cfg["graph_stream_len"])
    thresholds = GraphThresholds(cfg["graph_min_count"], cfg["graph_tau"], cfg["graph_max_degree"])
    graph = build_graph(streams, spec.vocab_size, thresholds)
    save_graph(out / "graph.csv", graph)
    print(f"graph: {graph.num_edges} edges from {len(streams)} streams -> {out / 'graph.csv'}")
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    from .checks import run_selftest

    cfg = resolve_config(args)
    announce(cfg, args)
    results, violation = run_selftest(fast=args.fast, inject_fault=args.inject_fault)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results) and not violation
    print("selftest " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_INVARIANT


COMMANDS = {
    "run": cmd_run,
    "coverage": cmd_coverage,
    "sweep-beta": cmd_sweep_beta,
    "build-static": cmd_build_static,
    "build-graph": cmd_build_graph,
    "selftest": cmd_selftest,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2 already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InputError, BuildError) as exc:
        print(f"specvoc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"specvoc: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
