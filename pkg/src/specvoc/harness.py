"""Experiments over the synthetic worlds and the files they write.

Three studies share one prepared *bundle* (world, static core, MIPS index,
successor graph):

* :func:`run_scenario` decodes a request script with one engine variant and
  records per-request MAL, coverage and adaptation counters;
* :func:`coverage_study` replays fixed target streams (teacher forcing) and
  measures the covered mass of each retrieval arm;
* :func:`beta_sweep` trains the adapter on a stream whose distal targets are
  increasingly noisy and tracks a held-out, weighting-free loss per beta.

Every output file starts with a header line carrying the resolved config
hash, so equal hashes identify equal experiments.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .alignment import (AlignmentController, CurriculumConfig, DistillConfig, ReplayEntry, UpdateRecord,
                        apply_update, distill_loss)
from .config import ResolvedConfig, iter_assignments, read_text
from .engine import VARIANTS, EngineConfig, LatencyModel, Paths, SpeculativeEngine
from .errors import ConfigError, InputError
from .models import TargetModel, log_softmax, topk
from .retrieval.candidates import CandidateConfig
from .retrieval.graph import CooccurrenceGraph, GraphThresholds, build_graph
from .retrieval.hnsw import HnswParams
from .retrieval.mips import MipsIndex
from .vocab import StaticVocab, build_static
from .world import ModelSpec, World, build_world, format_model_spec, gen_corpus, parse_model_spec, sample_target_corpus

# ---------------------------------------------------------------------------
# scenario scripts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    domain: str
    requests: int
    tokens: int


@dataclass(frozen=True)
class ScenarioScript:
    segments: Tuple[Segment, ...]
    seed: int = 0

    @property
    def total_requests(self) -> int:
        return sum(s.requests for s in self.segments)

    def boundaries(self) -> List[int]:
        """Index of the first request of every segment after the first."""
        out, n = [], 0
        for seg in self.segments[:-1]:
            n += seg.requests
            out.append(n)
        return out

    def requests(self) -> Iterator[Tuple[int, int, Segment]]:
        i = 0
        for k, seg in enumerate(self.segments):
            for _ in range(seg.requests):
                yield i, k, seg
                i += 1


def topic_switch(first: str = "code", second: str = "law", requests: int = 100, tokens: int = 64,
                 seed: int = 0) -> ScenarioScript:
    return ScenarioScript((Segment(first, requests, tokens), Segment(second, requests, tokens)), seed)


def parse_scenario(text: str, source: str = "<scenario>") -> ScenarioScript:
    """``seed = N`` and repeated ``segment = DOMAIN REQUESTS TOKENS`` lines."""
    segments: List[Segment] = []
    seed = 0
    for no, key, value in iter_assignments(text.splitlines(), source):
        try:
            if key == "segment":
                name, n, t = value.split()
                seg = Segment(name, int(n), int(t))
                if seg.requests < 1 or seg.tokens < 1:
                    raise ValueError("counts must be positive")
                segments.append(seg)
            elif key == "seed":
                seed = int(value)
            else:
                raise ConfigError(f"{source}:{no}: unknown scenario key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"{source}:{no}: bad {key} line: {exc}") from exc
    if not segments:
        raise ConfigError(f"{source}: scenario has no segments")
    return ScenarioScript(tuple(segments), seed)


def format_scenario(script: ScenarioScript) -> str:
    lines = [f"seed = {script.seed}"]
    lines += [f"segment = {s.domain} {s.requests} {s.tokens}" for s in script.segments]
    return "\n".join(lines) + "\n"


def load_scenario(path) -> ScenarioScript:
    return parse_scenario(read_text(path, "scenario file"), str(path))


# ---------------------------------------------------------------------------
# prepared worlds
# ---------------------------------------------------------------------------


@dataclass
class Bundle:
    world: World
    static: StaticVocab
    index: MipsIndex
    graph: CooccurrenceGraph

    @property
    def spec(self) -> ModelSpec:
        return self.world.spec

    @property
    def source_domain(self) -> str:
        return self.spec.draft_domain or self.spec.domains[0].name

    def shifted_domain(self) -> str:
        for d in self.spec.domains:
            if d.name != self.source_domain:
                return d.name
        raise ConfigError("the model spec needs a second domain for a shifted fixture")


def model_spec_for(cfg: ResolvedConfig) -> ModelSpec:
    if cfg["model"]:
        spec = parse_model_spec(read_text(cfg["model"], "model spec"), cfg["model"])
        if cfg.provenance.get("model_seed", "default") != "default":
            spec = replace(spec, seed=cfg["model_seed"])
        return spec
    return ModelSpec(seed=cfg["model_seed"])


_BUNDLES: Dict[tuple, Bundle] = {}


def _bundle_key(spec: ModelSpec, cfg: ResolvedConfig) -> tuple:
    names = ("static_size", "static_corpus_len", "hnsw_m", "hnsw_ef_construction", "hnsw_ef_search",
             "graph_tau", "graph_min_count", "graph_max_degree", "graph_streams", "graph_stream_len")
    return (format_model_spec(spec),) + tuple(cfg[n] for n in names)


def static_corpus(spec: ModelSpec, length: int) -> np.ndarray:
    """Offline build corpus for the static core: unigram draws from the source domain."""
    source = spec.draft_domain or spec.domains[0].name
    return gen_corpus(spec.domain(source), length, spec.seed + 1, spec.vocab_size)


def graph_corpus(world: World, streams: int, length: int) -> List[np.ndarray]:
    """Offline bigram corpus: target samples from every domain."""
    names = [d.name for d in world.spec.domains]
    return sample_target_corpus(world.target, names, streams, length, world.spec.seed + 2)


def prepare_bundle(cfg: ResolvedConfig, cache: bool = True) -> Bundle:
    spec = model_spec_for(cfg)
    key = _bundle_key(spec, cfg)
    if cache and key in _BUNDLES:
        return _BUNDLES[key]
    world = build_world(spec)
    static = build_static(static_corpus(spec, cfg["static_corpus_len"]), cfg["static_size"], spec.vocab_size)
    index = MipsIndex(world.target.lm_head,
                      HnswParams(cfg["hnsw_m"], cfg["hnsw_ef_construction"], cfg["hnsw_ef_search"], spec.seed))
    thresholds = GraphThresholds(cfg["graph_min_count"], cfg["graph_tau"], cfg["graph_max_degree"])
    graph = build_graph(graph_corpus(world, cfg["graph_streams"], cfg["graph_stream_len"]), spec.vocab_size, thresholds)
    bundle = Bundle(world, static, index, graph)
    if cache:
        _BUNDLES[key] = bundle
    return bundle


# ---------------------------------------------------------------------------
# engines from a resolved config
# ---------------------------------------------------------------------------


def latency_model(cfg: ResolvedConfig) -> LatencyModel:
    return LatencyModel(cfg["latency.retrieval_ms"], cfg["latency.step_body_ms"], cfg["latency.projection_ms"],
                        cfg["latency.sampling_ms"])


def engine_config(cfg: ResolvedConfig, track_coverage: bool = True) -> EngineConfig:
    return EngineConfig(
        gamma=cfg["gamma"], token_budget=cfg["token_budget"], temperature=cfg["temperature"],
        k_logit=cfg["k_logit"], eps_cov=cfg["eps_cov"], dyn_size=cfg["dyn_size"], arc_p0=cfg["arc_p0"],
        ghost_caps=tuple(cfg["ghost_caps"]), min_residency=cfg["min_residency"], warmup=cfg["warmup"],
        candidates=CandidateConfig(cfg["n_target"], cfg["n_semantic"], cfg["per_seed"], cfg["candidate_cap"]),
        latency=latency_model(cfg), retrieval_mode=cfg["retrieval_mode"], workers=cfg["workers"],
        seed=cfg["seed"], track_coverage=track_coverage, coverage_ks=tuple(cfg["coverage_ks"]))


def make_controller(cfg: ResolvedConfig) -> AlignmentController:
    return AlignmentController(CurriculumConfig(cfg["beta"], cfg["gamma"]),
                               DistillConfig(cfg["t_kd"], cfg["k_logit"], cfg["lr"]),
                               cfg["buffer_size"], cfg["eps_align"], cfg["update_delay"])


def variant_paths(variant: str) -> Paths:
    try:
        return VARIANTS[variant]
    except KeyError:
        raise ConfigError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}") from None


def make_engine(bundle: Bundle, cfg: ResolvedConfig, variant: str, domain: Optional[str] = None,
                track_coverage: bool = True) -> SpeculativeEngine:
    paths = variant_paths(variant)
    draft = bundle.world.make_draft(cfg["lora_rank"], cfg["lora_alpha"], seed=cfg["seed"])
    controller = make_controller(cfg) if paths.align else None
    target = bundle.world.target.with_domain(domain or bundle.source_domain)
    return SpeculativeEngine(target, draft, bundle.static, engine_config(cfg, track_coverage), bundle.index,
                             bundle.graph, controller, paths)


def disabled_paths(paths: Paths) -> List[str]:
    names = {"expand": "vocabulary expansion", "semantic": "semantic retrieval", "graph": "graph expansion",
             "align": "alignment"}
    return [names[k] for k in ("expand", "semantic", "graph", "align") if not getattr(paths, k)]


# ---------------------------------------------------------------------------
# scenario runs
# ---------------------------------------------------------------------------


@dataclass
class RequestRecord:
    request: int
    segment: int
    domain: str
    tokens: int
    rounds: int
    mal: float
    running_mal: float
    sim_ms: float
    throughput: float
    coverage_mass: float
    recall: Dict[int, float]
    oov_events: int
    updates: int
    peak_dynamic: int

    def to_dict(self) -> dict:
        return {
            "request": self.request, "segment": self.segment, "domain": self.domain, "tokens": self.tokens,
            "rounds": self.rounds, "mal": self.mal, "running_mal": self.running_mal, "sim_ms": self.sim_ms,
            "tokens_per_ms": self.throughput, "coverage_mass": self.coverage_mass,
            "recall": {f"@{k}": v for k, v in sorted(self.recall.items())}, "oov_events": self.oov_events,
            "updates": self.updates, "peak_dynamic": self.peak_dynamic,
        }


@dataclass
class RunMetrics:
    variant: str
    paths: Paths
    records: List[RequestRecord] = field(default_factory=list)
    trace: List[UpdateRecord] = field(default_factory=list)
    rounds: int = 0
    emitted: int = 0
    sim_ms: float = 0.0
    oov_events: int = 0
    updates: int = 0
    peak_dynamic: int = 0
    budget_violations: int = 0
    mean_coverage: float = float("nan")

    @property
    def mal(self) -> float:
        return self.emitted / self.rounds if self.rounds else 0.0

    @property
    def throughput(self) -> float:
        return self.emitted / self.sim_ms if self.sim_ms else 0.0

    def mal_curve(self) -> np.ndarray:
        return np.array([r.mal for r in self.records])

    def trailing(self, window: int = 20) -> np.ndarray:
        return trailing_mean(self.mal_curve(), window)


def trailing_mean(values: Sequence[float], window: int) -> np.ndarray:
    """Entry ``t`` is the mean of ``values[t-window+1 : t+1]``; the first ``window-1`` are NaN."""
    v = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise InputError("window must be >= 1")
    out = np.full(v.shape, np.nan)
    if v.size >= window:
        c = np.concatenate([[0.0], np.cumsum(v)])
        out[window - 1:] = (c[window:] - c[:-window]) / window
    return out


def run_scenario(script: ScenarioScript, cfg: ResolvedConfig, variant: str = "full",
                 bundle: Optional[Bundle] = None) -> RunMetrics:
    bundle = bundle or prepare_bundle(cfg)
    spec = bundle.spec
    for seg in script.segments:
        spec.domain(seg.domain)
    engine = make_engine(bundle, cfg, variant, script.segments[0].domain)
    out = RunMetrics(variant, engine.paths)
    prompt_rng = np.random.default_rng([script.seed, cfg["seed"]])
    m = engine.metrics
    try:
        for i, k, seg in script.requests():
            engine.set_domain(seg.domain)
            prompt = gen_corpus(spec.domain(seg.domain), cfg["prompt_len"], int(prompt_rng.integers(2**31)),
                                spec.vocab_size)
            engine.reset_context(prompt)
            r0, e0, t0, c0, s0 = m.rounds, m.emitted, engine.clock_ms, m.mass_sum, m.coverage_steps
            rec0 = dict(m.recall_sums)
            o0 = m.oov_events
            engine.generate(seg.tokens)
            rounds, emitted = m.rounds - r0, m.emitted - e0
            steps = m.coverage_steps - s0
            ms = engine.clock_ms - t0
            out.records.append(RequestRecord(
                request=i, segment=k, domain=seg.domain, tokens=emitted, rounds=rounds, mal=emitted / rounds,
                running_mal=m.emitted / m.rounds, sim_ms=ms, throughput=emitted / ms if ms else 0.0,
                coverage_mass=(m.mass_sum - c0) / steps if steps else float("nan"),
                recall={kk: (m.recall_sums.get(kk, 0.0) - rec0.get(kk, 0.0)) / steps if steps else float("nan")
                        for kk in engine.config.coverage_ks},
                oov_events=m.oov_events - o0,
                updates=engine.controller.updates if engine.controller else 0,
                peak_dynamic=m.peak_dynamic))
    finally:
        engine.close()
    out.rounds, out.emitted, out.sim_ms = m.rounds, m.emitted, engine.clock_ms
    out.oov_events, out.peak_dynamic, out.budget_violations = m.oov_events, m.peak_dynamic, m.budget_violations
    out.mean_coverage = m.mean_mass
    if engine.controller is not None:
        out.trace = list(engine.controller.trace)
        out.updates = engine.controller.updates
    return out


# ---------------------------------------------------------------------------
# coverage study
# ---------------------------------------------------------------------------

ARMS = {
    "static": "static_only",
    "static+hnsw": "+hnsw",
    "static+hnsw+graph": "+graph",
    "full": "full",
}


@dataclass
class CoverageRow:
    arm: str
    steps: int
    covered_mass: float
    recall: Dict[int, float]
    oov_events: int
    peak_dynamic: int


def shifted_streams(bundle: Bundle, cfg: ResolvedConfig, domain: Optional[str] = None) -> List[np.ndarray]:
    """Target samples in the shifted domain; the study's default fixture."""
    domain = domain or bundle.shifted_domain()
    length = cfg["coverage_tokens"] + cfg["prompt_len"]
    seed = 1_000 + cfg["seed"]
    return sample_target_corpus(bundle.world.target, [domain], cfg["coverage_streams"], length, seed)


def read_streams(path, vocab_size: Optional[int] = None) -> List[np.ndarray]:
    """One token stream per line, ids separated by whitespace; ``#`` starts a comment."""
    text = read_text(path, "stream file")
    streams = []
    for no, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].split()
        if not body:
            continue
        try:
            toks = np.array([int(t) for t in body], dtype=np.int64)
        except ValueError:
            raise InputError(f"{path}:{no}: stream lines must hold integer token ids") from None
        if toks.min() < 0 or (vocab_size is not None and toks.max() >= vocab_size):
            raise InputError(f"{path}:{no}: token id outside the vocabulary")
        streams.append(toks)
    if not streams:
        raise InputError(f"{path}: no streams found")
    return streams


def write_streams(path, streams: Sequence[Sequence[int]]) -> None:
    with open(path, "w") as fh:
        for s in streams:
            fh.write(" ".join(str(int(t)) for t in s) + "\n")


def coverage_study(streams: Sequence[Sequence[int]], cfg: ResolvedConfig, arms: Iterable[str] = tuple(ARMS),
                   bundle: Optional[Bundle] = None, domain: Optional[str] = None) -> List[CoverageRow]:
    """Teacher-forced replay of ``streams`` for each arm; one row per arm.

    The first ``prompt_len`` tokens of each stream condition the model and
    are not scored. Each arm keeps one engine (and so one dynamic buffer)
    across all streams.
    """
    bundle = bundle or prepare_bundle(cfg)
    domain = domain or bundle.shifted_domain()
    arms = list(arms)
    for arm in arms:
        if arm not in ARMS:
            raise ConfigError(f"unknown coverage arm {arm!r}; choose from {', '.join(ARMS)}")
    V = bundle.spec.vocab_size
    m = cfg["prompt_len"]
    for s in streams:
        s = np.asarray(s)
        if s.ndim != 1 or s.size <= m:
            raise InputError(f"each stream needs more than prompt_len={m} tokens")
        if s.min() < 0 or s.max() >= V:
            raise InputError("stream token outside the vocabulary")
    rows = []
    for arm in arms:
        engine = make_engine(bundle, cfg, ARMS[arm], domain, track_coverage=True)
        try:
            for s in streams:
                s = [int(t) for t in s]
                engine.reset_context(s[:m])
                for tok in s[m:]:
                    engine.forced_step(tok)
        finally:
            engine.close()
        met = engine.metrics
        rows.append(CoverageRow(arm, met.coverage_steps, met.mean_mass, met.mean_recall(), met.oov_events,
                                met.peak_dynamic))
    return rows


# ---------------------------------------------------------------------------
# beta sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepTrajectory:
    beta: float
    seed: int
    train_loss: List[float] = field(default_factory=list)
    eval_loss: List[float] = field(default_factory=list)
    mean_weights: List[List[float]] = field(default_factory=list)

    @property
    def smoothed(self) -> float:
        return smoothed_final(self.eval_loss)


def smoothed_final(losses: Sequence[float], fraction: float = 0.2) -> float:
    """Mean over the trailing ``fraction`` of the trajectory (at least one point)."""
    if len(losses) == 0:
        return float("nan")
    n = max(1, int(math.ceil(fraction * len(losses))))
    return float(np.mean(losses[-n:]))


def _sampled_entry(target: TargetModel, stream: np.ndarray, pos: int, gamma: int, k_logit: int, window: int,
                   noise: float, rng: np.random.Generator) -> Tuple[tuple, tuple, list]:
    ctx = tuple(int(t) for t in stream[pos - window:pos])
    cont = tuple(int(t) for t in stream[pos:pos + gamma - 1])
    steps = []
    for j in range(gamma):
        logits = target.full_logits(target.featurize(list(ctx) + list(cont[:j])))
        if k_logit >= logits.shape[0]:
            ids, z = np.arange(logits.shape[0], dtype=np.int64), logits
        else:
            ids, z = topk(logits, k_logit)
        if noise > 0 and j > 0:
            z = z + rng.normal(0.0, noise * j, size=z.shape)
        steps.append((ids, z))
    return ctx, cont, steps


def _entry_positions(streams: Sequence[np.ndarray], count: int, gamma: int, window: int,
                     rng: np.random.Generator) -> List[Tuple[int, int]]:
    out = []
    for _ in range(count):
        k = int(rng.integers(len(streams)))
        out.append((k, int(rng.integers(window, len(streams[k]) - gamma + 1))))
    return out


def heldout_loss(entries: Sequence[ReplayEntry], draft, t_kd: float) -> float:
    """Unweighted tempered KL per step, averaged over entries and steps."""
    res = distill_loss(entries, draft, CurriculumConfig(0.0, max(e.horizon for e in entries)),
                       DistillConfig(t_kd=t_kd))
    return res.loss / sum(e.horizon for e in entries)


def beta_sweep(betas: Sequence[float], cfg: ResolvedConfig, seeds: Sequence[int] = (0,),
               bundle: Optional[Bundle] = None, domain: Optional[str] = None) -> List[SweepTrajectory]:
    """Adapter training on a distal-noise stream; identical data for every beta.

    For each seed the sequence of buffer positions and target-noise draws is
    fixed in advance, so runs for different beta values see the same data
    and differ only through the curriculum weights ``w_j``. Step ``j`` of
    every training entry has Gaussian noise of std ``sweep_noise * (j - 1)``
    on the retained target logits. The evaluation loss uses clean targets
    and uniform weights on a held-out set, so it is comparable across beta.
    """
    betas = [float(b) for b in betas]
    if not betas:
        raise ConfigError("beta sweep needs at least one beta")
    if any(b < 0 or not math.isfinite(b) for b in betas):
        raise ConfigError("beta values must be finite and >= 0")
    bundle = bundle or prepare_bundle(cfg)
    world = bundle.world
    domain = domain or bundle.shifted_domain()
    target = world.target.with_domain(domain)
    gamma, k_logit, window = cfg["gamma"], min(cfg["k_logit"], world.vocab_size), world.spec.window
    B, n_updates, noise = cfg["buffer_size"], cfg["sweep_updates"], cfg["sweep_noise"]
    distill = DistillConfig(cfg["t_kd"], k_logit, cfg["sweep_lr"])
    all_ids = np.arange(world.vocab_size)
    out: List[SweepTrajectory] = []
    for seed in seeds:
        streams = sample_target_corpus(target, [domain], 16, 256, 50_000 + seed)
        held = sample_target_corpus(target, [domain], 4, 256, 60_000 + seed)
        rng = np.random.default_rng(70_000 + seed)
        train = []
        for k, pos in _entry_positions(streams, n_updates * B, gamma, window, rng):
            train.append((streams[k][pos], _sampled_entry(target, streams[k], pos, gamma, k_logit, window, noise, rng)))
        eval_rng = np.random.default_rng(80_000 + seed)
        eval_entries = []
        for k, pos in _entry_positions(held, 64, gamma, window, eval_rng):
            ctx, cont, steps = _sampled_entry(target, held[k], pos, gamma, k_logit, window, 0.0, eval_rng)
            eval_entries.append(ReplayEntry(ctx, cont, steps, int(held[k][pos]), 0.0))
        for beta in betas:
            draft = world.make_draft(cfg["lora_rank"], cfg["lora_alpha"], seed=seed)
            traj = SweepTrajectory(beta, seed)
            curriculum = CurriculumConfig(beta, gamma)
            for u in range(n_updates):
                batch = []
                for token, (ctx, cont, steps) in train[u * B:(u + 1) * B]:
                    lq = log_softmax(draft.logits_at(draft.featurize(list(ctx)), all_ids), 1.0)
                    batch.append(ReplayEntry(ctx, cont, steps, int(token), float(-lq[int(token)])))
                res = distill_loss(batch, draft, curriculum, distill)
                apply_update(draft, res.grad_a, res.grad_b, distill.lr)
                traj.train_loss.append(res.loss)
                traj.mean_weights.append(res.mean_weights)
                traj.eval_loss.append(heldout_loss(eval_entries, draft, distill.t_kd))
            out.append(traj)
    return out


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------


def header_line(cfg: ResolvedConfig, **extra) -> str:
    parts = [f"config_hash={cfg.hash}"] + [f"{k}={v}" for k, v in extra.items()]
    return "# " + " ".join(parts)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_metrics_jsonl(path, cfg: ResolvedConfig, runs: Sequence[RunMetrics], script: ScenarioScript) -> None:
    """One header object, then one object per (variant, request)."""
    with open(path, "w") as fh:
        head = {
            "config_hash": cfg.hash, "config": cfg.canonical(), "scenario": format_scenario(script),
            "variants": {r.variant: {"paths": r.paths.__dict__, "disabled": disabled_paths(r.paths)} for r in runs},
        }
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for run in runs:
            for rec in run.records:
                fh.write(json.dumps({"variant": run.variant, **rec.to_dict()}, sort_keys=True) + "\n")


SUMMARY_COLUMNS = ["variant", "disabled", "requests", "tokens", "rounds", "mal", "tokens_per_ms", "sim_ms",
                   "mean_coverage", "oov_events", "updates", "peak_dynamic", "budget_violations"]


def write_summary_csv(path, cfg: ResolvedConfig, runs: Sequence[RunMetrics]) -> None:
    variants = ",".join(r.variant for r in runs)
    with open(path, "w", newline="") as fh:
        fh.write(header_line(cfg, variants=variants) + "\n")
        for r in runs:
            fh.write(f"# {r.variant}: disabled={'+'.join(disabled_paths(r.paths)) or 'none'}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in runs:
            w.writerow([r.variant, "+".join(disabled_paths(r.paths)) or "none", len(r.records), r.emitted,
                        r.rounds, _fmt(r.mal), _fmt(r.throughput), _fmt(r.sim_ms), _fmt(r.mean_coverage),
                        r.oov_events, r.updates, r.peak_dynamic, r.budget_violations])


def write_coverage_csv(path, cfg: ResolvedConfig, rows: Sequence[CoverageRow]) -> None:
    ks = sorted({k for r in rows for k in r.recall})
    with open(path, "w", newline="") as fh:
        fh.write(header_line(cfg) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "steps", "covered_mass"] + [f"recall@{k}" for k in ks] + ["oov_events", "peak_dynamic"])
        for r in rows:
            w.writerow([r.arm, r.steps, _fmt(r.covered_mass)] + [_fmt(r.recall.get(k, float("nan"))) for k in ks]
                       + [r.oov_events, r.peak_dynamic])


def write_beta_csv(path, cfg: ResolvedConfig, trajectories: Sequence[SweepTrajectory]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header_line(cfg) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beta", "seed", "update", "train_loss", "heldout_loss", "smoothed_final"])
        for t in trajectories:
            sm = t.smoothed
            for u, (tr, ev) in enumerate(zip(t.train_loss, t.eval_loss), 1):
                w.writerow([_fmt(t.beta), t.seed, u, _fmt(tr), _fmt(ev), _fmt(sm)])


def read_csv_body(path) -> List[dict]:
    """Rows of a written CSV, skipping ``#`` header lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("".join(lines))))
