"""Run configuration: typed keys, ``key = value`` files, provenance and hashing.

Every experiment knob lives in one flat namespace. A value comes from the
built-in default, a config file, or a command-line override, with later
sources winning; each resolved key remembers where it came from. The config
hash is computed over the resolved values only, so two runs with the same
hash are the same experiment.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

from .errors import ConfigError


def _parse_int_pair(text: str) -> Tuple[int, int]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated integers, got {text!r}")
    return int(parts[0]), int(parts[1])


def _parse_int_list(text: str) -> Tuple[int, ...]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(int(p) for p in parts)


def parse_float_list(text: str) -> Tuple[float, ...]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _parse_optional_int(text: str) -> Optional[int]:
    if text.strip().lower() in ("", "none", "auto"):
        return None
    return int(text)


@dataclass(frozen=True)
class Key:
    name: str
    default: Any
    parse: Callable[[str], Any]
    check: Optional[Callable[[Any], bool]] = None
    doc: str = ""


def _pos(x) -> bool:
    return x > 0


def _nonneg(x) -> bool:
    return x >= 0


KEYS: Tuple[Key, ...] = (
    # decoding
    Key("gamma", 6, int, _pos, "draft chain length"),
    Key("token_budget", 60, int, _pos, "cap on drafted tokens per round"),
    Key("temperature", 0.0, float, _nonneg, "sampling temperature; 0 is greedy"),
    Key("k_logit", 64, int, _pos, "target logits retained per verified position"),
    Key("eps_cov", 0.05, float, _nonneg, "coverage tolerance"),
    Key("retrieval_mode", "simulated", str, lambda v: v in ("simulated", "sync", "threads")),
    Key("workers", 1, int, _pos, "retrieval worker threads"),
    # vocabulary
    Key("static_size", 1024, int, _pos, "K_static"),
    Key("dyn_size", 256, int, _pos, "N_dyn, the dynamic buffer budget"),
    Key("static_corpus_len", 200_000, int, _pos, "tokens in the static build corpus"),
    # retrieval
    Key("hnsw_m", 32, int, lambda v: v >= 2),
    Key("hnsw_ef_construction", 200, int, _pos),
    Key("hnsw_ef_search", 64, int, _pos),
    Key("graph_tau", 1e-4, float, lambda v: 0 <= v <= 1),
    Key("graph_min_count", 5, int, _pos),
    Key("graph_max_degree", 64, int, _pos),
    Key("graph_streams", 512, int, _pos, "target sample streams per domain for the graph corpus"),
    Key("graph_stream_len", 256, int, lambda v: v >= 2),
    Key("n_target", 10, int, _nonneg),
    Key("n_semantic", 10, int, _nonneg),
    Key("per_seed", 8, int, _nonneg),
    Key("candidate_cap", 32, int, _pos),
    # cache
    Key("arc_p0", None, _parse_optional_int, lambda v: v is None or v >= 0, "initial ARC target; auto = N_dyn // 2"),
    Key("ghost_caps", (256, 256), _parse_int_pair, lambda v: min(v) >= 0),
    Key("min_residency", 8, int, _nonneg),
    Key("warmup", 50, int, _nonneg),
    # alignment
    Key("buffer_size", 32, int, _pos),
    Key("lr", 1e-5, float, _nonneg),
    Key("t_kd", 1.0, float, _pos),
    Key("lora_rank", 32, int, _pos),
    Key("lora_alpha", 32.0, float, _pos),
    Key("beta", 0.3, float, _nonneg),
    Key("eps_align", 0.05, float, _nonneg),
    Key("update_delay", 0, int, _nonneg),
    # model world
    Key("model_seed", 0, int, _nonneg, "seed of the synthetic target/draft pair"),
    Key("model", "", str, None, "optional model spec file"),
    # harness
    Key("seed", 0, int, _nonneg),
    Key("prompt_len", 8, int, _pos),
    Key("coverage_ks", (10, 50, 100, 256), _parse_int_list, lambda v: min(v) >= 1),
    Key("coverage_tokens", 2048, int, _pos, "tokens per coverage stream"),
    Key("coverage_streams", 2, int, _pos),
    Key("sweep_updates", 60, int, _pos),
    Key("sweep_noise", 1.0, float, _nonneg, "distal-target noise growth per horizon step"),
    Key("sweep_lr", 0.005, float, _pos),
    # simulated clock
    Key("latency.retrieval_ms", 2.07, float, _nonneg),
    Key("latency.step_body_ms", 3.754, float, _nonneg),
    Key("latency.projection_ms", 0.561, float, _nonneg),
    Key("latency.sampling_ms", 0.025, float, _nonneg),
)

KEY_INDEX: Dict[str, Key] = {k.name: k for k in KEYS}
PROVENANCE = ("default", "file", "flag")


def _coerce(key: Key, raw: Any, source: str) -> Any:
    try:
        value = key.parse(raw) if isinstance(raw, str) else raw
        if isinstance(key.default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if isinstance(key.default, tuple) and isinstance(value, list):
            value = tuple(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: bad value for {key.name!r}: {exc}") from exc
    if key.check is not None and not key.check(value):
        raise ConfigError(f"{source}: value {value!r} out of range for {key.name!r}")
    return value


def iter_assignments(lines: Iterable[str], source: str = "<input>") -> Iterator[Tuple[int, str, str]]:
    """Yield ``(line number, key, value)``; blank lines and ``#`` comments are skipped."""
    for no, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{no}: expected key = value")
        k, v = (part.strip() for part in text.split("=", 1))
        if not k:
            raise ConfigError(f"{source}:{no}: empty key")
        yield no, k, v


def parse_assignments(lines: Iterable[str], source: str = "<input>") -> Dict[str, str]:
    """Last assignment of each key wins."""
    return {k: v for _, k, v in iter_assignments(lines, source)}


def read_text(path, what: str = "file") -> str:
    try:
        return Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        reason = getattr(exc, "strerror", None) or str(exc)
        raise ConfigError(f"cannot read {what} {path}: {reason}") from exc


def read_config_file(path) -> Dict[str, str]:
    return parse_assignments(read_text(path, "config file").splitlines(), str(path))


@dataclass
class ResolvedConfig:
    values: Dict[str, Any]
    provenance: Dict[str, str] = field(default_factory=dict)
    # text of input files (model spec, scenario) folded into the hash
    attachments: Dict[str, str] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def get(self, name: str, default: Any = None) -> Any:
        return self.values.get(name, default)

    def canonical(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.values.items())}

    @property
    def hash(self) -> str:
        payload = {"values": self.canonical(), "attachments": dict(sorted(self.attachments.items()))}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **updates: Any) -> "ResolvedConfig":
        """Copy with programmatic overrides (recorded as ``flag``)."""
        values = dict(self.values)
        prov = dict(self.provenance)
        for name, raw in updates.items():
            name = name.replace("__", ".")
            if name not in KEY_INDEX:
                raise ConfigError(f"unknown config key {name!r}")
            values[name] = _coerce(KEY_INDEX[name], raw, "override")
            prov[name] = "flag"
        return ResolvedConfig(values, prov, dict(self.attachments))

    def attach(self, label: str, text: str) -> "ResolvedConfig":
        return ResolvedConfig(dict(self.values), dict(self.provenance), {**self.attachments, label: text})

    def diff(self, other: "ResolvedConfig") -> Dict[str, Tuple[Any, Any]]:
        return {k: (self.values[k], other.values[k]) for k in self.values if self.values[k] != other.values[k]}

    def render(self) -> str:
        width = max(len(k) for k in self.values)
        lines = [f"# config hash {self.hash}"]
        for k in sorted(self.values):
            v = self.values[k]
            shown = ",".join(map(str, v)) if isinstance(v, tuple) else ("auto" if v is None else v)
            lines.append(f"{k:<{width}} = {shown}  [{self.provenance.get(k, 'default')}]")
        return "\n".join(lines)


def resolve(file_values: Optional[Mapping[str, str]] = None, flag_values: Optional[Mapping[str, Any]] = None,
            file_label: str = "config file") -> ResolvedConfig:
    """Merge defaults, file values and flag values (in increasing precedence)."""
    values = {k.name: k.default for k in KEYS}
    prov = {k.name: "default" for k in KEYS}
    for layer, label, tag in ((file_values or {}, file_label, "file"), (flag_values or {}, "override", "flag")):
        for name, raw in layer.items():
            if name not in KEY_INDEX:
                raise ConfigError(f"{label}: unknown config key {name!r}")
            values[name] = _coerce(KEY_INDEX[name], raw, label)
            prov[name] = tag
    return ResolvedConfig(values, prov)


def default_config(**overrides: Any) -> ResolvedConfig:
    base = resolve()
    return base.with_overrides(**overrides) if overrides else base


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> ResolvedConfig:
    file_values = read_config_file(path) if path is not None else None
    return resolve(file_values, overrides, str(path) if path is not None else "config file")


def split_overrides(tokens: Iterable[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"expected key=value override, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def documented_keys() -> List[Tuple[str, str, str]]:
    """(name, default, description) for every key, for help output."""
    rows = []
    for k in KEYS:
        d = k.default
        shown = ",".join(map(str, d)) if isinstance(d, tuple) else ("auto" if d is None else str(d))
        rows.append((k.name, shown, k.doc))
    return rows
