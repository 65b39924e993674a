"""Experiment configuration: an INI-style ``key = value`` file with sections.

``dump_config(parse_config(text))`` is canonical: sections and keys always
come out in the same order with the same number formatting, so a dumped
config round-trips byte for byte.
"""

from __future__ import annotations

import configparser
import dataclasses
import zlib
from dataclasses import dataclass, field, fields
from typing import Any

from ..dataset import SplitSpec
from ..embeddings import PretrainConfig
from ..gpr import GPConfig, KernelConfig
from ..retrieval import Policy
from ..simulation import DcmConfig, WorldConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    source: str = "synthetic"
    interactions: str = ""
    catalog: str = ""
    format: str = "csv"
    synthetic_users: int = 250
    synthetic_items: int = 400
    synthetic_categories: int = 12
    max_users: int = 0


@dataclass
class SplitSection:
    ratios: tuple = (0.8, 0.1, 0.1)
    history_fraction: float = 0.8
    history_cap: int = 175
    min_item_freq: int = 10
    min_user_len: int = 25
    observations: str = "implicit"


@dataclass
class PretrainSection:
    dim: int = 16
    gamma: float = 1.0
    learning_rate: float = 0.01
    max_iters: int = 3000
    patience: int = 10
    negatives_per_positive: int = 20
    batch_size: int = 256
    eval_every: int = 50
    oracle_dim: int = 64


@dataclass
class GPSection:
    kernels: tuple = ("rbf", "matern52")
    length_scales: tuple = (0.5, 1.0, 2.0)
    noise_vars: tuple = (0.01, 0.1)
    output_scale: float = 1.0
    predict_noise_var: float = 0.0


@dataclass
class RetrievalSection:
    policies: tuple = ("thompson", "ucb:1", "greedy", "random")
    N: int = 100


@dataclass
class EvaluationSection:
    cutoffs: tuple = (20, 50, 100)
    tail_fraction: float = 0.5
    criterion: tuple = ("IC@20:1", "IR@20:1")


@dataclass
class OnlineSection:
    n_clusters: int = 10
    dim: int = 32
    n_users: int = 1000
    items_per_cluster: int = 300
    cluster_mean_scale: float = 2.0
    cluster_cov_scale: float = 0.3
    interests_min: int = 2
    interests_max: int = 5
    self_transition: float = 0.6
    history_steps: int = 10
    kernel: str = "rbf"
    length_scale: float = 6.0
    output_scale: float = 1.0
    noise_var: float = 0.01
    continue_after_click: float = 0.9
    continue_after_skip: float = 0.5
    redundancy_decay: float = 0.8
    relevance_fn: str = "identity"
    policies: tuple = ("random", "greedy", "ucb:1", "ucb:5", "thompson")
    N: int = 10
    T: int = 10
    world_seeds: int = 1
    write_traces: bool = True


@dataclass
class RunSection:
    seed: int = 0


SECTIONS = (
    ("run", RunSection),
    ("data", DataSection),
    ("split", SplitSection),
    ("pretrain", PretrainSection),
    ("gp", GPSection),
    ("retrieval", RetrievalSection),
    ("evaluation", EvaluationSection),
    ("online", OnlineSection),
)


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    split: SplitSection = field(default_factory=SplitSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    gp: GPSection = field(default_factory=GPSection)
    retrieval: RetrievalSection = field(default_factory=RetrievalSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    online: OnlineSection = field(default_factory=OnlineSection)

    def __post_init__(self):
        if not (self.gp.kernels and self.gp.length_scales and self.gp.noise_vars):
            raise ConfigError("the GP grid must be non-empty")
        cut = list(self.evaluation.cutoffs)
        if not cut or any(k <= 0 for k in cut) or cut != sorted(set(cut)):
            raise ConfigError("cutoffs must be positive and strictly ascending")
        for spec in self.retrieval.policies + self.online.policies:
            parse_policy(spec)

    # -- derived objects ---------------------------------------------------

    @property
    def seed(self) -> int:
        return self.run.seed

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, run=RunSection(seed=seed))

    def split_spec(self) -> SplitSpec:
        s = self.split
        return SplitSpec(tuple(s.ratios), s.history_fraction, s.history_cap, s.min_item_freq,
                         s.min_user_len, derive_seed(self.seed, "split"), s.observations)

    def pretrain_config(self, oracle: bool = False) -> PretrainConfig:
        p = self.pretrain
        return PretrainConfig(
            dim=p.oracle_dim if oracle else p.dim, gamma=p.gamma,
            learning_rate=p.learning_rate, max_iters=p.max_iters, patience=p.patience,
            negatives_per_positive=p.negatives_per_positive, batch_size=p.batch_size,
            eval_every=p.eval_every,
            seed=derive_seed(self.seed, "oracle" if oracle else "pretrain"))

    def gp_grid(self) -> list[GPConfig]:
        g = self.gp
        return [GPConfig(KernelConfig(k, ls, g.output_scale), noise_var=nv,
                         predict_noise_var=g.predict_noise_var)
                for k in g.kernels for ls in g.length_scales for nv in g.noise_vars]

    def offline_policies(self) -> list[Policy]:
        return [parse_policy(s, derive_seed(self.seed, "policy")) for s in self.retrieval.policies]

    def online_policies(self) -> list[Policy]:
        return [parse_policy(s, derive_seed(self.seed, "online-policy")) for s in self.online.policies]

    def world_config(self, replicate: int = 0) -> WorldConfig:
        o = self.online
        return WorldConfig(
            n_clusters=o.n_clusters, dim=o.dim, n_users=o.n_users,
            n_items=o.n_clusters * o.items_per_cluster, items_per_cluster=o.items_per_cluster,
            cluster_mean_scale=o.cluster_mean_scale, cluster_cov_scale=o.cluster_cov_scale,
            interests_per_user=(o.interests_min, o.interests_max),
            self_transition=o.self_transition, history_steps=o.history_steps,
            seed=derive_seed(self.seed, f"world-{replicate}"))

    def online_gp(self) -> GPConfig:
        o = self.online
        return GPConfig(KernelConfig(o.kernel, o.length_scale, o.output_scale), noise_var=o.noise_var)

    def dcm_config(self, replicate: int = 0) -> DcmConfig:
        o = self.online
        return DcmConfig(o.continue_after_click, o.continue_after_skip, o.redundancy_decay,
                         o.relevance_fn, seed=derive_seed(self.seed, f"dcm-{replicate}"))


def derive_seed(seed: int, name: str) -> int:
    """Stable per-component seed from the single global seed."""
    return (int(seed) * 1_000_003 + zlib.crc32(name.encode())) % (2 ** 31)


def parse_policy(spec: str, seed: int = 0) -> Policy:
    kind, _, beta = spec.strip().partition(":")
    if kind == "ucb":
        return Policy("ucb", float(beta or 1.0), seed)
    if beta:
        raise ConfigError(f"policy {kind!r} takes no parameter")
    try:
        return Policy(kind, 0.0, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# text form
# ---------------------------------------------------------------------------


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(text: str, default: Any, name: str) -> Any:
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            proto = default[0] if default else ""
            return tuple(_coerce(t, proto, name) for t in items)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    known = dict(SECTIONS)
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")
    parts = {}
    for name, cls in SECTIONS:
        proto = cls()
        values = {}
        if parser.has_section(name):
            allowed = {f.name for f in fields(cls)}
            for key, raw in parser.items(name):
                if key not in allowed:
                    raise ConfigError(f"unknown key {name}.{key}")
                values[key] = _coerce(raw, getattr(proto, key), f"{name}.{key}")
        parts[name] = cls(**values)
    return ExperimentConfig(**parts)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name, cls in SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(cls):
            lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
