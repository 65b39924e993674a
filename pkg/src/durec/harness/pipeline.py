"""Offline and online experiment stages.

Every stage reads what it needs from the output directory and writes its
artifacts back there, so stages can be re-run in isolation.  Nothing depends
on the clock; all randomness is derived from the config's global seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .. import dataset as ds
from .. import embeddings as emb
from .. import metrics as mt
from .. import simulation as sim
from .. import gpr
from ..gpr import GPConfig, KernelConfig
from ..retrieval import Policy, read_run, retrieve, write_run
from .config import ExperimentConfig, dump_config

log = logging.getLogger(__name__)

EMBEDDINGS = "embeddings.txt"
ORACLE = "oracle.txt"
MANIFEST = "split.tsv"
SWEEP = "sweep.tsv"
ONLINE_SUMMARY = "online_summary.tsv"
REPORT = "report.txt"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def policy_tag(policy: Policy) -> str:
    """File-name friendly policy label."""
    return f"ucb{policy.beta:g}" if policy.kind == "ucb" else policy.kind


def _stage(name: str):
    def wrap(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def load_data(cfg: ExperimentConfig):
    d = cfg.data
    if d.source == "synthetic":
        log_, catalog = ds.synthetic_dataset(d.synthetic_users, d.synthetic_items,
                                             d.synthetic_categories, seed=cfg.seed)
    elif d.source == "files":
        log_ = ds.load_interactions(d.interactions, d.format)
        catalog = ds.load_catalog(d.catalog, d.format)
    else:
        raise ValueError(f"unknown data source {d.source!r}")
    if d.max_users:
        keep = set(log_.users[:d.max_users])
        log_ = ds.InteractionLog.from_records(r for r in log_.records if r[0] in keep)
    return log_, catalog


def prepare_splits(cfg: ExperimentConfig):
    log_, catalog = load_data(cfg)
    splits = ds.filter_and_split(log_, cfg.split_spec(), catalog)
    if not (splits.train and splits.val and splits.test):
        raise ds.DatasetError(
            f"split is too small: {len(splits.train)}/{len(splits.val)}/{len(splits.test)} users")
    return splits, catalog.restrict(splits.retained_items)


def _holdouts(users) -> dict:
    return {u.user_id: list(u.holdout) for u in users}


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def parse_criterion(terms: Sequence[str]) -> list[tuple[str, int, float]]:
    """``("IC@20:1", "IR@20:0.5")`` -> ``[("IC", 20, 1.0), ("IR", 20, 0.5)]``."""
    out = []
    for term in terms:
        name, _, weight = term.partition(":")
        metric, _, k = name.partition("@")
        if metric not in mt.METRICS or not k:
            raise ValueError(f"bad criterion term {term!r}")
        out.append((metric, int(k), float(weight or 1.0)))
    if not out:
        raise ValueError("empty sweep criterion")
    return out


DEFAULT_CRITERION = (("IC", 20, 1.0), ("IR", 20, 1.0))


@dataclass
class SweepResult:
    grid: list
    reports: list
    scores: list
    selected: int
    criterion: tuple = DEFAULT_CRITERION

    @property
    def best(self) -> GPConfig:
        return self.grid[self.selected]


def _score(report: mt.MetricReport, criterion) -> float:
    return math.fsum(w * report.mean(m, k) for m, k, w in criterion)


def sweep(gp_grid: Sequence[GPConfig], val_users, store, criterion=DEFAULT_CRITERION, *,
          catalog, oracle, policy: Policy = Policy("greedy"), N: int = 100,
          tail: Sequence = (), candidate_items=None) -> SweepResult:
    """Evaluate every grid point on the validation users and keep the best.

    Ties go to the earliest grid point.
    """
    if not gp_grid:
        raise ValueError("empty GP grid")
    criterion = tuple(criterion)
    cutoffs = sorted({k for _, k, _ in criterion})
    holdouts = _holdouts(val_users)
    reports, scores = [], []
    for gp_cfg in gp_grid:
        run = retrieve(val_users, store, gp_cfg, policy, N, candidate_items)
        report = mt.evaluate(run, holdouts, catalog, oracle, cutoffs, tail)
        reports.append(report)
        scores.append(_score(report, criterion))
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return SweepResult(list(gp_grid), reports, scores, best, criterion)


def write_sweep(result: SweepResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, (g, score) in enumerate(zip(result.grid, result.scores)):
            k = g.kernel
            fh.write(f"{i}\t{k.family}\t{k.length_scale!r}\t{k.output_scale!r}\t"
                     f"{g.noise_var!r}\t{g.predict_noise_var!r}\t{score:.6f}\n")
        fh.write(f"selected\t{result.selected}\n")


def read_selected(path) -> GPConfig:
    rows = {}
    selected = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "selected":
                selected = parts[1]
            elif len(parts) == 7:
                rows[parts[0]] = parts
    if selected is None or selected not in rows:
        raise ValueError(f"{path}: no selected grid point")
    _, fam, ls, os_, nv, pnv, _ = rows[selected]
    return GPConfig(KernelConfig(fam, float(ls), float(os_)), float(nv), float(pnv))


# ---------------------------------------------------------------------------
# offline stages
# ---------------------------------------------------------------------------


def _out(out_dir) -> Path:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


@_stage("pretrain")
def stage_pretrain(cfg: ExperimentConfig, out_dir) -> None:
    out = _out(out_dir)
    _write_text(out / "config.ini", dump_config(cfg))
    splits, catalog = prepare_splits(cfg)
    ds.write_manifest(splits, out / MANIFEST)
    for oracle, name in ((False, EMBEDDINGS), (True, ORACLE)):
        store = emb.pretrain(splits.train, catalog, cfg.pretrain_config(oracle),
                             items=splits.retained_items)
        emb.save_store(store, out / name)


def _load_stores(out: Path):
    for name in (EMBEDDINGS, ORACLE):
        if not (out / name).exists():
            raise FileNotFoundError(f"{out / name} missing; run pretrain first")
    return emb.load_store(out / EMBEDDINGS), mt.SimilarityOracle.from_store(emb.load_store(out / ORACLE))


def _tail(cfg, splits, catalog):
    return mt.tail_categories([u.history for u in splits.train], catalog,
                              cfg.evaluation.tail_fraction)


def _sweep_policy(cfg: ExperimentConfig) -> Policy:
    for p in cfg.offline_policies():
        if p.kind != "random":
            return p
    return Policy("greedy", 0.0, cfg.seed)


@_stage("sweep")
def stage_sweep(cfg: ExperimentConfig, out_dir) -> SweepResult:
    out = _out(out_dir)
    store, oracle = _load_stores(out)
    splits, catalog = prepare_splits(cfg)
    result = sweep(cfg.gp_grid(), splits.val, store,
                   parse_criterion(cfg.evaluation.criterion), catalog=catalog, oracle=oracle,
                   policy=_sweep_policy(cfg), N=cfg.retrieval.N,
                   tail=_tail(cfg, splits, catalog))
    write_sweep(result, out / SWEEP)
    return result


@_stage("retrieve")
def stage_retrieve(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    store, _ = _load_stores(out)
    if not (out / SWEEP).exists():
        raise FileNotFoundError(f"{out / SWEEP} missing; run sweep first")
    gp_cfg = read_selected(out / SWEEP)
    splits, _ = prepare_splits(cfg)
    runs = {}
    for policy in cfg.offline_policies():
        run = retrieve(splits.test, store, gp_cfg, policy, cfg.retrieval.N)
        write_run(run, out / f"run_{policy_tag(policy)}.tsv")
        runs[policy_tag(policy)] = run
    return runs


@_stage("evaluate")
def stage_evaluate(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    _, oracle = _load_stores(out)
    splits, catalog = prepare_splits(cfg)
    holdouts = _holdouts(splits.test)
    tail = _tail(cfg, splits, catalog)
    reports = {}
    for policy in cfg.offline_policies():
        tag = policy_tag(policy)
        path = out / f"run_{tag}.tsv"
        if not path.exists():
            raise FileNotFoundError(f"{path} missing; run retrieve first")
        report = mt.evaluate(read_run(path), holdouts, catalog, oracle,
                             cfg.evaluation.cutoffs, tail)
        mt.write_report(report, out / f"metrics_{tag}.tsv")
        mt.write_report(report, out / f"metrics_{tag}_per_user.tsv", per_user=True)
        reports[tag] = report
    return reports


def run_offline(cfg: ExperimentConfig, out_dir) -> dict:
    """Pretrain, sweep, retrieve and evaluate; returns a report per policy tag."""
    stage_pretrain(cfg, out_dir)
    stage_sweep(cfg, out_dir)
    stage_retrieve(cfg, out_dir)
    return stage_evaluate(cfg, out_dir)


# ---------------------------------------------------------------------------
# online
# ---------------------------------------------------------------------------


@dataclass
class OnlineResult:
    labels: list
    curves: dict = field(default_factory=dict)  # label -> list of per-replicate IC lists

    def mean_curve(self, label) -> list:
        reps = self.curves[label]
        return [math.fsum(r[t] for r in reps) / len(reps) for t in range(len(reps[0]))]

    def rows(self):
        return [(label, self.mean_curve(label)) for label in self.labels]


@_stage("simulate")
def run_online(cfg: ExperimentConfig, out_dir=None,
               progress: Callable[[str], None] = None) -> OnlineResult:
    """Run every configured policy on the same seeded worlds.

    Curves are averaged over ``online.world_seeds`` replicate worlds.
    """
    o = cfg.online
    policies = cfg.online_policies()
    result = OnlineResult([p.label for p in policies])
    out = _out(out_dir) if out_dir is not None else None
    for rep in range(o.world_seeds):
        world = sim.generate_world(cfg.world_config(rep))
        gram = gpr.kernel_matrix(cfg.online_gp().kernel, world.item_embeddings,
                                 rowwise=False)
        for policy in policies:
            try:
                trace = sim.online_loop(world, cfg.online_gp(), policy, o.N, o.T,
                                        cfg.dcm_config(rep), gram=gram)
            except Exception as exc:
                raise RuntimeError(f"policy {policy.label}, world {rep}: {exc}") from exc
            result.curves.setdefault(policy.label, []).append(list(trace.ic))
            if out is not None and o.write_traces and rep == 0:
                sim.write_trace(trace, out / f"trace_{policy_tag(policy)}.tsv")
            if progress:
                progress(f"world {rep} {policy.label}: " + " ".join(f"{v:.2f}" for v in trace.ic))
    if out is not None:
        _write_text(out / ONLINE_SUMMARY, sim.summary_table(result.rows()))
    return result


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def read_report(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            metric, k, mean = line.rstrip("\n").split("\t")
            values[(metric, int(k))] = mean
    return values


@_stage("report")
def stage_report(cfg: ExperimentConfig, out_dir) -> str:
    """Collect offline metrics (policy x metric@k) and the online summary."""
    out = _out(out_dir)
    lines = []
    cutoffs = cfg.evaluation.cutoffs
    tagged = [(policy_tag(p), p.label) for p in cfg.offline_policies()]
    found = [(tag, label) for tag, label in tagged if (out / f"metrics_{tag}.tsv").exists()]
    if found:
        header = ["method"] + [f"{m}@{k}" for m in mt.METRICS for k in cutoffs]
        lines.append("\t".join(header))
        for tag, label in found:
            vals = read_report(out / f"metrics_{tag}.tsv")
            lines.append("\t".join([label] + [vals[(m, k)] for m in mt.METRICS for k in cutoffs]))
        lines.append("")
    if (out / ONLINE_SUMMARY).exists():
        with open(out / ONLINE_SUMMARY, encoding="utf-8") as fh:
            lines.append(fh.read().rstrip("\n"))
        lines.append("")
    if not lines:
        raise FileNotFoundError(f"nothing to report in {out}")
    text = "\n".join(lines)
    _write_text(out / REPORT, text)
    return text
