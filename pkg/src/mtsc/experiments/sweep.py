"""SNR sweeps over every arm and seed, CSV output and summary statistics."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from ..models import LinkDraws, MTSCModel, run_batch
from ..rng import RngHandle
from .baselines import payload_symbols, run_baseline1
from .config import ExperimentConfig
from .metrics import METRIC_FOR_TASK, mean_iw_distortion, task_metrics
from .pipeline import SeedData, build_kbs, make_data, train_arms

HEADER = "run_id,seed,snr_db,arm,task,metric,value"
ACCURACY_TASKS = ("classify", "vqa", "caption")


@dataclass(frozen=True)
class MetricRecord:
    run_id: str
    seed: int | str
    snr_db: float
    arm: str
    task: str
    metric: str
    value: float

    def row(self) -> str:
        return f"{self.run_id},{self.seed},{self.snr_db!r},{self.arm},{self.task},{self.metric},{self.value!r}"


def run_id_for(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(cfg.to_yaml().encode()).hexdigest()[:12]


def eval_draws(cfg: ExperimentConfig, seed: int, test, max_symbols: int):
    """Channel draws shared by all arms and SNR points of one seed.

    Both link types see the same per-sample fading gain; only the noise
    vector length differs.
    """
    gen = RngHandle(seed).child("eval").generator()
    n = len(test)
    fading = cfg.channel.fading == "block"
    semantic = LinkDraws.draw(gen, n, max_symbols, cfg.channel.k_factor, fading)
    raw = LinkDraws.draw(gen, n, payload_symbols(test.inputs()), cfg.channel.k_factor, fading)
    return semantic, LinkDraws(semantic.h, raw.w)


def evaluate_seed(
    cfg: ExperimentConfig,
    seed: int,
    models: dict[str, MTSCModel],
    data: SeedData,
    run_id: str | None = None,
) -> list[MetricRecord]:
    run_id = run_id or run_id_for(cfg)
    test = data.test
    inputs, targets = test.inputs(), test.targets()
    tasks = cfg.sweep.tasks
    any_model = next(iter(models.values()))
    sem_draws, raw_draws = eval_draws(cfg, seed, test, any_model.cfg.max_total_symbols)
    kbs = {}
    if cfg.rag.enabled:
        kbs = {arm: build_kbs(m, data.public if len(data.public) else data.shards[0]) for arm, m in models.items()}
    records = []
    for arm in cfg.sweep.arms:
        model = models[arm]
        for snr in cfg.sweep.snr_grid:
            if arm == "baseline1_traditional":
                out = run_baseline1(model, inputs, snr, raw_draws, tasks)
            else:
                tx_kb, rx_kb = kbs.get(arm, (None, None))
                out = run_batch(
                    model, inputs, snr, cfg.sweep.budget, sem_draws, tasks,
                    tx_kb=tx_kb, rx_kb=rx_kb, tx_gate=cfg.rag.tx_gate, rx_gate=cfg.rag.rx_gate,
                    kb_top_k=cfg.rag.top_k,
                )
            values = task_metrics(out, targets, tasks)
            values["semantic"] = mean_iw_distortion(out["sv"], out["sv_hat"], out["scores"])
            for task, v in values.items():
                records.append(MetricRecord(run_id, seed, float(snr), arm, task, METRIC_FOR_TASK[task], v))
    return records


def sort_key(r: MetricRecord):
    return (r.run_id, str(r.seed), r.snr_db, r.arm, r.task, r.metric)


def summarize(records: Iterable[MetricRecord]) -> list[MetricRecord]:
    """Mean and sample std across seeds for every (snr, arm, task, metric) cell."""
    cells: dict[tuple, list[float]] = {}
    for r in records:
        if isinstance(r.seed, str):
            continue
        cells.setdefault((r.run_id, r.snr_db, r.arm, r.task, r.metric), []).append(r.value)
    out = []
    for (run_id, snr, arm, task, metric), vals in sorted(cells.items()):
        v = np.asarray(vals)
        std = float(v.std(ddof=1)) if v.size > 1 else 0.0
        out.append(MetricRecord(run_id, "mean", snr, arm, task, metric, float(v.mean())))
        out.append(MetricRecord(run_id, "std", snr, arm, task, metric, std))
    return out


def write_metrics_csv(path, records: Sequence[MetricRecord]):
    """Per-seed rows sorted canonically, then the summary rows."""
    rows = sorted((r for r in records if not isinstance(r.seed, str)), key=sort_key)
    lines = [HEADER] + [r.row() for r in rows] + [r.row() for r in sorted(summarize(rows), key=sort_key)]
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_metrics_csv(path) -> list[MetricRecord]:
    out = []
    with open(path) as f:
        header = f.readline().strip()
        if header != HEADER:
            raise ValueError(f"unexpected header {header!r}")
        for line in f:
            run_id, seed, snr, arm, task, metric, value = line.strip().split(",")
            seed_v: int | str = int(seed) if seed.lstrip("-").isdigit() else seed
            out.append(MetricRecord(run_id, seed_v, float(snr), arm, task, metric, float(value)))
    return out


def run_snr_sweep(
    cfg: ExperimentConfig,
    models_by_seed: dict[int, dict[str, MTSCModel]] | None = None,
    out_dir: str | None = None,
) -> list[MetricRecord]:
    """Evaluate every arm on the SNR grid for every seed.

    Arms missing from ``models_by_seed`` are trained first.
    """
    run_id = run_id_for(cfg)
    records = []
    for seed in cfg.sweep.seeds:
        data = make_data(cfg, seed)
        given = dict((models_by_seed or {}).get(seed, {}))
        missing = [a for a in cfg.sweep.arms if a not in given]
        if missing:
            given.update(train_arms(cfg, seed, data, missing))
        records.extend(evaluate_seed(cfg, seed, given, data, run_id))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), records)
    return records


# -- statistics ----------------------------------------------------------------


def confidence_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Student-t interval for the mean."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least two values")
    m = v.mean()
    half = stats.t.ppf(0.5 + level / 2, v.size - 1) * v.std(ddof=1) / np.sqrt(v.size)
    return float(m - half), float(m + half)


def welch_interval(a, b, level: float = 0.95) -> tuple[float, float]:
    """Welch interval for mean(a) - mean(b) with unequal variances."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se = np.sqrt(va + vb)
    diff = a.mean() - b.mean()
    if se == 0:
        return float(diff), float(diff)
    dof = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    half = stats.t.ppf(0.5 + level / 2, dof) * se
    return float(diff - half), float(diff + half)


def per_seed(records: Iterable[MetricRecord], arm: str, task: str) -> dict[float, dict[int, float]]:
    """snr -> seed -> value for one (arm, task)."""
    out: dict[float, dict[int, float]] = {}
    for r in records:
        if r.arm == arm and r.task == task and not isinstance(r.seed, str):
            out.setdefault(r.snr_db, {})[r.seed] = r.value
    return out


def mean_accuracy_by_seed(records: Iterable[MetricRecord], arm: str, tasks=ACCURACY_TASKS) -> dict[float, dict[int, float]]:
    """Average of the accuracy-style metrics (classify, VQA, caption BLEU-1)."""
    records = list(records)
    tables = [per_seed(records, arm, t) for t in tasks]
    out = {}
    for snr in tables[0]:
        out[snr] = {s: float(np.mean([tab[snr][s] for tab in tables])) for s in tables[0][snr]}
    return out
