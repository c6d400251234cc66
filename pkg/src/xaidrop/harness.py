"""Experiment orchestration: multi-seed training runs, aggregation, sweeps,
and CSV/markdown result emission.

A node-classification run executes, per epoch: forward on all nodes ->
confidence -> candidate gate -> batch saliency -> hardening -> per-candidate
fidelity sufficiency -> dropping probabilities -> Bernoulli node mask ->
masked adjacency (renormalized) -> one training step. Validation and test
always evaluate on the full adjacency. Everything is deterministic given
(config, seed): identical invocations produce byte-identical results.csv.
Wall-clock times go to a separate timings file so they never break that
contract.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .drop import (
    DropConfig,
    QuadrantCounts,
    apply_criterion,
    confidence,
    criterion_candidates,
    criterion_needs_explanations,
    quadrant_counts,
    sample_node_mask,
)
from .explain import (
    ExplainConfig,
    approx_saliency,
    harden,
    kl_divergence,
    node_explanation_report,
)
from .gcn import (
    ModelParams,
    TrainConfig,
    accuracy,
    adam_step,
    backward,
    forward,
    glorot_init,
    init_adam,
    predict_proba,
    softmax,
    softmax_xent,
    xent_grad,
)
from .graph import (
    Graph,
    LabelsAndSplits,
    apply_edge_mask,
    apply_node_mask,
    load_dataset,
    normalize_adjacency,
    split_edges_for_linkpred,
)
from .linkpred import edge_explanation_report, run_xai_drop_edge
from .synthetic import SyntheticSpec, citation_benchmark, generate_ba_house

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "SeedRecord",
    "RunResult",
    "MetricsTable",
    "train_node_once",
    "run_node_classification",
    "run_link_prediction",
    "run_experiment",
    "aggregate",
    "run_sweep",
    "emit_results",
]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "node_classification"
    data_dir: str | None = None
    synthetic: SyntheticSpec | None = None
    citation_seed: int | None = None  # use the built-in citation benchmark
    train: TrainConfig = field(default_factory=TrainConfig)
    drop: DropConfig | None = field(default_factory=DropConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str | None = None
    label: str = ""
    # Link-prediction split settings (one fixed split shared by all seeds).
    val_frac: float = 0.1
    test_frac: float = 0.2
    neg_ratio: float = 1.0
    split_seed: int = 0
    # Final explanation metrics are the expensive part; optional.
    eval_xai_metrics: bool = True
    track_quadrants: bool = True

    def __post_init__(self):
        if self.task not in ("node_classification", "link_prediction"):
            raise ConfigError(f"unknown task {self.task!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        sources = sum(
            x is not None for x in (self.data_dir, self.synthetic, self.citation_seed)
        )
        if sources != 1:
            raise ConfigError(
                "exactly one of data_dir, synthetic, citation_seed must be set"
            )

    def run_label(self) -> str:
        if self.label:
            return self.label
        if self.drop is None:
            return "baseline"
        return self.drop.criterion.value

    def load_data(self):
        if self.data_dir is not None:
            return load_dataset(self.data_dir)
        if self.synthetic is not None:
            return generate_ba_house(self.synthetic)
        return citation_benchmark(self.citation_seed)


@dataclass
class SeedRecord:
    seed: int
    test_metric: float
    val_metric: float
    best_epoch: int
    epochs_run: int
    quadrants: list[QuadrantCounts]
    mean_drop_prob: np.ndarray
    wall_seconds: float
    accuracy_sufficiency: float | None = None
    mean_kl_sufficiency: float | None = None
    mean_kl_necessity: float | None = None
    params: ModelParams | None = None  # best-validation model, for checkpoints

    def metrics(self) -> dict[str, float]:
        out = {
            "test_metric": self.test_metric,
            "val_metric": self.val_metric,
            "best_epoch": float(self.best_epoch),
            "epochs_run": float(self.epochs_run),
        }
        for name in ("accuracy_sufficiency", "mean_kl_sufficiency", "mean_kl_necessity"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


@dataclass
class RunResult:
    task: str
    label: str
    records: list[SeedRecord]

    def mean(self, metric: str = "test_metric") -> float:
        return float(np.mean([r.metrics()[metric] for r in self.records]))

    def same_outcome(self, other: "RunResult") -> bool:
        """Bitwise equality of everything except wall-clock time."""
        if self.task != other.task or len(self.records) != len(other.records):
            return False
        for a, b in zip(self.records, other.records):
            if a.seed != b.seed or a.metrics() != b.metrics():
                return False
            if a.quadrants != b.quadrants:
                return False
            if not np.array_equal(a.mean_drop_prob, b.mean_drop_prob):
                return False
        return True


@dataclass
class MetricsTable:
    """Sample mean and standard deviation (n-1 denominator) per metric."""

    label: str
    num_seeds: int
    rows: dict[str, tuple[float, float]]

    @staticmethod
    def from_records(label: str, records: list[SeedRecord]) -> "MetricsTable":
        keys = records[0].metrics().keys()
        rows = {}
        for key in keys:
            values = np.array([r.metrics()[key] for r in records], dtype=np.float64)
            std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            rows[key] = (float(values.mean()), std)
        return MetricsTable(label=label, num_seeds=len(records), rows=rows)


def aggregate(result: RunResult) -> MetricsTable:
    if not result.records:
        raise ValueError("no seed records to aggregate")
    return MetricsTable.from_records(result.label, result.records)


# ---------------------------------------------------------------------------
# Node classification
# ---------------------------------------------------------------------------


def _fidelity_on_subgraph(params, g, x, prob_full, soft, k):
    """Per-node fidelity sufficiency against the hardened subgraph of ``soft``."""
    sub = harden(soft, g, k)
    adj_exp = normalize_adjacency(apply_edge_mask(g, sub.entry_mask))
    prob_exp = predict_proba(params, adj_exp, x)
    return 1.0 - kl_divergence(prob_full, prob_exp)


def train_node_once(
    graph: Graph,
    x: np.ndarray,
    ls: LabelsAndSplits,
    train_cfg: TrainConfig,
    drop_cfg: DropConfig | None,
    explain_cfg: ExplainConfig,
    seed: int,
    eval_xai_metrics: bool = True,
    track_quadrants: bool = True,
) -> SeedRecord:
    """One seeded training run of the node-classification pipeline."""
    started = time.perf_counter()
    rng = np.random.default_rng([seed, drop_cfg.seed if drop_cfg is not None else 0])
    adj_full = normalize_adjacency(graph)
    params = glorot_init(rng, x.shape[1], train_cfg.hidden_dim, ls.num_classes)
    state = init_adam(params, train_cfg)
    k = explain_cfg.retention_fraction

    best_val = -np.inf
    best_params = params.copy()
    best_epoch = -1
    patience_left = train_cfg.patience
    quadrants: list[QuadrantCounts] = []
    prob_sum = np.zeros(graph.num_nodes)
    epochs_run = 0

    for epoch in range(train_cfg.epochs):
        epochs_run = epoch + 1
        try:
            logits, tape = forward(params, adj_full, x)
            prob = softmax(logits)
            conf = confidence(prob)

            if track_quadrants:
                soft_all = approx_saliency(
                    params, adj_full, x, np.arange(graph.num_nodes), tape=tape
                )
                fsuf_track = _fidelity_on_subgraph(params, graph, x, prob, soft_all, k)
                theta_q = drop_cfg.theta if drop_cfg is not None else 0.9
                quadrants.append(quadrant_counts(conf, fsuf_track, theta_q))

            if drop_cfg is None:
                adj_train = adj_full
            else:
                cand = criterion_candidates(drop_cfg.criterion, conf, drop_cfg.theta)
                fsuf = None
                if criterion_needs_explanations(drop_cfg.criterion) and len(cand):
                    soft_c = approx_saliency(params, adj_full, x, cand, tape=tape)
                    fsuf = _fidelity_on_subgraph(params, graph, x, prob, soft_c, k)
                probs = apply_criterion(
                    drop_cfg.criterion, conf, fsuf, drop_cfg.theta, drop_cfg.p,
                    drop_cfg.mapping, rng,
                )
                prob_sum += probs
                keep = sample_node_mask(probs, rng)
                adj_train = normalize_adjacency(apply_node_mask(graph, keep))

            logits_t, tape_t = forward(params, adj_train, x)
            _, prob_t = softmax_xent(logits_t, ls.labels, ls.train_mask)
            grads, _ = backward(tape_t, xent_grad(prob_t, ls.labels, ls.train_mask))
            params, state = adam_step(params, grads, state)
        except (ValueError, FloatingPointError) as exc:
            raise RuntimeError(f"epoch {epoch}: {exc}") from exc

        if adj_full.masked:
            raise RuntimeError("evaluation adjacency was built from a masked graph")
        prob_eval = predict_proba(params, adj_full, x)
        val_acc = accuracy(prob_eval, ls.labels, ls.val_mask)
        if val_acc > best_val:
            best_val = val_acc
            best_params = params.copy()
            best_epoch = epoch
            patience_left = train_cfg.patience
        else:
            patience_left -= 1
            if patience_left == 0:
                break

    if best_epoch < 0:  # epochs == 0: report the untrained model
        best_params = params
        best_val = accuracy(predict_proba(params, adj_full, x), ls.labels, ls.val_mask)

    prob_final = predict_proba(best_params, adj_full, x)
    record = SeedRecord(
        seed=seed,
        test_metric=accuracy(prob_final, ls.labels, ls.test_mask),
        val_metric=float(best_val),
        best_epoch=best_epoch,
        epochs_run=epochs_run,
        quadrants=quadrants,
        mean_drop_prob=prob_sum / max(epochs_run, 1),
        wall_seconds=0.0,
        params=best_params,
    )
    if eval_xai_metrics:
        report = node_explanation_report(
            best_params, graph, x, np.flatnonzero(ls.test_mask), k
        )
        record.accuracy_sufficiency = report["accuracy_sufficiency"]
        record.mean_kl_sufficiency = report["mean_kl_sufficiency"]
        record.mean_kl_necessity = report["mean_kl_necessity"]
    record.wall_seconds = time.perf_counter() - started
    return record


def run_node_classification(cfg: ExperimentConfig) -> RunResult:
    graph, x, ls = cfg.load_data()
    records = [
        train_node_once(
            graph, x, ls, cfg.train, cfg.drop, cfg.explain, seed,
            eval_xai_metrics=cfg.eval_xai_metrics,
            track_quadrants=cfg.track_quadrants,
        )
        for seed in cfg.seeds
    ]
    return RunResult(task=cfg.task, label=cfg.run_label(), records=records)


# ---------------------------------------------------------------------------
# Link prediction
# ---------------------------------------------------------------------------


def run_link_prediction(cfg: ExperimentConfig) -> RunResult:
    graph, x, _ = cfg.load_data()
    splits = split_edges_for_linkpred(
        graph, cfg.val_frac, cfg.test_frac, cfg.neg_ratio, cfg.split_seed
    )
    records = []
    for seed in cfg.seeds:
        started = time.perf_counter()
        out = run_xai_drop_edge(
            splits, x, cfg.train, cfg.drop,
            explain_k=cfg.explain.retention_fraction,
            seed=seed, neg_ratio=cfg.neg_ratio,
            track_quadrants=cfg.track_quadrants,
        )
        record = SeedRecord(
            seed=seed,
            test_metric=out["test_metric"],
            val_metric=out["val_metric"],
            best_epoch=out["best_epoch"],
            epochs_run=out["epochs_run"],
            quadrants=out["quadrants"],
            mean_drop_prob=out["mean_drop_prob"],
            wall_seconds=0.0,
            params=out["params"],
        )
        if cfg.eval_xai_metrics:
            report = edge_explanation_report(
                out["params"], splits, x, cfg.explain.retention_fraction
            )
            record.accuracy_sufficiency = report["accuracy_sufficiency"]
            record.mean_kl_sufficiency = report["mean_kl_sufficiency"]
            record.mean_kl_necessity = report["mean_kl_necessity"]
        record.wall_seconds = time.perf_counter() - started
        records.append(record)
    return RunResult(task=cfg.task, label=cfg.run_label(), records=records)


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    if cfg.task == "node_classification":
        return run_node_classification(cfg)
    return run_link_prediction(cfg)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def run_sweep(cfg: ExperimentConfig, axis: str, values) -> list[tuple[float, MetricsTable]]:
    """Repeat the experiment for each value of ``axis`` ('theta' or 'p'),
    constant seeds; returns (value, aggregated table) pairs."""
    if axis not in ("theta", "p"):
        raise ConfigError(f"sweep axis must be 'theta' or 'p', got {axis!r}")
    if cfg.drop is None:
        raise ConfigError("sweeps need a drop configuration")
    out = []
    for value in values:
        drop = replace(cfg.drop, **{axis: float(value)})
        sub = replace(cfg, drop=drop, label=f"{cfg.run_label()}[{axis}={value}]")
        out.append((float(value), aggregate(run_experiment(sub))))
    return out


def write_sweep_csv(path, axis: str, sweep_rows: list[tuple[float, MetricsTable]]):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([axis, "metric", "mean", "std"])
        for value, table in sweep_rows:
            for metric, (mean, std) in table.rows.items():
                writer.writerow([repr(value), metric, repr(mean), repr(std)])


# ---------------------------------------------------------------------------
# Result files
# ---------------------------------------------------------------------------


def emit_results(results: list[RunResult], out_dir) -> dict[str, Path]:
    """Write results.csv, summary.md, quadrants.csv, drop_prob_histogram.csv
    (all deterministic) plus timings.csv (wall clock, excluded from the
    determinism contract)."""
    if not results:
        raise ValueError("no results to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / fname for name, fname in (
        ("results", "results.csv"),
        ("summary", "summary.md"),
        ("quadrants", "quadrants.csv"),
        ("histogram", "drop_prob_histogram.csv"),
        ("timings", "timings.csv"),
    )}

    with paths["results"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "seed", "metric", "value"])
        for result in results:
            for record in result.records:
                for metric, value in record.metrics().items():
                    writer.writerow([result.label, record.seed, metric, repr(value)])

    with paths["summary"].open("w") as fh:
        fh.write(f"# Results ({results[0].task})\n\n")
        metric_names = list(results[0].records[0].metrics().keys())
        fh.write("| run | " + " | ".join(metric_names) + " |\n")
        fh.write("|" + "---|" * (len(metric_names) + 1) + "\n")
        for result in results:
            table = aggregate(result)
            cells = [
                f"{table.rows[m][0]:.4f} ± {table.rows[m][1]:.4f}" if m in table.rows else "-"
                for m in metric_names
            ]
            fh.write(f"| {result.label} | " + " | ".join(cells) + " |\n")

    with paths["quadrants"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "seed", "epoch", "hc_ge", "hc_pe", "lc_ge", "lc_pe"])
        for result in results:
            for record in result.records:
                for epoch, q in enumerate(record.quadrants):
                    writer.writerow(
                        [result.label, record.seed, epoch, q.hc_ge, q.hc_pe, q.lc_ge, q.lc_pe]
                    )

    with paths["histogram"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "seed", "element", "mean_drop_probability"])
        for result in results:
            for record in result.records:
                for element, value in enumerate(record.mean_drop_prob):
                    writer.writerow([result.label, record.seed, element, repr(float(value))])

    with paths["timings"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "seed", "wall_seconds"])
        for result in results:
            for record in result.records:
                writer.writerow([result.label, record.seed, f"{record.wall_seconds:.3f}"])

    return paths
