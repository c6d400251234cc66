"""Explainability-guided topological dropping for GCN training.

The library implements a two-layer GCN with exact reverse-mode gradients,
gradient-based saliency explanations with fidelity metrics, confidence-gated
explanation-biased node/edge dropping with the random baselines, and a
multi-seed experiment harness for node classification and link prediction.
"""

from .drop import (
    DropConfig,
    QuadrantCounts,
    SelectionCriterion,
    apply_criterion,
    confidence,
    fit_lambda,
    map_to_probabilities,
    quadrant_counts,
    random_drop_edge,
    random_drop_node,
    sample_edge_mask,
    sample_node_mask,
    select_candidates,
    yeo_johnson,
)
from .explain import (
    ExplainConfig,
    ExplanationSubgraph,
    SoftExplanation,
    accuracy_sufficiency,
    approx_saliency,
    exact_saliency,
    fidelity_sufficiency,
    harden,
    kl_divergence,
    kl_necessity,
)
from .gcn import (
    AdamState,
    ForwardTape,
    ModelParams,
    TrainConfig,
    adam_step,
    backward,
    forward,
    glorot_init,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    softmax_xent,
)
from .graph import (
    EdgeSplits,
    Graph,
    LabelsAndSplits,
    NormalizedAdjacency,
    apply_edge_mask,
    apply_node_mask,
    load_dataset,
    normalize_adjacency,
    save_dataset,
    split_edges_for_linkpred,
)
from .harness import (
    ExperimentConfig,
    MetricsTable,
    RunResult,
    SeedRecord,
    aggregate,
    emit_results,
    run_experiment,
    run_link_prediction,
    run_node_classification,
    run_sweep,
    train_node_once,
)
from .linkpred import auc, edge_confidence, encode, run_xai_drop_edge, score_pairs
from .synthetic import CitationSpec, SyntheticSpec, citation_benchmark, generate_ba_house

__version__ = "0.1.0"
