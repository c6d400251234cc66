"""Confidence gating, probability biasing, and Bernoulli mask sampling.

The default pipeline gates nodes by prediction confidence, maps their
fidelity-sufficiency scores through a Yeo-Johnson transform fitted by
maximum likelihood, standardizes, and shifts the result onto a probability
scale centered at the base dropping rate ``p``. Everything outside the
candidate set keeps probability exactly ``p``, so the expected dropped
fraction stays ``p`` while poorly explained candidates are dropped more
often. Alternative selection criteria used for ablations live here too.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .graph import Graph, apply_edge_mask, apply_node_mask, entry_mask_from_pair_keep

__all__ = [
    "DropConfig",
    "SelectionCriterion",
    "QuadrantCounts",
    "confidence",
    "select_candidates",
    "yeo_johnson",
    "fit_lambda",
    "map_to_probabilities",
    "map_response_to_probabilities",
    "sample_node_mask",
    "sample_edge_mask",
    "random_drop_node",
    "random_drop_edge",
    "apply_criterion",
    "criterion_candidates",
    "criterion_needs_explanations",
    "quadrant_counts",
]

PROB_FLOOR = 0.01
PROB_CEIL = 0.99
MEAN_TOLERANCE = 0.02
RECENTER_ITERATIONS = 5

MAPPINGS = ("gaussian_yeo_johnson", "empirical_cdf", "uniform")


class SelectionCriterion(enum.Enum):
    """Which nodes (or edges) get biased dropping probabilities."""

    XAI_DROP = "xai_drop"
    RANDOM = "random"
    HIGH_CONFIDENCE = "high_confidence"
    LOW_CONFIDENCE = "low_confidence"
    LOW_CONF_POOR_XAI = "low_conf_poor_xai"
    HIGH_CONF_GOOD_XAI = "high_conf_good_xai"
    LOW_CONF_GOOD_XAI = "low_conf_good_xai"
    LOW_CONF_RANDOM = "low_conf_random"
    HIGH_CONF_RANDOM = "high_conf_random"
    POOR_XAI = "poor_xai"
    GOOD_XAI = "good_xai"


_XAI_CRITERIA = {
    SelectionCriterion.XAI_DROP,
    SelectionCriterion.POOR_XAI,
    SelectionCriterion.GOOD_XAI,
    SelectionCriterion.LOW_CONF_POOR_XAI,
    SelectionCriterion.HIGH_CONF_GOOD_XAI,
    SelectionCriterion.LOW_CONF_GOOD_XAI,
}

_RANDOM_RESPONSE_CRITERIA = {
    SelectionCriterion.LOW_CONF_RANDOM,
    SelectionCriterion.HIGH_CONF_RANDOM,
}


@dataclass(frozen=True)
class DropConfig:
    p: float = 0.5
    theta: float = 0.9
    mapping: str = "gaussian_yeo_johnson"
    criterion: SelectionCriterion = SelectionCriterion.XAI_DROP
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.p < 1):
            raise ValueError(f"dropping probability must be in (0, 1), got {self.p}")
        if not (0 <= self.theta <= 1):
            raise ValueError(f"confidence threshold must be in [0, 1], got {self.theta}")
        if self.mapping not in MAPPINGS:
            raise ValueError(f"unknown mapping {self.mapping!r}; choose from {MAPPINGS}")
        if not isinstance(self.criterion, SelectionCriterion):
            object.__setattr__(self, "criterion", SelectionCriterion(self.criterion))


@dataclass(frozen=True)
class QuadrantCounts:
    """Nodes bucketed by (confidence >= theta) x (fidelity >= threshold)."""

    hc_ge: int
    hc_pe: int
    lc_ge: int
    lc_pe: int

    @property
    def total(self) -> int:
        return self.hc_ge + self.hc_pe + self.lc_ge + self.lc_pe


def confidence(prob: np.ndarray) -> np.ndarray:
    """Per-row maximum class probability."""
    return prob.max(axis=1)


def select_candidates(conf: np.ndarray, theta: float) -> np.ndarray:
    """Indices with confidence >= theta."""
    return np.flatnonzero(conf >= theta)


# ---------------------------------------------------------------------------
# Yeo-Johnson transform and maximum-likelihood lambda fit
# ---------------------------------------------------------------------------


def yeo_johnson(x, lam: float):
    """Four-branch Yeo-Johnson power transform, vectorized over ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input to yeo_johnson")
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    if lam != 0:
        out[pos] = (np.power(x[pos] + 1.0, lam) - 1.0) / lam
    else:
        out[pos] = np.log1p(x[pos])
    neg = ~pos
    if lam != 2:
        out[neg] = -(np.power(1.0 - x[neg], 2.0 - lam) - 1.0) / (2.0 - lam)
    else:
        out[neg] = -np.log1p(-x[neg])
    return out if out.ndim else float(out)


def _yj_log_likelihood(x: np.ndarray, lam: float) -> float:
    """Gaussian log-likelihood of the transformed sample, Jacobian included."""
    t = yeo_johnson(x, lam)
    var = t.var()
    if var <= 0:
        return -np.inf
    n = len(x)
    jacobian = (lam - 1.0) * np.sum(np.sign(x) * np.log1p(np.abs(x)))
    return -0.5 * n * np.log(var) + jacobian


def fit_lambda(xs, lower: float = -5.0, upper: float = 5.0, tol: float = 1e-4):
    """Maximize the transform's normality log-likelihood by golden-section
    search over ``[lower, upper]``.

    Returns ``(lam, degenerate)``; a constant input cannot be normalized, so
    it yields ``(1.0, True)`` (identity transform).
    """
    xs = np.asarray(xs, dtype=np.float64)
    if not np.all(np.isfinite(xs)):
        raise ValueError("non-finite input to fit_lambda")
    if len(xs) < 2 or np.all(xs == xs[0]):
        return 1.0, True
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lower, upper
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _yj_log_likelihood(xs, c)
    fd = _yj_log_likelihood(xs, d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _yj_log_likelihood(xs, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _yj_log_likelihood(xs, d)
    return float(0.5 * (a + b)), False


# ---------------------------------------------------------------------------
# Response -> dropping-probability mappings
# ---------------------------------------------------------------------------


def _recenter(probs: np.ndarray, p: float) -> np.ndarray:
    """Shift clamped probabilities by a constant so their mean returns to p."""
    for _ in range(RECENTER_ITERATIONS):
        gap = p - probs.mean()
        if abs(gap) < 1e-12:
            break
        probs = np.clip(probs + gap, PROB_FLOOR, PROB_CEIL)
    return probs


def map_response_to_probabilities(
    response: np.ndarray,
    candidates: np.ndarray,
    num_elements: int,
    p: float,
    mapping: str,
) -> np.ndarray:
    """Turn per-candidate response values (higher = drop more) into a full
    probability vector with non-candidates at exactly ``p``.

    gaussian_yeo_johnson: standardize the ML-fitted transform of the response
    and spread it around ``p`` with scale ``min(p, 1-p)/3``; empirical_cdf:
    ``2 p rank/(n+1)``. Both clamp to [0.01, 0.99] and re-center so the
    candidate mean stays at ``p``.
    """
    if mapping not in MAPPINGS:
        raise ValueError(f"unknown mapping {mapping!r}")
    probs = np.full(num_elements, float(p))
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0 or mapping == "uniform":
        return probs
    response = np.asarray(response, dtype=np.float64)
    if response.shape != candidates.shape:
        raise ValueError(
            f"response shape {response.shape} != candidates shape {candidates.shape}"
        )
    if not np.all(np.isfinite(response)):
        raise ValueError("non-finite response value")
    if mapping == "gaussian_yeo_johnson":
        lam, degenerate = fit_lambda(response)
        if degenerate:
            return probs
        phi = yeo_johnson(response, lam)
        sd = phi.std()
        z = (phi - phi.mean()) / sd if sd > 0 else np.zeros_like(phi)
        spread = min(p, 1.0 - p) / 3.0
        biased = np.clip(p + spread * z, PROB_FLOOR, PROB_CEIL)
    else:  # empirical_cdf
        ranks = rankdata(response)
        n = len(response)
        biased = np.clip(2.0 * p * ranks / (n + 1.0), PROB_FLOOR, PROB_CEIL)
    probs[candidates] = _recenter(biased, p)
    return probs


def map_to_probabilities(
    fsuf: np.ndarray,
    candidates: np.ndarray,
    num_elements: int,
    p: float,
    mapping: str = "gaussian_yeo_johnson",
) -> np.ndarray:
    """Map per-candidate fidelity sufficiency to dropping probabilities.

    The response variable is ``1 - fsuf``: lower sufficiency means higher
    dropping probability. An empty candidate set yields the uniform vector.
    """
    fsuf = np.asarray(fsuf, dtype=np.float64)
    return map_response_to_probabilities(1.0 - fsuf, candidates, num_elements, p, mapping)


# ---------------------------------------------------------------------------
# Bernoulli mask sampling and uniform baselines
# ---------------------------------------------------------------------------


def sample_node_mask(probs: np.ndarray, rng) -> np.ndarray:
    """Keep node v with probability 1 - probs[v]; one draw per node."""
    return rng.random(len(probs)) >= probs


def sample_edge_mask(g: Graph, pair_probs: np.ndarray, rng) -> np.ndarray:
    """One Bernoulli draw per undirected pair, mirrored to both directions."""
    pair_probs = np.asarray(pair_probs, dtype=np.float64)
    if pair_probs.shape != (g.num_edges,):
        raise ValueError(
            f"edge probabilities have shape {pair_probs.shape}, expected ({g.num_edges},)"
        )
    pair_keep = rng.random(g.num_edges) >= pair_probs
    return entry_mask_from_pair_keep(g, pair_keep)


def random_drop_node(g: Graph, p: float, rng) -> Graph:
    """DropNode baseline: isolate each node independently with probability p."""
    keep = sample_node_mask(np.full(g.num_nodes, float(p)), rng)
    return apply_node_mask(g, keep)


def random_drop_edge(g: Graph, p: float, rng) -> Graph:
    """DropEdge baseline: remove each undirected edge independently with
    probability p."""
    mask = sample_edge_mask(g, np.full(g.num_edges, float(p)), rng)
    return apply_edge_mask(g, mask)


# ---------------------------------------------------------------------------
# Selection criteria (ablations) and quadrant tracking
# ---------------------------------------------------------------------------


def criterion_needs_explanations(criterion: SelectionCriterion) -> bool:
    return criterion in _XAI_CRITERIA


def criterion_candidates(
    criterion: SelectionCriterion, conf: np.ndarray, theta: float
) -> np.ndarray:
    """The element set whose probabilities the criterion biases."""
    n = len(conf)
    if criterion == SelectionCriterion.RANDOM:
        return np.empty(0, dtype=np.int64)
    if criterion in (
        SelectionCriterion.XAI_DROP,
        SelectionCriterion.HIGH_CONF_GOOD_XAI,
        SelectionCriterion.HIGH_CONF_RANDOM,
    ):
        return select_candidates(conf, theta)
    if criterion in (
        SelectionCriterion.LOW_CONF_POOR_XAI,
        SelectionCriterion.LOW_CONF_GOOD_XAI,
        SelectionCriterion.LOW_CONF_RANDOM,
    ):
        return np.flatnonzero(conf < theta)
    # Confidence-only and explanation-only criteria bias every element.
    return np.arange(n, dtype=np.int64)


def apply_criterion(
    criterion: SelectionCriterion,
    conf: np.ndarray,
    fsuf: np.ndarray | None,
    theta: float,
    p: float,
    mapping: str = "gaussian_yeo_johnson",
    rng=None,
) -> np.ndarray:
    """Dropping probabilities for any selection criterion.

    ``fsuf`` holds fidelity sufficiency for (at least) the criterion's
    candidate elements; it may be None for criteria that ignore explanations.
    Criteria with a random response consume ``rng``.
    """
    criterion = SelectionCriterion(criterion)
    n = len(conf)
    cand = criterion_candidates(criterion, conf, theta)
    if criterion == SelectionCriterion.RANDOM or len(cand) == 0:
        return np.full(n, float(p))
    if criterion in _RANDOM_RESPONSE_CRITERIA:
        if rng is None:
            raise ValueError(f"{criterion.value} requires an rng")
        response = rng.random(len(cand))
    elif criterion == SelectionCriterion.HIGH_CONFIDENCE:
        response = conf[cand]
    elif criterion == SelectionCriterion.LOW_CONFIDENCE:
        response = 1.0 - conf[cand]
    else:
        if fsuf is None:
            raise ValueError(f"{criterion.value} requires fidelity sufficiency scores")
        fsuf = np.asarray(fsuf, dtype=np.float64)
        if criterion in (
            SelectionCriterion.XAI_DROP,
            SelectionCriterion.POOR_XAI,
            SelectionCriterion.LOW_CONF_POOR_XAI,
        ):
            response = 1.0 - fsuf[cand]
        else:  # GOOD_XAI variants drop the well-explained elements more.
            response = fsuf[cand]
    return map_response_to_probabilities(response, cand, n, p, mapping)


def quadrant_counts(
    conf: np.ndarray,
    fsuf: np.ndarray,
    theta: float,
    fsuf_threshold: float | None = None,
) -> QuadrantCounts:
    """Bucket nodes into HC/LC x GE/PE; threshold defaults to the median
    fidelity sufficiency of the epoch."""
    if fsuf_threshold is None:
        fsuf_threshold = float(np.median(fsuf))
    hc = conf >= theta
    ge = fsuf >= fsuf_threshold
    return QuadrantCounts(
        hc_ge=int(np.sum(hc & ge)),
        hc_pe=int(np.sum(hc & ~ge)),
        lc_ge=int(np.sum(~hc & ge)),
        lc_pe=int(np.sum(~hc & ~ge)),
    )
