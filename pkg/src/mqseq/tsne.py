"""Exact 2-component t-SNE over the embedding matrix, O(N^2) per iteration.

Per-point Gaussian bandwidths are found by binary search so every conditional
neighbour distribution hits the target perplexity; the low-dimensional layout
is optimized by momentum gradient descent on KL(P || Q) with early
exaggeration. Everything is seeded and deterministic.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationFailure, NumericalDivergence, TooFewPoints

EXAGGERATION_ITERATIONS = 250
INIT_STD = 1e-4
Q_FLOOR = 1e-12
SIGMA_SEARCH_STEPS = 50
SIGMA_SEARCH_TOL = 1e-5  # on log2 perplexity


@dataclass(frozen=True)
class TsneConfig:
    components: int = 2
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    seed: int = 42
    max_points: int | None = None

    def __post_init__(self):
        if self.components != 2:
            raise ValueError("only 2-component projections are supported")
        if self.iterations < EXAGGERATION_ITERATIONS:
            raise ValueError(f"iterations must be >= {EXAGGERATION_ITERATIONS}")
        if self.perplexity < 1:
            raise ValueError("perplexity must be >= 1")

    def validate_for(self, n: int) -> None:
        if self.perplexity > (n - 1) / 3:
            raise ValueError(f"perplexity {self.perplexity} too large for {n} points "
                             f"(must be <= (N-1)/3)")


@dataclass
class AffinityMatrix:
    """Symmetric joint neighbour distribution: non-negative, zero diagonal, sums to 1."""

    P: np.ndarray

    def __post_init__(self):
        p = self.P
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError(f"affinity matrix must be square, got {p.shape}")
        if (p < 0).any() or np.diag(p).any():
            raise ValueError("affinities must be non-negative with a zero diagonal")
        if abs(p.sum() - 1.0) > 1e-8:
            raise ValueError(f"affinities must sum to 1, got {p.sum()!r}")

    @property
    def n(self) -> int:
        return self.P.shape[0]


@dataclass
class Projection:
    ids: list[str]
    coords: np.ndarray  # N x 2
    labels: np.ndarray  # N subject indices
    kl_history: list[float] = field(default_factory=list)


def pairwise_sq_distances(X: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances; cancellation negatives clamped to 0."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewPoints(f"need at least 2 points, got {X.shape}")
    sq = (X * X).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    d = np.maximum(d, 0.0)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def _row_entropy_bits(dist_row: np.ndarray, sigma: float) -> tuple[float, np.ndarray]:
    """Shannon entropy (bits) and probabilities of one conditional distribution."""
    shifted = dist_row - dist_row.min()
    weights = np.exp(-shifted / (2.0 * sigma * sigma))
    total = weights.sum()
    if total <= 0 or not np.isfinite(total):
        return np.nan, weights
    p = weights / total
    nz = p > 0
    entropy_nats = -(p[nz] * np.log(p[nz])).sum()
    return entropy_nats / np.log(2.0), p


def calibrate_sigmas(distances: np.ndarray, perplexity: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-point bandwidths hit the target perplexity via binary search on sigma.

    A row whose search interval collapses before any usable distribution is
    found falls back to exactly uniform; its sigma is NaN so callers can
    surface a CalibrationFailure without aborting the whole projection.
    """
    n = distances.shape[0]
    if perplexity > n - 1:
        raise ValueError(f"perplexity {perplexity} exceeds N-1 = {n - 1}")
    target = np.log2(perplexity)
    sigmas = np.ones(n)
    conditional = np.zeros((n, n))
    others = ~np.eye(n, dtype=bool)

    for i in range(n):
        row = distances[i][others[i]]
        sigma, lo, hi = 1.0, 0.0, np.inf
        best_p = None
        converged = False
        for _ in range(SIGMA_SEARCH_STEPS):
            entropy, p = _row_entropy_bits(row, sigma)
            if np.isfinite(entropy):
                best_p = p
                if abs(entropy - target) <= SIGMA_SEARCH_TOL:
                    converged = True
                    break
            if not np.isfinite(entropy) or entropy > target:
                hi = sigma  # too flat: shrink the bandwidth
            else:
                lo = sigma
            sigma = (lo + hi) / 2.0 if np.isfinite(hi) else sigma * 2.0
            if sigma <= 0 or not np.isfinite(sigma) or hi - lo == 0:
                break
        if not converged and best_p is None:
            # degenerate row (e.g. all-identical points): uniform fallback
            best_p = np.full(n - 1, 1.0 / (n - 1))
            sigma = np.nan
        sigmas[i] = sigma
        conditional[i][others[i]] = best_p

    return sigmas, conditional


def joint_affinities(conditional: np.ndarray) -> AffinityMatrix:
    """Symmetrize the conditionals: P_ij = (p_j|i + p_i|j) / 2N."""
    n = conditional.shape[0]
    return AffinityMatrix(P=(conditional + conditional.T) / (2.0 * n))


def _q_from_coords(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Student-t kernel weights and the normalized Q (floored at 1e-12)."""
    sq = (Y * Y).sum(axis=1)
    kernel = 1.0 / (1.0 + np.maximum(sq[:, None] + sq[None, :] - 2.0 * (Y @ Y.T), 0.0))
    np.fill_diagonal(kernel, 0.0)
    q = np.maximum(kernel / kernel.sum(), Q_FLOOR)
    np.fill_diagonal(q, 0.0)
    return kernel, q


def kl_divergence(P: AffinityMatrix | np.ndarray, Q: np.ndarray) -> float:
    """KL(P || Q) over off-diagonal pairs, with 0 * log(0/q) = 0."""
    p = P.P if isinstance(P, AffinityMatrix) else P
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / Q[mask])).sum())


def tsne_gradient(P: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic KL gradient 4 * sum_j (P_ij - Q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2)."""
    kernel, q = _q_from_coords(Y)
    m = (P - q) * kernel
    grad = 4.0 * (m.sum(axis=1)[:, None] * Y - m @ Y)
    return grad, q


def tsne_optimize(P: AffinityMatrix, config: TsneConfig,
                  ids: list[str] | None = None,
                  labels: np.ndarray | None = None) -> Projection:
    """Momentum gradient descent on KL(P || Q) from a tiny seeded Gaussian init.

    The affinities are multiplied by the exaggeration factor for the first 250
    iterations; momentum switches 0.5 -> 0.8 at iteration 250. Coordinates are
    recentered to zero mean every iteration, and the KL recorded per iteration
    is always against the un-exaggerated P.

    The perplexity bound is a calibration concern, so it is not re-checked
    here; any valid affinity matrix can be optimized (including N = 2).
    """
    n = P.n
    rng = np.random.default_rng(config.seed)
    Y = rng.standard_normal((n, config.components)) * INIT_STD
    velocity = np.zeros_like(Y)
    kl_history: list[float] = []

    p_true = P.P
    p_exaggerated = p_true * config.early_exaggeration

    for iteration in range(1, config.iterations + 1):
        p_work = p_exaggerated if iteration <= EXAGGERATION_ITERATIONS else p_true
        grad, q = tsne_gradient(p_work, Y)
        kl_history.append(kl_divergence(p_true, q))

        momentum = config.momentum_start if iteration < EXAGGERATION_ITERATIONS \
            else config.momentum_final
        velocity = momentum * velocity - config.learning_rate * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
        if not np.isfinite(Y).all():
            raise NumericalDivergence(iteration)

    return Projection(
        ids=list(ids) if ids is not None else [str(i) for i in range(n)],
        coords=Y,
        labels=np.asarray(labels) if labels is not None else np.zeros(n, dtype=np.int64),
        kl_history=kl_history,
    )


def stratified_subsample(labels: np.ndarray, max_points: int, seed: int) -> np.ndarray:
    """Seeded per-class proportional subsample of exactly max_points indices."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n <= max_points:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    quotas = counts * max_points / n
    alloc = np.floor(quotas).astype(np.int64)
    # distribute the remainder by largest fractional part, index order on ties
    remainder = max_points - alloc.sum()
    order = np.argsort(-(quotas - alloc), kind="stable")
    alloc[order[:remainder]] += 1
    chosen = []
    for cls, take in zip(classes, alloc):
        members = np.flatnonzero(labels == cls)
        chosen.append(rng.choice(members, size=take, replace=False))
    return np.sort(np.concatenate(chosen))


def project_embeddings(X: np.ndarray, ids: list[str], labels: np.ndarray,
                       config: TsneConfig) -> Projection:
    """Distance -> calibration -> joint affinities -> optimization, end to end.

    Calibration fallbacks are surfaced as warnings, never as aborts.
    """
    labels = np.asarray(labels)
    if config.max_points is not None and X.shape[0] > config.max_points:
        keep = stratified_subsample(labels, config.max_points, config.seed)
        X = X[keep]
        ids = [ids[i] for i in keep]
        labels = labels[keep]
    config.validate_for(X.shape[0])
    distances = pairwise_sq_distances(np.asarray(X, dtype=np.float64))
    sigmas, conditional = calibrate_sigmas(distances, config.perplexity)
    for i in np.flatnonzero(~np.isfinite(sigmas)):
        warnings.warn(str(CalibrationFailure(int(i))), RuntimeWarning, stacklevel=2)
    affinities = joint_affinities(conditional)
    return tsne_optimize(affinities, config, ids=ids, labels=labels)


def write_projection_csv(projection: Projection, subject_names: list[str],
                         path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "x", "y", "subject_index", "subject_name"])
        for rec_id, (x, y), label in zip(projection.ids, projection.coords,
                                         projection.labels):
            writer.writerow([rec_id, repr(float(x)), repr(float(y)), int(label),
                             subject_names[int(label)]])


def write_kl_history(projection: Projection, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for value in projection.kl_history:
            f.write(f"{value!r}\n")
