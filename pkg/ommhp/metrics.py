"""
Clustering and parameter-recovery metrics.
"""

import itertools
import logging
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import comb

from .errors import InvalidInputError
from .hawkes_model import ClusterParams, MixtureModel

logger = logging.getLogger(__name__)

EXHAUSTIVE_ALIGNMENT_LIMIT = 8


class ParamError(NamedTuple):
    """Relative errors of one estimated cluster against the truth"""
    base_rates: float
    amplitudes: float
    decays: Optional[float] = None

    @property
    def total(self) -> float:
        return self.base_rates + self.amplitudes + (self.decays or 0.0)


def contingency_table(labels_a: Sequence[int], labels_b: Sequence[int]) -> np.ndarray:
    """Counts of co-occurring labels; rows follow labels_a, columns labels_b"""
    _, rows = np.unique(np.asarray(labels_a), return_inverse=True)
    _, cols = np.unique(np.asarray(labels_b), return_inverse=True)
    table = np.zeros((rows.max() + 1, cols.max() + 1), dtype=np.int64)
    np.add.at(table, (rows, cols), 1)
    return table


def pair_count(counts: np.ndarray) -> int:
    """Exact number of unordered pairs within each count, summed"""
    return sum(comb(int(c), 2, exact=True) for c in counts[counts > 1])


def adjusted_rand_index(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    """
    Adjusted Rand index between two partitions

    Args:
        labels_a: Cluster label per item
        labels_b: Cluster label per item, same length

    Returns:
        ARI in [-1, 1]. When the expected and maximal pair counts coincide
        the index is 1.0 for identical partitions and 0.0 otherwise.

    Raises:
        InvalidInputError: If the lengths differ or there are fewer than 2 items
    """
    if len(labels_a) != len(labels_b):
        raise InvalidInputError(f"partitions differ in length ({len(labels_a)} vs {len(labels_b)})")
    n = len(labels_a)
    if n < 2:
        raise InvalidInputError("ARI needs at least two items")

    table = contingency_table(labels_a, labels_b)
    index = pair_count(table.ravel())
    sum_rows = pair_count(table.sum(axis=1))
    sum_cols = pair_count(table.sum(axis=0))
    total = comb(n, 2, exact=True)
    # (index - expected) / (maximum - expected), both scaled by 2 * total
    numerator = 2 * (index * total - sum_rows * sum_cols)
    denominator = (sum_rows + sum_cols) * total - 2 * sum_rows * sum_cols
    if denominator == 0:
        same = bool(np.all((table > 0).sum(axis=0) == 1) and np.all((table > 0).sum(axis=1) == 1))
        return 1.0 if same else 0.0
    return numerator / denominator


def relative_param_error(estimate: ClusterParams, truth: ClusterParams, include_decays: bool = False) -> ParamError:
    """
    Relative l2 error of base rates and Frobenius error of amplitudes (and decays)

    Raises:
        InvalidInputError: On mismatched dimensions or an all-zero truth block
    """
    if estimate.num_types != truth.num_types:
        raise InvalidInputError(f"cannot compare P={estimate.num_types} with P={truth.num_types}")

    def _relative(est: np.ndarray, ref: np.ndarray, name: str) -> float:
        norm = np.linalg.norm(ref)
        if norm == 0:
            raise InvalidInputError(f"true {name} block has zero norm")
        return float(np.linalg.norm(est - ref) / norm)

    return ParamError(
        base_rates=_relative(estimate.base_rates, truth.base_rates, "base rate"),
        amplitudes=_relative(estimate.amplitudes, truth.amplitudes, "amplitude"),
        decays=_relative(estimate.decays, truth.decays, "decay") if include_decays else None,
    )


def _best_permutation(cost: np.ndarray) -> Tuple[int, ...]:
    """perm[j] = estimated index matched to truth j, minimizing total cost"""
    k = cost.shape[0]
    if k <= EXHAUSTIVE_ALIGNMENT_LIMIT:
        best = min(itertools.permutations(range(k)), key=lambda perm: sum(cost[perm[j], j] for j in range(k)))
        return tuple(best)
    rows, cols = linear_sum_assignment(cost)
    perm = [0] * k
    for r, c in zip(rows, cols):
        perm[c] = int(r)
    return tuple(perm)


def align_clusters(
    estimate: Union[MixtureModel, Sequence[ClusterParams]],
    truth_params: Optional[Sequence[ClusterParams]] = None,
    assignments: Optional[Sequence[int]] = None,
    truth_labels: Optional[Sequence[int]] = None,
) -> Tuple[int, ...]:
    """
    Match estimated clusters to true clusters

    Either truth_params (minimize summed relative parameter error) or
    assignments plus truth_labels (maximize label agreement) must be given;
    parameters win when both are.

    Returns:
        A permutation perm with perm[j] the estimated cluster matched to true
        cluster j
    """
    clusters = list(estimate.clusters if isinstance(estimate, MixtureModel) else estimate)
    k = len(clusters)
    if k == 1:
        return (0,)

    if truth_params is not None:
        if len(truth_params) != k:
            raise InvalidInputError(f"cannot align {k} estimated clusters with {len(truth_params)} true ones")
        cost = np.array([[relative_param_error(est, ref).total for ref in truth_params] for est in clusters])
    elif assignments is not None and truth_labels is not None:
        if len(assignments) != len(truth_labels):
            raise InvalidInputError("assignments and labels differ in length")
        cost = np.zeros((k, k))
        for est, ref in zip(assignments, truth_labels):
            if 0 <= est < k and 0 <= ref < k:
                cost[est, ref] -= 1.0
    else:
        raise InvalidInputError("align_clusters needs truth parameters or truth labels")

    return _best_permutation(cost)


def aligned_errors(
    model: MixtureModel,
    truth: Sequence[ClusterParams],
    include_decays: bool = False,
) -> List[ParamError]:
    """Per-true-cluster errors after alignment"""
    perm = align_clusters(model, truth_params=truth)
    return [relative_param_error(model.clusters[perm[j]], ref, include_decays) for j, ref in enumerate(truth)]
