"""評価と追跡で共通に使うマッチング (スコア順の貪欲法と線形割当)"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from perception.exceptions import Infeasible, InvariantError


@dataclass(frozen=True)
class CostMatrix:
    """rows x cols のコスト行列。``forbidden`` が True の組は割り当てない"""

    costs: np.ndarray
    forbidden: np.ndarray | None = None

    def __post_init__(self):
        costs = np.array(self.costs, dtype=np.float64)
        if costs.ndim != 2:
            raise InvariantError(f'Cost matrix must be 2-D, got shape {costs.shape}')
        if self.forbidden is None:
            forbidden = np.zeros(costs.shape, dtype=bool)
        else:
            forbidden = np.array(self.forbidden, dtype=bool)
        if forbidden.shape != costs.shape:
            raise InvariantError(
                f'forbidden mask shape {forbidden.shape} differs from costs {costs.shape}'
            )
        allowed = costs[~forbidden]
        if not np.all(np.isfinite(allowed)) or np.any(allowed < 0):
            raise InvariantError('Allowed costs must be finite and non-negative')
        costs[forbidden] = 0.0
        object.__setattr__(self, 'costs', costs)
        object.__setattr__(self, 'forbidden', forbidden)

    @classmethod
    def gated(cls, distances, gate: float) -> CostMatrix:
        """gate を超える組を禁止したコスト行列"""
        distances = np.asarray(distances, dtype=np.float64)
        return cls(distances, ~(distances <= gate))

    @property
    def shape(self) -> tuple[int, int]:
        return self.costs.shape

    def with_infinity(self) -> np.ndarray:
        costs = self.costs.copy()
        costs[self.forbidden] = np.inf
        return costs


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int], ...] = ()
    unmatched_rows: tuple[int, ...] = ()
    unmatched_cols: tuple[int, ...] = ()

    @classmethod
    def from_pairs(cls, pairs, n_rows: int, n_cols: int) -> Matching:
        pairs = tuple(sorted((int(r), int(c)) for r, c in pairs))
        rows = {r for r, _ in pairs}
        cols = {c for _, c in pairs}
        if len(rows) != len(pairs) or len(cols) != len(pairs):
            raise InvariantError('A row or column appears in more than one pair')
        return cls(
            pairs,
            tuple(r for r in range(n_rows) if r not in rows),
            tuple(c for c in range(n_cols) if c not in cols),
        )

    def __len__(self):
        return len(self.pairs)

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)

    def cost(self, costs: CostMatrix | np.ndarray) -> float:
        matrix = costs.costs if isinstance(costs, CostMatrix) else np.asarray(costs)
        return float(sum(matrix[r, c] for r, c in self.pairs))


def _as_matrix(distances, n_rows: int) -> np.ndarray:
    distances = np.asarray(distances, dtype=np.float64)
    if distances.ndim != 2:
        distances = distances.reshape(n_rows, -1)
    return distances


def greedy_order(scores, distances: np.ndarray) -> list[int]:
    """スコアの降順。同点は最近傍 GT までの距離、次に入力順で並べる"""
    scores = np.asarray(scores, dtype=np.float64)
    distances = _as_matrix(distances, len(scores))
    if distances.shape[1]:
        nearest = distances.min(axis=1)
    else:
        nearest = np.zeros(len(scores))
    # lexsort は最後のキーが第 1 キー
    return np.lexsort((np.arange(len(scores)), nearest, -scores)).tolist()


def greedy_match_matrix(scores, distances, gate: float) -> Matching:
    """距離行列 (予測 x GT) に対する貪欲マッチング (gate 以下の組のみ)"""
    scores = np.asarray(scores, dtype=np.float64)
    distances = _as_matrix(distances, len(scores))
    n_pred, n_gt = distances.shape

    available = np.ones(n_gt, dtype=bool)
    pairs = []
    for i in greedy_order(scores, distances):
        if not available.any():
            break
        candidates = np.where(available & (distances[i] <= gate), distances[i], np.inf)
        j = int(np.argmin(candidates))
        if np.isfinite(candidates[j]):
            pairs.append((i, j))
            available[j] = False
    return Matching.from_pairs(pairs, n_pred, n_gt)


def greedy_match(
    predictions: Sequence,
    ground_truths: Sequence,
    distance_fn: Callable,
    gate: float,
    score_fn: Callable = lambda p: p.score,
) -> Matching:
    """スコアの高い予測から順に、gate 以内で最も近い未割当の GT と対応付ける"""
    distances = np.array(
        [[distance_fn(p, g) for g in ground_truths] for p in predictions], dtype=np.float64
    ).reshape(len(predictions), len(ground_truths))
    scores = [score_fn(p) for p in predictions]
    return greedy_match_matrix(scores, distances, gate)


def hungarian(costs: CostMatrix) -> Matching:
    """総コスト最小の完全マッチング (min(rows, cols) 組)"""
    n_rows, n_cols = costs.shape
    if n_rows == 0 or n_cols == 0:
        return Matching.from_pairs([], n_rows, n_cols)
    try:
        rows, cols = linear_sum_assignment(costs.with_infinity())
    except ValueError as e:
        raise Infeasible(f'No complete matching of size {min(n_rows, n_cols)}: {e}')
    return Matching.from_pairs(zip(rows, cols), n_rows, n_cols)


def partial_assignment(costs: CostMatrix, unmatched_cost: float | None = None) -> Matching:
    """行・列が未割当のまま残ってよい最適割当

    未割当 1 つにつき ``unmatched_cost`` を払う拡大行列 (n+m) x (m+n) を解く。
    既定値 (許可されたコストの総和 + 1) では、組数が最大のものの中でコスト最小になる。
    """
    n_rows, n_cols = costs.shape
    if n_rows == 0 or n_cols == 0:
        return Matching.from_pairs([], n_rows, n_cols)
    if unmatched_cost is None:
        unmatched_cost = float(costs.costs[~costs.forbidden].sum()) + 1.0

    size = n_rows + n_cols
    augmented = np.full((size, size), np.inf)
    augmented[:n_rows, :n_cols] = costs.with_infinity()
    augmented[:n_rows, n_cols:][np.diag_indices(n_rows)] = unmatched_cost
    augmented[n_rows:, :n_cols][np.diag_indices(n_cols)] = unmatched_cost
    augmented[n_rows:, n_cols:] = 0.0

    rows, cols = linear_sum_assignment(augmented)
    pairs = [(r, c) for r, c in zip(rows, cols) if r < n_rows and c < n_cols]
    return Matching.from_pairs(pairs, n_rows, n_cols)


def maximum_weight_matching(weights, allowed=None) -> Matching:
    """選んだ組の重みの総和が最大になるマッチング (許可された組のみ)"""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or 0 in weights.shape:
        return Matching.from_pairs([], *np.atleast_2d(weights).shape[:2])
    allowed = np.ones(weights.shape, dtype=bool) if allowed is None else np.asarray(allowed)
    ceiling = max(float(weights[allowed].max(initial=0.0)), 1.0)
    # コスト ceiling - w、未割当 ceiling / 2 で総コスト = 定数 - sum(w)
    costs = CostMatrix(np.where(allowed, ceiling - weights, 0.0), ~allowed)
    return partial_assignment(costs, ceiling / 2.0)
