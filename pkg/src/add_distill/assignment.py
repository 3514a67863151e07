"""Hungarian matching of teacher predictions to ground truth and the query mask it induces."""
from __future__ import annotations

import numpy as np

from .backend import kernels as _k
from .errors import DomainError
from .tensor_core import as_tensor

DEFAULT_W_CLS = 1.0
DEFAULT_W_BOX = 5.0


def match_cost(pred_probs, pred_boxes, gt_labels, gt_boxes, w_cls=DEFAULT_W_CLS, w_box=DEFAULT_W_BOX):
    """``cost[q, g] = w_cls * (1 - p_q(class_g)) + w_box * |box_q - box_g|_1``.

    ``pred_probs`` is (N_q, n_classes), ``pred_boxes`` (N_q, B), ``gt_labels``
    integer class indices (G,), ``gt_boxes`` (G, B).
    """
    if w_cls < 0 or w_box < 0:
        raise DomainError(f"cost weights must be non-negative, got {w_cls}, {w_box}")
    probs = as_tensor(pred_probs, 2)
    boxes = as_tensor(pred_boxes, 2)
    labels = np.asarray(gt_labels, dtype=np.intp)
    if labels.size == 0:
        return np.zeros((probs.shape[0], 0))
    gt_boxes = as_tensor(gt_boxes, 2)
    cls_cost = 1.0 - probs[:, labels]
    box_cost = np.abs(boxes[:, None, :] - gt_boxes[None, :, :]).sum(axis=2)
    return w_cls * cls_cost + w_box * box_cost


def _lexicographic_refine(tight, match):
    """Lexicographically smallest perfect matching inside the tight-edge graph.

    ``match[r]`` is a perfect matching using only tight edges. Rows are fixed
    in order; each takes the smallest column that still admits a perfect
    matching of the remaining rows.
    """
    n = len(match)
    owner = [0] * n
    for r, c in enumerate(match):
        owner[c] = r
    adj = [np.flatnonzero(tight[r]).tolist() for r in range(n)]

    def augment(row, fixed_upto, seen):
        # find a new column for `row` among unfixed rows' tight edges
        for c in adj[row]:
            if seen[c]:
                continue
            seen[c] = True
            r2 = owner[c]
            if r2 == -1 or (r2 > fixed_upto and augment(r2, fixed_upto, seen)):
                match[row] = c
                owner[c] = row
                return True
        return False

    for r in range(n):
        for c in adj[r]:
            if c >= match[r]:
                break
            old = match[r]
            r2 = owner[c]
            if r2 < r:
                continue
            snapshot = (list(match), list(owner))
            owner[old] = -1
            match[r] = c
            owner[c] = r
            seen = [False] * n
            seen[c] = True
            if augment(r2, r, seen):
                break
            match[:], owner[:] = snapshot
    return match


def hungarian_solve(cost) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment covering ``min(R, C)`` pairs.

    Among optimal assignments the result is the lexicographically smallest
    column-per-row sequence of the zero-padded square problem, which for ties
    favours low rows taking low columns. Returned pairs are sorted by row.
    """
    c = as_tensor(cost, 2)
    rows, cols = c.shape
    if rows == 0 or cols == 0:
        return []
    if not np.all(np.isfinite(c)):
        raise DomainError("cost matrix has non-finite entries")
    n = max(rows, cols)
    sq = np.zeros((n, n))
    sq[:rows, :cols] = c
    match, u, v = _k.hungarian_square(sq)
    reduced = sq - u[:, None] - v[None, :]
    tol = 1e-9 * max(1.0, float(np.abs(sq).max()))
    refined = _lexicographic_refine(np.abs(reduced) <= tol, [int(m) for m in match])

    def total(m):
        return sum(sq[r, m[r]] for r in range(n))

    # the tolerance may admit near-tight edges; never trade optimality for order
    if total(refined) > total(match):
        refined = [int(m) for m in match]
    return [(r, refined[r]) for r in range(rows) if refined[r] < cols]


def assignment_cost(cost, pairs) -> float:
    c = as_tensor(cost, 2)
    return float(sum(c[r, k] for r, k in pairs))


def foreground_query_mask(assignment, n_q: int) -> np.ndarray:
    """Binary vector with ones at the assigned teacher-query (row) indices."""
    mask = np.zeros(n_q)
    for r, _ in assignment:
        if not 0 <= r < n_q:
            raise DomainError(f"assigned query {r} outside [0, {n_q})")
        mask[r] = 1.0
    return mask
