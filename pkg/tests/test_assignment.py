import itertools

import numpy as np
import pytest

from add_distill.assignment import (
    assignment_cost,
    foreground_query_mask,
    hungarian_solve,
    match_cost,
)
from add_distill.errors import DomainError
from oracles import brute_force_assignment


def test_match_cost_examples():
    perfect = match_cost([[0.0, 1.0]], [[1.0, 2.0]], [1], [[1.0, 2.0]])
    assert perfect[0, 0] == 0.0
    hand = match_cost([[0.5, 0.5]], [[0.0, 0.0]], [0], [[1.0, 1.0]], w_cls=1.0, w_box=1.0)
    assert hand[0, 0] == 2.5
    assert match_cost([[0.5, 0.5]] * 3, [[0.0]] * 3, [], np.zeros((0, 1))).shape == (3, 0)
    with pytest.raises(DomainError):
        match_cost([[1.0]], [[0.0]], [0], [[0.0]], w_cls=-1.0)


def test_diagonal_zero_matrix():
    c = np.ones((3, 3)) - np.eye(3)
    assert hungarian_solve(c) == [(0, 0), (1, 1), (2, 2)]


def test_square_and_rectangular_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        c = rng.random((4, 4))
        assert assignment_cost(c, hungarian_solve(c)) == pytest.approx(brute_force_assignment(c), abs=1e-12)
    c = rng.random((2, 3))
    pairs = hungarian_solve(c)
    assert len(pairs) == 2
    assert assignment_cost(c, pairs) == pytest.approx(brute_force_assignment(c), abs=1e-12)


def test_injective_and_covering():
    rng = np.random.default_rng(1)
    for _ in range(200):
        r, k = rng.integers(1, 8, size=2)
        pairs = hungarian_solve(rng.integers(0, 4, (r, k)).astype(float))
        rows, cols = [p[0] for p in pairs], [p[1] for p in pairs]
        assert len(set(rows)) == len(rows) == min(r, k)
        assert len(set(cols)) == len(cols)


def test_row_constant_does_not_change_assignment():
    rng = np.random.default_rng(2)
    for _ in range(100):
        c = rng.random((5, 5))
        shifted = c.copy()
        shifted[int(rng.integers(5))] += rng.uniform(-3, 3)
        assert hungarian_solve(shifted) == hungarian_solve(c)


def test_ties_break_lexicographically():
    assert hungarian_solve(np.zeros((3, 3))) == [(0, 0), (1, 1), (2, 2)]
    # two optimal assignments; the one giving row 0 the lower column wins
    c = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert hungarian_solve(c) == [(0, 0), (1, 1)]
    rng = np.random.default_rng(3)
    for _ in range(100):
        c = rng.integers(0, 3, (4, 4)).astype(float)
        best = brute_force_assignment(c)
        perms = [p for p in itertools.permutations(range(4)) if sum(c[i, p[i]] for i in range(4)) == best]
        assert [col for _, col in hungarian_solve(c)] == list(min(perms))


def test_empty_inputs():
    assert hungarian_solve(np.zeros((0, 3))) == []
    assert hungarian_solve(np.zeros((3, 0))) == []


def test_non_finite_rejected():
    with pytest.raises(DomainError):
        hungarian_solve([[np.inf, 1.0]])


def test_query_mask_examples():
    assert not foreground_query_mask([], 4).any()
    assert np.array_equal(foreground_query_mask([(0, 1), (3, 0)], 5), [1, 0, 0, 1, 0])
    assert foreground_query_mask(hungarian_solve(np.random.default_rng(0).random((3, 3))), 3).all()
    with pytest.raises(DomainError):
        foreground_query_mask([(5, 0)], 5)
