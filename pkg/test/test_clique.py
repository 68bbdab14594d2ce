import itertools

import numpy as np
import pytest

from rifl.clique import maximum_clique, maximum_clique_size
from rifl.core import majority_vote_set
from rifl.stats_kernel import RandomStream
from rifl.structs import VotingMatrix

FIGURE_ONE_EDGES = [
    (1, 2),
    (1, 3),
    (2, 3),
    (3, 4),
    (4, 5),
    (4, 6),
    (1, 5),
    (2, 5),
    (3, 5),
]


def _is_clique(h: VotingMatrix, vertices) -> bool:
    return all(h.h[a, b] for a, b in itertools.combinations(vertices, 2))


def _brute_force(h: VotingMatrix) -> tuple[int, ...]:
    for size in range(h.n_sites, 0, -1):
        for subset in itertools.combinations(range(h.n_sites), size):
            if _is_clique(h, subset):
                return subset
    return ()


def test_figure_one_graph():
    h = VotingMatrix.from_edges(6, FIGURE_ONE_EDGES)
    assert maximum_clique(h) == (0, 1, 2, 4)
    assert majority_vote_set(h) == (0, 1, 2, 3, 4)


def test_complete_graph():
    h = VotingMatrix(np.ones((5, 5), dtype=bool))
    assert maximum_clique(h) == (0, 1, 2, 3, 4)


def test_identity_graph():
    h = VotingMatrix(np.eye(4, dtype=bool))
    assert maximum_clique_size(h) == 1
    assert maximum_clique(h) == (0,)
    assert majority_vote_set(h) == ()


def test_random_graphs_match_exhaustive_search():
    for i in range(200):
        rng = RandomStream(2024, i).generator()
        n = int(rng.integers(3, 13))
        density = rng.uniform(0.2, 0.9)
        upper = np.triu(rng.random((n, n)) < density, k=1)
        h = VotingMatrix(upper | upper.T | np.eye(n, dtype=bool))
        found = maximum_clique(h)
        # the first clique in lexicographic order is the tie-break
        assert found == _brute_force(h)
        assert _is_clique(h, found)


def test_clique_inside_majority_set():
    for i in range(50):
        rng = RandomStream(99, i).generator()
        n = 9
        upper = np.triu(rng.random((n, n)) < 0.7, k=1)
        h = VotingMatrix(upper | upper.T | np.eye(n, dtype=bool))
        clique = maximum_clique(h)
        if len(clique) > n / 2:
            assert set(clique) <= set(majority_vote_set(h))


def test_rejects_asymmetric():
    h = np.eye(3, dtype=bool)
    h[0, 1] = True
    with pytest.raises(ValueError, match="symmetric"):
        VotingMatrix(h)
