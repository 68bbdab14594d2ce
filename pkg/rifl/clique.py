"""
Exact maximum clique search on small graphs (at most 64 sites).

Vertex sets are Python int bitsets. The search enumerates cliques in
lexicographic order of their sorted vertex tuples and only replaces the
incumbent on a strictly larger clique, so the first maximum clique met is the
lexicographically smallest one. Branches are pruned with a greedy colouring
bound.
"""

from rifl.structs import VotingMatrix

MAX_SITES = 64


def _lowest_bit(mask: int) -> int:
    return (mask & -mask).bit_length() - 1


def _colour_bound(candidates: int, adjacency: list[int]) -> int:
    """Number of colour classes in a greedy colouring of the candidate set,
    an upper bound on the size of any clique inside it."""
    colours = 0
    uncoloured = candidates
    while uncoloured:
        colours += 1
        available = uncoloured
        while available:
            v = _lowest_bit(available)
            uncoloured &= ~(1 << v)
            available &= ~(1 << v)
            available &= ~adjacency[v]
    return colours


def maximum_clique_of_masks(adjacency: list[int]) -> tuple[int, ...]:
    n = len(adjacency)
    if n > MAX_SITES:
        msg = f"Exact clique search supports at most {MAX_SITES} vertices, got {n}"
        raise ValueError(msg)
    best: list[int] = []

    def expand(clique: list[int], candidates: int):
        nonlocal best
        if not candidates:
            if len(clique) > len(best):
                best = list(clique)
            return
        if len(clique) + _colour_bound(candidates, adjacency) <= len(best):
            return
        remaining = candidates
        while remaining:
            if len(clique) + remaining.bit_count() <= len(best):
                return
            v = _lowest_bit(remaining)
            remaining &= remaining - 1
            clique.append(v)
            expand(clique, remaining & adjacency[v])
            clique.pop()

    expand([], (1 << n) - 1)
    return tuple(best)


def maximum_clique(h: VotingMatrix) -> tuple[int, ...]:
    """0-based vertex indices of the lexicographically smallest maximum clique."""
    return maximum_clique_of_masks(h.adjacency_masks())


def maximum_clique_size(h: VotingMatrix) -> int:
    return len(maximum_clique(h))
