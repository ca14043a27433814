"""Dependency-tree utilities: validation, LCA, sub-tree and shortest paths.

Trees are given as a per-token parent array where the root carries ``-1``.
Paths are returned as sorted tuples of token indices so the original word
order of the sentence is preserved.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

ROOT = -1


class TreeError(ValueError):
    """Raised when a parent array does not describe a single rooted tree."""

    def __init__(self, kind: str, detail: str = ""):
        self.kind = kind
        super().__init__(f"{kind}: {detail}" if detail else kind)


@dataclass(frozen=True)
class DepTree:
    heads: Tuple[int, ...]
    root: int
    labels: Optional[Tuple[str, ...]] = None

    def __len__(self):
        return len(self.heads)

    def parent(self, i: int) -> int:
        """Parent of ``i``; the root is its own parent."""
        p = self.heads[i]
        return i if p == ROOT else p

    def root_path(self, i: int) -> Tuple[int, ...]:
        """Nodes from ``i`` up to and including the root."""
        path = [i]
        while self.heads[path[-1]] != ROOT:
            path.append(self.heads[path[-1]])
        return tuple(path)

    def depth(self, i: int) -> int:
        return len(self.root_path(i)) - 1


def validate_tree(heads: Sequence[int], labels: Optional[Sequence[str]] = None) -> DepTree:
    """Check ``heads`` and build a :class:`DepTree`.

    Raises :class:`TreeError` with ``kind`` one of ``empty``, ``out_of_range``,
    ``multiple_roots``, ``cycle`` or ``label_length``.
    """
    n = len(heads)
    if n == 0:
        raise TreeError("empty", "no tokens")
    for i, h in enumerate(heads):
        if not isinstance(h, int) or isinstance(h, bool):
            raise TreeError("out_of_range", f"token {i} has non-integer parent {h!r}")
        if h != ROOT and not 0 <= h < n:
            raise TreeError("out_of_range", f"token {i} has parent {h} outside [0, {n})")
        if h == i:
            raise TreeError("cycle", f"token {i} is its own parent")
    roots = [i for i, h in enumerate(heads) if h == ROOT]
    if not roots:
        # with every parent in range, a rootless graph must contain a cycle
        raise TreeError("cycle", "no root; parent links form a cycle")
    if len(roots) > 1:
        raise TreeError("multiple_roots", f"roots at {roots}")
    if labels is not None and len(labels) != n:
        raise TreeError("label_length", f"{len(labels)} labels for {n} tokens")

    # every walk must reach the root within n steps
    state = [0] * n  # 0 unvisited, 1 on current walk, 2 reaches root
    state[roots[0]] = 2
    for start in range(n):
        walk = []
        node = start
        while state[node] == 0:
            state[node] = 1
            walk.append(node)
            node = heads[node]
        if state[node] == 1:
            raise TreeError("cycle", f"cycle through token {node}")
        for w in walk:
            state[w] = 2
    return DepTree(tuple(heads), roots[0], tuple(labels) if labels is not None else None)


def lca(tree: DepTree, i: int, j: int) -> int:
    ancestors = set(tree.root_path(i))
    for node in tree.root_path(j):
        if node in ancestors:
            return node
    raise AssertionError("validated trees always share the root")


def _segment_to(tree: DepTree, i: int, stop: int) -> list:
    path = [i]
    while path[-1] != stop:
        path.append(tree.heads[path[-1]])
    return path


def sdp(tree: DepTree, head_anchor: int, tail_anchor: int) -> Tuple[int, ...]:
    """Shortest dependency path between the anchors, in sentence order."""
    top = lca(tree, head_anchor, tail_anchor)
    nodes = set(_segment_to(tree, head_anchor, top)) | set(_segment_to(tree, tail_anchor, top))
    return tuple(sorted(nodes))


def stp(tree: DepTree, head_anchor: int, tail_anchor: int) -> Tuple[int, ...]:
    """Sub-tree path: the shortest path extended by the LCA's parent.

    When the LCA is the root, no extra node is added.
    """
    top = lca(tree, head_anchor, tail_anchor)
    nodes = set(_segment_to(tree, head_anchor, top)) | set(_segment_to(tree, tail_anchor, top))
    nodes.add(tree.parent(top))
    return tuple(sorted(nodes))


def entity_anchor(tree: DepTree, span: Tuple[int, int]) -> int:
    """Syntactic head of a half-open token span.

    The unique token whose parent lies outside the span; if there is no such
    token or more than one, the span's last token is used.
    """
    start, end = span
    inside = range(start, end)
    candidates = [i for i in inside if tree.heads[i] == ROOT or tree.heads[i] not in inside]
    if len(candidates) == 1:
        return candidates[0]
    return end - 1
