"""Hand keypoint tree and the two-pass message schedule.

Keypoint layout (0-based): 0 is the wrist, finger ``f`` in 0..4 occupies
indices ``4f+1 .. 4f+4`` ordered from the palm outwards.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

NUM_KEYPOINTS = 21
NUM_FINGERS = 5
WRIST = 0
# wrist -> middle-finger base joint; defines the upright direction
REFERENCE_KEYPOINT = 9


class TreeError(ValueError):
    """Raised when an edge list does not describe a tree."""


@dataclass(frozen=True)
class SkeletonTree:
    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    root: int = 0
    _adjacency: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.num_nodes
        if n < 1:
            raise TreeError("a tree needs at least one node")
        if not 0 <= self.root < n:
            raise TreeError(f"root {self.root} outside [0, {n})")
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        adj: list[set[int]] = [set() for _ in range(n)]
        for a, b in edges:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise TreeError(f"invalid edge ({a}, {b})")
            if b in adj[a]:
                raise TreeError(f"duplicate edge ({a}, {b})")
            adj[a].add(b)
            adj[b].add(a)
        if len(edges) != n - 1:
            raise TreeError(f"{len(edges)} edges for {n} nodes: graph has a cycle or is disconnected")
        seen = {self.root}
        queue = deque([self.root])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if len(seen) != n:
            raise TreeError("graph is disconnected (and therefore contains a cycle)")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_adjacency", tuple(tuple(sorted(s)) for s in adj))

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._adjacency[i]

    def degree(self, i: int) -> int:
        return len(self._adjacency[i])

    def children(self, i: int) -> tuple[int, ...]:
        """Children of ``i`` when the tree hangs from ``root``, ascending."""
        parent = self.parents()[i]
        return tuple(v for v in self._adjacency[i] if v != parent)

    def parents(self) -> dict[int, int | None]:
        parents: dict[int, int | None] = {self.root: None}
        queue = deque([self.root])
        while queue:
            u = queue.popleft()
            for v in self._adjacency[u]:
                if v not in parents:
                    parents[v] = u
                    queue.append(v)
        return parents

    def path_length(self, a: int, b: int) -> int:
        dist = {a: 0}
        queue = deque([a])
        while queue:
            u = queue.popleft()
            if u == b:
                return dist[u]
            for v in self._adjacency[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        raise TreeError(f"no path between {a} and {b}")

    def diameter(self) -> int:
        return max(self.path_length(a, b) for a in range(self.num_nodes) for b in range(self.num_nodes))


def build_default_hand_tree() -> SkeletonTree:
    edges = []
    for f in range(NUM_FINGERS):
        chain = [WRIST] + [4 * f + k for k in range(1, 5)]
        edges.extend(zip(chain[:-1], chain[1:]))
    return SkeletonTree(NUM_KEYPOINTS, tuple(edges), root=WRIST)


def finger_of(k: int) -> int | None:
    """Finger index of keypoint ``k``; ``None`` for the wrist."""
    return None if k == WRIST else (k - 1) // 4


def message_schedule(tree: SkeletonTree) -> tuple[tuple[int, int], ...]:
    """Leaf-to-root sends followed by root-to-leaf sends.

    Children are visited in ascending id order so the schedule is reproducible.
    """
    if not isinstance(tree, SkeletonTree):
        tree = SkeletonTree(*tree)
    upward: list[tuple[int, int]] = []
    downward: list[tuple[int, int]] = []

    # iterative walks so long chains never hit the recursion limit
    stack: list[tuple[int, int | None, bool]] = [(tree.root, None, False)]
    while stack:
        node, parent, expanded = stack.pop()
        if expanded:
            if parent is not None:
                upward.append((node, parent))
            continue
        stack.append((node, parent, True))
        kids = [v for v in tree.neighbors(node) if v != parent]
        for v in reversed(kids):
            stack.append((v, node, False))

    pre: list[tuple[int, int | None]] = [(tree.root, None)]
    while pre:
        node, parent = pre.pop()
        if parent is not None:
            downward.append((parent, node))
        kids = [v for v in tree.neighbors(node) if v != parent]
        for v in reversed(kids):
            pre.append((v, node))
    return tuple(upward + downward)
