"""Prefix tree over candidate continuations, packed linearization, ancestry mask."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from hsd.tokens import TokenSeq

PREFIX_PARENT = -1  # parent sentinel for depth-1 nodes: they hang off the accepted prefix


class TreeSizeError(ValueError):
    """Packed tree exceeds the per-step token budget."""

    def __init__(self, size: int, limit: int):
        super().__init__(f"packed tree has {size} tokens, limit is {limit}")
        self.size = size
        self.limit = limit


@dataclass(eq=False)
class TreeNode:
    token: int | None
    parent: "TreeNode | None" = None
    depth: int = 0
    children: dict[int, "TreeNode"] = field(default_factory=dict)

    @property
    def path(self) -> TokenSeq:
        out = []
        node = self
        while node.parent is not None:
            out.append(node.token)
            node = node.parent
        return tuple(reversed(out))

    @property
    def next_tokens(self) -> frozenset[int]:
        return frozenset(self.children)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def child(self, token: int) -> "TreeNode":
        return self.children[token]


class PrefixTree:
    def __init__(self):
        self.root = TreeNode(token=None)
        self.nodes: list[TreeNode] = [self.root]

    @classmethod
    def build(cls, candidates: Iterable[Sequence[int]]) -> "PrefixTree":
        tree = cls()
        for cand in candidates:
            tree.insert(cand)
        return tree

    def insert(self, seq: Sequence[int]) -> TreeNode:
        node = self.root
        for tok in seq:
            nxt = node.children.get(tok)
            if nxt is None:
                nxt = TreeNode(token=int(tok), parent=node, depth=node.depth + 1)
                node.children[int(tok)] = nxt
                self.nodes.append(nxt)
            node = nxt
        return node

    def find(self, path: Sequence[int]) -> TreeNode | None:
        node = self.root
        for tok in path:
            node = node.children.get(tok)
            if node is None:
                return None
        return node

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes if n.is_leaf and n is not self.root]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class PackedTree:
    tokens: tuple[int, ...]
    parents: tuple[int, ...]
    nodes: tuple[TreeNode, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if len(self.tokens) != len(self.parents):
            raise ValueError("tokens and parents must have equal length")
        for i, p in enumerate(self.parents):
            if not (p == PREFIX_PARENT or 0 <= p < i):
                raise ValueError(f"position {i} has non-topological parent {p}")

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def empty(cls) -> "PackedTree":
        return cls((), ())

    def position_of(self, node: TreeNode) -> int:
        for i, n in enumerate(self.nodes):
            if n is node:
                return i
        raise KeyError("node not in packed tree")


@dataclass(frozen=True)
class AncestryMask:
    """allowed[i, j] is True iff packed position j is i itself or an ancestor of i.

    The accepted prefix is visible to every position and is not stored here;
    ``with_prefix`` expands to the full (query x key) attention matrix.
    """

    allowed: np.ndarray

    def __len__(self) -> int:
        return self.allowed.shape[0]

    def visible(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.allowed[i])

    def with_prefix(self, prefix_len: int) -> np.ndarray:
        size = self.allowed.shape[0]
        full = np.zeros((size, prefix_len + size), dtype=bool)
        full[:, :prefix_len] = True
        full[:, prefix_len:] = self.allowed
        return full

    @classmethod
    def from_parents(cls, parents: Sequence[int]) -> "AncestryMask":
        size = len(parents)
        allowed = np.zeros((size, size), dtype=bool)
        for i, p in enumerate(parents):
            if p != PREFIX_PARENT:
                allowed[i] = allowed[p]
            allowed[i, i] = True
        return cls(allowed)


def linearize(tree: PrefixTree) -> PackedTree:
    """Depth-first preorder, children visited in ascending token id."""
    tokens: list[int] = []
    parents: list[int] = []
    nodes: list[TreeNode] = []
    stack: list[tuple[TreeNode, int]] = [
        (tree.root.children[t], PREFIX_PARENT) for t in sorted(tree.root.children, reverse=True)
    ]
    while stack:
        node, parent_pos = stack.pop()
        pos = len(tokens)
        tokens.append(node.token)
        parents.append(parent_pos)
        nodes.append(node)
        for t in sorted(node.children, reverse=True):
            stack.append((node.children[t], pos))
    return PackedTree(tuple(tokens), tuple(parents), tuple(nodes))


def linearize_with_mask(
    tree: PrefixTree, max_tree_tokens: int | None = None
) -> tuple[PackedTree, AncestryMask]:
    size = len(tree) - 1
    if max_tree_tokens is not None and size > max_tree_tokens:
        raise TreeSizeError(size, max_tree_tokens)
    packed = linearize(tree)
    return packed, AncestryMask.from_parents(packed.parents)
