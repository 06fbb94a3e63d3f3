"""Decoupled speculative verification over fixed drafts.

One verification step: take the last ``n`` accepted tokens as a reference
window, find every place it occurs in the drafts, collect what follows each
match, merge those continuations into a prefix tree, score the whole tree in
one packed call and walk it greedily with the log-ratio acceptance test. The
step ends by appending the accepted path plus the model's own argmax token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from hsd.models import PROB_FLOOR, NextTokenDist, ScoringContext, TargetModel
from hsd.tokens import EOS_ID, TokenSeq
from hsd.tree import PrefixTree, TreeNode, TreeSizeError, linearize_with_mask

PROB_CEIL = 1.0 - 1e-12


@dataclass(frozen=True)
class AlignParams:
    n: int = 3
    tau: float = 0.75
    depth_cap: int = 16
    max_tree_tokens: int = 256
    max_len: int = 2048

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must lie in (0, 1]")
        if self.depth_cap < 1:
            raise ValueError("depth_cap must be >= 1")
        if self.max_tree_tokens < 1:
            raise ValueError("max_tree_tokens must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")

    @property
    def exact(self) -> bool:
        return self.tau >= 1.0


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[TokenSeq, ...]
    n_matches: int = 0

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)


@dataclass(frozen=True)
class Decision:
    u_star: int
    u_hat: int
    ratio: float
    accepted: bool

    @property
    def token(self) -> int:
        """The accepted token, or the correction when rejected."""
        return self.u_star if self.accepted else self.u_hat


@dataclass
class StepRecord:
    a_i: int
    bonus: int
    packed_size: int
    candidates_found: int
    # diagnostics for the trace view; not part of the exported record
    window: TokenSeq = field(default=(), repr=False)
    n_matches: int = field(default=0, repr=False)
    decisions: tuple[Decision, ...] = field(default=(), repr=False)
    appended: TokenSeq = field(default=(), repr=False)
    u_hat: int | None = field(default=None, repr=False)
    degraded: bool = field(default=False, repr=False)

    @property
    def growth(self) -> int:
        return self.a_i + self.bonus

    def to_json(self, step: int) -> dict:
        return {
            "step": step,
            "a_i": self.a_i,
            "bonus": self.bonus,
            "packed_size": self.packed_size,
            "candidates_found": self.candidates_found,
        }


def reference_window(prefix: Sequence[int], n: int) -> TokenSeq:
    return tuple(prefix[-n:]) if len(prefix) >= n else tuple(prefix)


def find_matches(draft: Sequence[int], w: Sequence[int]) -> list[int]:
    """1-indexed start positions j with draft_{j:j+|w|-1} == w."""
    n = len(w)
    if n == 0:
        raise ValueError("reference window must be non-empty")
    draft = tuple(draft)
    w = tuple(w)
    first = w[0]
    return [j + 1 for j in range(len(draft) - n + 1) if draft[j] == first and draft[j : j + n] == w]


def extract_candidates(
    drafts: Iterable[Sequence[int]], w: Sequence[int], n: int, depth_cap: int
) -> CandidateSet:
    """Continuations ``draft_{j+n:L}`` after every window match, depth-capped and deduplicated.

    An empty window anchors each draft at its start (the whole draft is a
    candidate).
    """
    seen: dict[TokenSeq, None] = {}
    matches = 0
    for draft in drafts:
        draft = tuple(draft)
        L = len(draft)
        starts = [1] if n == 0 else find_matches(draft, w)
        matches += len(starts)
        for j in starts:
            if j + n <= L:
                cand = draft[j + n - 1 : min(L, j + n - 1 + depth_cap)]
                seen.setdefault(cand, None)
    return CandidateSet(tuple(seen), matches)


def accept_token(dist: NextTokenDist, next_set: Iterable[int], tau: float) -> Decision:
    """Greedy log-ratio test between the tree's best child and the global argmax.

    Ties in either argmax go to the lowest token id. ``tau >= 1`` accepts only
    exact agreement.
    """
    logprobs = dist.logprobs
    u_star = None
    for u in sorted(next_set):
        if u_star is None or logprobs[u] > logprobs[u_star]:
            u_star = u
    if u_star is None:
        raise ValueError("next_set must be non-empty")
    u_hat = dist.argmax()
    if u_hat == u_star:
        return Decision(u_star, u_hat, 1.0, True)
    p_hat = min(max(math.exp(logprobs[u_hat]), PROB_FLOOR), PROB_CEIL)
    p_star = min(max(math.exp(logprobs[u_star]), PROB_FLOOR), PROB_CEIL)
    ratio = math.log(p_hat) / math.log(p_star)
    accepted = ratio >= tau and tau < 1.0
    return Decision(u_star, u_hat, ratio, accepted)


def walk_tree(
    tree: PrefixTree, dist_of: Callable[[TreeNode], NextTokenDist], tau: float
) -> tuple[TreeNode, int, list[Decision]]:
    """Descend from the root while the acceptance test holds.

    Returns the final node, the token to append after it (correction on
    rejection, the model's argmax at a leaf) and the per-node decisions.
    """
    node = tree.root
    decisions = []
    while True:
        dist = dist_of(node)
        if node.is_leaf:
            return node, dist.argmax(), decisions
        decision = accept_token(dist, node.children, tau)
        decisions.append(decision)
        if not decision.accepted:
            return node, decision.u_hat, decisions
        node = node.children[decision.u_star]


def _truncate(candidates: Iterable[TokenSeq], depth: int) -> tuple[TokenSeq, ...]:
    seen: dict[TokenSeq, None] = {}
    for c in candidates:
        if depth > 0 and c[:depth]:
            seen.setdefault(c[:depth], None)
    return tuple(seen)


def build_packed(candidates: Sequence[TokenSeq], params: AlignParams, depth_cap: int):
    """Build and pack the tree, halving the depth on overflow until it fits.

    Raises TreeSizeError only when even a depth-1 tree is too large.
    """
    depth = depth_cap
    while True:
        tree = PrefixTree.build(_truncate(candidates, depth))
        try:
            packed, mask = linearize_with_mask(tree, params.max_tree_tokens)
            return tree, packed, mask
        except TreeSizeError:
            if depth <= 1:
                raise
            depth = max(1, depth // 2)


def verify_step(
    model: TargetModel,
    ctx: ScoringContext,
    prefix: Sequence[int],
    C: CandidateSet,
    params: AlignParams,
) -> tuple[TokenSeq, StepRecord, bool]:
    prefix = tuple(prefix)
    room = params.max_len - len(prefix)
    if room <= 0:
        raise ValueError("prefix already at max_len")
    depth = min(params.depth_cap, room)
    candidates = _truncate(C.candidates, depth)
    tree, packed, mask = build_packed(candidates, params, depth)
    dists = model.score_packed(ctx, prefix, packed, mask)
    index = {id(node): i + 1 for i, node in enumerate(packed.nodes)}
    index[id(tree.root)] = 0

    node, u_hat, decisions = walk_tree(tree, lambda v: dists[index[id(v)]], params.tau)
    accepted = node.path
    eos = u_hat == EOS_ID
    bonus = 0 if eos or len(prefix) + len(accepted) >= params.max_len else 1
    appended = accepted + ((u_hat,) if bonus else ())
    record = StepRecord(
        a_i=len(accepted),
        bonus=bonus,
        packed_size=len(packed) + 1,
        candidates_found=len(C),
        n_matches=C.n_matches,
        decisions=tuple(decisions),
        appended=appended,
        u_hat=u_hat,
    )
    return prefix + appended, record, eos


def spec_decode(
    model: TargetModel,
    ctx: ScoringContext,
    drafts: Iterable[Sequence[int]],
    params: AlignParams,
) -> tuple[TokenSeq, list[StepRecord]]:
    drafts = [tuple(d) for d in drafts if len(d)]
    prefix: TokenSeq = ()
    steps: list[StepRecord] = []
    while len(prefix) < params.max_len:
        w = reference_window(prefix, params.n)
        C = extract_candidates(drafts, w, len(w), params.depth_cap)
        prefix, record, eos = verify_step(model, ctx, prefix, C, params)
        record.window = w
        steps.append(record)
        if eos:
            break
    return prefix, steps
