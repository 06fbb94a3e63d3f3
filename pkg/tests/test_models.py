from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import PAGE, scripted
from hsd.models import (
    ContextError,
    NGramModel,
    NextTokenDist,
    ScoringContext,
    ScriptedModel,
    greedy_decode,
    scripted_resync,
    sequence_logprob,
)
from hsd.tokens import EOS_ID
from hsd.tree import PrefixTree, linearize_with_mask


def test_scripted_packed_single_node():
    m = scripted((5, 6, 7))
    packed, mask = linearize_with_mask(PrefixTree.build([(6,)]))
    dists = m.score_packed(PAGE, (5,), packed, mask)
    assert len(dists) == 2
    assert dists[1].argmax() == 7
    assert dists[1].prob(7) == pytest.approx(0.9)


def test_empty_packed_gives_root_only():
    m = scripted((5, 6, 7))
    packed, mask = linearize_with_mask(PrefixTree.build([]))
    dists = m.score_packed(PAGE, (), packed, mask)
    assert len(dists) == 1
    assert dists[0].argmax() == 5


def test_sibling_distributions_condition_on_own_path():
    # two siblings hang off the same prefix; their next-token distributions
    # condition on prefix+own token, so the on-script sibling sees the script
    m = scripted((5, 6, 7))
    packed, mask = linearize_with_mask(PrefixTree.build([(6,), (9,)]))
    d6, d9 = m.score_packed(PAGE, (5,), packed, mask)[1:]
    assert d6.argmax() == 7
    assert d9.argmax() == EOS_ID
    # both share the root distribution, which conditions on the prefix alone
    root = m.score_packed(PAGE, (5,), packed, mask)[0]
    assert root == m.next_dist(PAGE, (5,))


def test_scripted_greedy():
    m = scripted((5, 6, 7))
    assert greedy_decode(m, PAGE, 100) == (5, 6, 7)
    assert greedy_decode(m, PAGE, 2) == (5, 6)


def test_scripted_probabilities():
    m = scripted((5, 6, 7), vocab_size=20, p_top=0.9)
    d = m.next_dist(PAGE, ())
    assert d.prob(5) == pytest.approx(0.9)
    assert d.prob(6) == pytest.approx(0.1 / 19)
    assert np.exp(d.logprobs).sum() == pytest.approx(1.0)


@pytest.mark.parametrize(
    "g,prefix,k,expected",
    [
        ((5, 6, 7, 8), (9, 5, 6, 7), 3, 3),
        ((5, 6, 7), (1, 2, 3), 3, None),
        ((5, 6, 5, 6, 9), (5, 6), 2, 4),
    ],
)
def test_resync_examples(g, prefix, k, expected):
    assert scripted_resync(g, prefix, k) == expected


def test_resync_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(300):
        g = tuple(rng.integers(4, 8, size=rng.integers(1, 10)))
        prefix = tuple(rng.integers(4, 8, size=rng.integers(0, 8)))
        k = int(rng.integers(1, 4))
        # oracle: enumerate every (length, j) suffix match
        best = None
        for j in range(1, len(g) + 1):
            for length in range(1, min(j, len(prefix)) + 1):
                if g[j - length : j] == prefix[len(prefix) - length :]:
                    if best is None or (length, j) > best:
                        best = (length, j)
        expected = best[1] if best is not None and best[0] >= k else None
        assert scripted_resync(g, prefix, k) == expected


def test_scripted_next_after_resync():
    m = scripted((5, 6, 7, 8))
    assert m.next_dist(PAGE, (9, 5, 6, 7)).argmax() == 8
    assert m.next_dist(PAGE, (9, 9, 9)).argmax() == EOS_ID


def test_unknown_doc_raises():
    m = scripted((5,))
    with pytest.raises(ContextError):
        m.next_dist(ScoringContext.page("nope"), ())


def test_region_and_span_contexts():
    m = ScriptedModel(50)
    m.add_scripts("d", (5, 6, 3, 7, 8), [(5, 6), (7, 8)])
    assert greedy_decode(m, ScoringContext("d", region=2), 10) == (7, 8)
    assert greedy_decode(m, ScoringContext("d", region=1, span=(1, 3)), 10) == (6, 7)
    with pytest.raises(ContextError):
        m.next_dist(ScoringContext("d", region=3), ())


def test_sequence_logprob_sums():
    m = scripted((5, 6), vocab_size=20, p_top=0.8)
    assert sequence_logprob(m, PAGE, (5, 6)) == pytest.approx(2 * math.log(0.8))


def test_ngram_alternation():
    # corpus "a b a b a b": after a comes b and after b comes a, with the
    # larger count on each (hand-counted bigram/trigram tables)
    a, b = 4, 5
    m = NGramModel(6, order=3, delta=0.1)
    m.train([(a, b, a, b, a, b)])
    out = greedy_decode(m, ScoringContext(None), 8)
    assert out == (a, b, a, b, a, b, a, b)


def test_ngram_counts_by_hand():
    a, b = 4, 5
    m = NGramModel(6, order=2, delta=0.5)
    m.train([(a, b, a, b, a, b)])
    d = m.next_dist(ScoringContext(None), (a,))
    # context (a,): b seen 3 times; the five non-PAD tokens get delta each
    assert d.prob(b) == pytest.approx(3.5 / (3 + 0.5 * 5))
    assert d.prob(0) == pytest.approx(1e-12, rel=1e-6)  # PAD sits at the probability floor


def test_ngram_script_weight_sharpens_view():
    a, b, c = 4, 5, 6
    m = NGramModel(8, order=2, delta=0.1, script_weight=10.0)
    m.train([(a, b) * 5])
    m.add_scripts("d", (a, c), [(a, c)])
    assert m.next_dist(ScoringContext(None), (a,)).argmax() == b
    assert m.next_dist(ScoringContext.page("d"), (a,)).argmax() == c


def test_ngram_packed_matches_flat():
    m = NGramModel(10, order=3)
    m.train([(4, 5, 6, 4, 5, 7, 8, 9)])
    tree = PrefixTree.build([(5, 6, 4), (5, 7), (9,)])
    packed, mask = linearize_with_mask(tree)
    ctx = ScoringContext(None)
    dists = m.score_packed(ctx, (4,), packed, mask)
    for i, node in enumerate(packed.nodes):
        assert dists[i + 1] == m.next_dist(ctx, (4,) + node.path)


def test_dist_from_probs_argmax_tie_low_id():
    d = NextTokenDist.from_probs(np.array([0.0, 0.4, 0.4, 0.2]))
    assert d.argmax() == 1


def test_scripted_from_json(tmp_path, vocab):
    import json

    spec = {"doc_id": "s", "page_text": "a title <sep> the page", "p_top": 0.8, "resync_min": 2,
            "regions": [{"region_index": 2, "text": "the page"}, {"region_index": 1, "text": "a title"}]}
    (tmp_path / "m.json").write_text(json.dumps(spec))
    m = ScriptedModel.from_json(tmp_path / "m.json", vocab)
    assert vocab.decode(greedy_decode(m, ScoringContext.page("s"), 20)) == "a title <sep> the page"
    assert vocab.decode(greedy_decode(m, ScoringContext("s", region=1), 20)) == "a title"
    assert m.p_top == 0.8 and m.resync_min == 2
