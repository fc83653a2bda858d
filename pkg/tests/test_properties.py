"""Randomised invariants, driven by hypothesis."""
import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from specvoc import harness
from specvoc.alignment import CurriculumConfig, DistillConfig, curriculum_weights, distill_loss
from specvoc.cache import ArcCache
from specvoc.checks import (ReferenceArc, enumerate_round, random_distill_instance, random_pair, reduced_vocab,
                            total_variation)
from specvoc.models import DraftModel, Featurizer, LowRankAdapter, TargetModel, softmax
from specvoc.retrieval import CandidateConfig, GraphThresholds, MipsIndex, build_graph, form_candidates
from specvoc.retrieval.mips import augment_rows
from specvoc.vocab import ActiveVocab, StaticVocab, build_static, coverage

seeds = st.integers(0, 2**31 - 1)
quick = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def gaussian_draft(rng, V, d):
    feat = Featurizer(rng.normal(size=(V, d)), 2)
    return DraftModel(feat, rng.normal(size=(V, d)), LowRankAdapter(d, 1, 1.0, rng))


@quick
@given(seeds, st.integers(2, 64), st.floats(0.1, 4.0))
def test_restricted_softmax_is_conditioned_full_softmax(seed, V, t):
    rng = np.random.default_rng(seed)
    draft = gaussian_draft(rng, V, 3)
    support = np.sort(rng.choice(V, size=int(rng.integers(1, V + 1)), replace=False))
    h = rng.normal(size=3)
    full = softmax(draft.full_logits(h), t)
    np.testing.assert_allclose(draft.restricted_distribution(h, support, t), full[support] / full[support].sum(),
                               atol=1e-9)


@quick
@given(seeds, st.floats(-3, 3), st.floats(-3, 3))
def test_full_logits_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    target = TargetModel(Featurizer(rng.normal(size=(9, 4)), 2), rng.normal(size=(9, 4)))
    h1, h2 = rng.normal(size=4), rng.normal(size=4)
    np.testing.assert_allclose(target.full_logits(a * h1 + b * h2),
                               a * target.full_logits(h1) + b * target.full_logits(h2), atol=1e-9)


@quick
@given(seeds, st.floats(-50, 50))
def test_argmax_shift_invariant(seed, c):
    rng = np.random.default_rng(seed)
    draft = gaussian_draft(rng, 12, 3)
    h = rng.normal(size=3)
    support = np.arange(12)
    shifted = DraftModel(draft.featurizer, draft.lm_head, draft.adapter, np.full(12, c))
    assert np.argmax(draft.restricted_distribution(h, support)) == np.argmax(shifted.restricted_distribution(h, support))


@quick
@given(seeds)
def test_zero_adapter_draft_accepts_everything_greedily(seed):
    rng = np.random.default_rng(seed)
    feat = Featurizer(rng.normal(size=(10, 3)), 2)
    head = rng.normal(size=(10, 3))
    target = TargetModel(feat, head)
    draft = DraftModel(feat, head, LowRankAdapter(3, 2, 2.0, rng))
    dist = enumerate_round(target, draft, ActiveVocab(StaticVocab.full(10)), [1], gamma=3, temperature=0.0)
    assert list(dist.values()) == [1.0] and len(next(iter(dist))) == 4


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(1, 3), st.integers(1, 5), st.floats(0.5, 2.0))
def test_round_marginal_is_target(seed, gamma, support, t):
    rng = np.random.default_rng(seed)
    target, draft = random_pair(6, 3, rng)
    vocab = reduced_vocab(6, support, rng)
    dist = enumerate_round(target, draft, vocab, [0, 3], gamma, t)
    first = {}
    for seq, p in dist.items():
        assert 1 <= len(seq) <= gamma + 1
        first[seq[0]] = first.get(seq[0], 0.0) + p
    assert total_variation(first, dict(enumerate(target.distribution([0, 3], t).tolist()))) < 1e-9


@quick
@given(seeds, st.integers(3, 40))
def test_coverage_monotone_under_insertion(seed, V):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(V))
    static = StaticVocab(np.sort(rng.choice(V, size=int(rng.integers(1, V)), replace=False)),
                         np.zeros(V, dtype=np.int64), V)
    dynamic, last = [], -1.0
    for tok in rng.permutation(V):
        dynamic.append(int(tok))
        rep = coverage(ActiveVocab(static, dynamic), p, ks=(1, 3))
        assert rep.covered_mass >= last - 1e-12
        assert all(0.0 <= r <= 1.0 for r in rep.recall_at_k.values())
        last = rep.covered_mass
    assert last == 1.0 or abs(last - 1.0) < 1e-12


@quick
@given(st.lists(st.integers(0, 29), min_size=1, max_size=200))
def test_full_static_contains_corpus(corpus):
    assert set(corpus) <= set(build_static(corpus, 30, 30).members.tolist())


@quick
@given(seeds, st.integers(1, 512), st.integers(1, 8))
def test_augmented_order_equals_inner_product_order(seed, n, d):
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(n, d)) * rng.uniform(0.1, 3.0, size=(n, 1))
    pts, m = augment_rows(rows)
    assert np.allclose(np.linalg.norm(pts, axis=1), m)
    h = rng.normal(size=d)
    ids = np.arange(n)
    ip_order = ids[np.lexsort((ids, -(rows @ h)))]
    d2 = np.sum((pts - np.append(h, 0.0)) ** 2, axis=1)
    l2_order = ids[np.lexsort((ids, d2))]
    # equal rankings, checked on the scores so floating ties cannot flip the verdict
    np.testing.assert_allclose((rows @ h)[l2_order], (rows @ h)[ip_order], atol=1e-9)


@quick
@given(st.lists(st.integers(0, 15), min_size=2, max_size=300), st.integers(1, 4), st.floats(0, 1),
       st.integers(1, 5))
def test_graph_probabilities(corpus, min_count, tau, degree):
    g = build_graph(corpus, 16, GraphThresholds(min_count, tau, degree))
    for u in set(corpus[:-1]):
        _, p = g.unfiltered_successors(u)
        assert abs(p.sum() - 1.0) < 1e-9
        ids, probs = g.successors(u)
        assert len(ids) <= degree and np.all(probs >= tau) and np.all(np.diff(probs) <= 0)


@quick
@given(seeds, st.integers(1, 40), st.integers(0, 20), st.integers(0, 12))
def test_candidates_are_capped_unique_and_in_range(seed, cap, n_target, per_seed):
    rng = np.random.default_rng(seed)
    V = 50
    rows = rng.normal(size=(V, 4))
    g = build_graph(rng.integers(V, size=500), V, GraphThresholds(min_count=1))
    topk = rng.permutation(V)[:n_target].tolist()
    cs = form_candidates(topk, rng.normal(size=4), MipsIndex(rows), g, CandidateConfig(n_target, 10, per_seed, cap))
    assert len(cs.merged) <= cap and len(set(cs.merged)) == len(cs.merged)
    assert all(0 <= t < V for t in cs.merged)


trace_ops = st.lists(st.one_of(st.tuples(st.just("touch"), st.integers(0, 12)),
                               st.tuples(st.just("admit"), st.lists(st.integers(0, 12), min_size=1, max_size=5,
                                                                     unique=True))),
                     max_size=120)


@quick
@given(st.integers(1, 6), st.integers(0, 6), st.integers(1, 6), st.integers(1, 6), trace_ops)
def test_arc_matches_reference(c, p0, b1, b2, ops):
    p0 = min(p0, c)
    cache, ref = ArcCache(c, p0, b1, b2, min_residency=0, warmup_events=0), ReferenceArc(c, p0, b1, b2)
    for kind, arg in ops:
        if kind == "touch":
            assert cache.touch(arg, 0) == ref.touch(arg)
        else:
            assert cache.admit(arg, 0) == ref.admit(arg)
        assert cache.state() == ref.state()


@quick
@given(st.integers(1, 6), st.integers(0, 10), st.integers(0, 5), trace_ops)
def test_arc_safeguards(c, residency, warmup, ops):
    cache = ArcCache(c, None, 4, 4, min_residency=residency, warmup_events=warmup)
    for step, (kind, arg) in enumerate(ops):
        if kind == "touch":
            cache.touch(arg, step)
            continue
        before = {t: s for lst in (cache.t1, cache.t2) for t, s in lst.items()}
        forced = cache.forced_evictions
        evicted = cache.admit(arg, step)
        assert len(cache) <= c
        residents = cache.members()
        assert not residents & (set(cache.b1) | set(cache.b2))
        if cache.forced_evictions == forced:
            assert all(step - before[t] >= residency for t in evicted if t in before)


@quick
@given(st.floats(0, 2), st.floats(0, 5), st.integers(1, 12))
def test_weights_monotone(beta, l_base, horizon):
    w = curriculum_weights(l_base, horizon, beta)
    assert w[0] == 1.0 and np.all(np.diff(w) <= 0)
    # below about 1e-16 the decay rounds to exactly one
    if beta * l_base > 1e-12 and horizon > 1:
        assert np.all(np.diff(w) < 0) or w[-1] == 0.0


@settings(max_examples=25, deadline=None)
@given(seeds, st.floats(0.3, 3.0), st.floats(0, 1))
def test_distill_loss_nonnegative(seed, t, beta):
    draft, entries = random_distill_instance(np.random.default_rng(seed))
    assert distill_loss(entries, draft, CurriculumConfig(beta, 3), DistillConfig(t_kd=t)).loss >= 0.0


@quick
@given(st.lists(st.floats(0, 7), min_size=1, max_size=60), st.integers(1, 10))
def test_trailing_mean_matches_naive(values, window):
    out = harness.trailing_mean(values, window)
    for i in range(len(values)):
        if i + 1 < window:
            assert np.isnan(out[i])
        else:
            assert abs(out[i] - np.mean(values[i - window + 1:i + 1])) < 1e-9
