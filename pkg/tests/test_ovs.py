import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvfuse.errors import BudgetExceededError, InvalidParameterError
from mvfuse.fusion.cva import CvaParams
from mvfuse.geom import BevGridSpec, Pose2
from mvfuse.ovs import (OvsScorerParams, SelectionLabel, SelectionScore, bce_terms, fit_scorer,
                        init_scorer_params, load_scorer_params, make_labels, oracle_select,
                        ovs_bce_loss, ovs_score_forward, position_embedding, save_scorer_params,
                        select_closest, select_greedy_coverage, select_random, select_topk)
from mvfuse.uncertainty import Candidate, CandidateSet, UncertaintyMap

SPEC = BevGridSpec((-2, 2), (-2, 2), 0.5)


def umap(values):
    v = np.asarray(values, dtype=float)
    return UncertaintyMap(SPEC, v, np.ones(SPEC.shape, dtype=bool))


def cset(positions, maps=None, ego_map=None):
    maps = maps or [None] * len(positions)
    cands = tuple(Candidate(f"c{k}", Pose2(x, y, 0), m, k)
                  for k, ((x, y), m) in enumerate(zip(positions, maps)))
    return CandidateSet("ego", Pose2(0, 0, 0), ego_map, cands)


# --- baselines -------------------------------------------------------------------

def test_random_edges_and_shortfall(rng):
    cs = cset([(1, 0), (2, 0), (3, 0)])
    assert select_random(cs, 0, rng).ids == ()
    assert sorted(select_random(cs, 3, rng).ids) == ["c0", "c1", "c2"]
    sel = select_random(cs, 5, rng)
    assert sel.shortfall and len(sel.ids) == 3


def test_random_deterministic_and_uniform():
    cs = cset([(1, 0), (2, 0), (3, 0), (4, 0)])
    a = select_random(cs, 2, np.random.default_rng(5))
    assert a == select_random(cs, 2, np.random.default_rng(5))
    rng = np.random.default_rng(0)
    counts = {c: 0 for c in cs.ids}
    for _ in range(10_000):
        counts[select_random(cs, 1, rng).ids[0]] += 1
    assert all(abs(v / 10_000 - 0.25) < 0.02 for v in counts.values())


def test_closest_rules():
    cs = cset([(40, 0), (5, 0), (0, 20)])
    assert set(select_closest(cs, 2).ids) == {"c1", "c2"}
    assert select_closest(cset([(3, 4)]), 1).ids == ("c0",)
    assert select_closest(cset([(0, 5), (5, 0)]), 1).ids == ("c0",)


def test_negative_k_rejected():
    with pytest.raises(InvalidParameterError):
        select_closest(cset([(1, 0)]), -1)


def test_topk_rules():
    sc = [SelectionScore("a", 2.0), SelectionScore("b", 1.0), SelectionScore("c", 0.5)]
    assert select_topk(sc, 2).ids == ("a", "b")
    assert select_topk([SelectionScore(i, 0.0) for i in "cab"], 1).ids == ("a",)
    assert set(select_topk(sc, 3).ids) == {"a", "b", "c"}
    with pytest.raises(InvalidParameterError):
        SelectionScore("x", float("nan"))


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.integers(0, 8))
def test_topk_invariant_to_increasing_transform(vals, K):
    sc = [SelectionScore(f"v{i}", v) for i, v in enumerate(vals)]
    tr = [SelectionScore(s.vehicle_id, math.atan(3 * s.s) + 7) for s in sc]
    # an increasing transform can merge nearly equal floats; only compare when it did not
    if len({t.s for t in tr}) == len({s.s for s in sc}):
        assert select_topk(sc, K) == select_topk(tr, K)


def test_greedy_prefers_positive_gain():
    ego = np.full(SPEC.shape, 0.8)
    same = ego.copy()
    helps = ego.copy()
    helps[:2] = 0.1
    cs = cset([(0, 0), (1, 0)], [umap(same), umap(helps)], umap(ego))
    warped = {"c0": same, "c1": helps}
    assert select_greedy_coverage(cs, 1, warped).ids == ("c1",)


def test_greedy_disjoint_regions_both_chosen():
    ego = np.full(SPEC.shape, 0.9)
    a, b, c = ego.copy(), ego.copy(), ego.copy()
    a[:4] = 0.0
    b[4:] = 0.0
    c[:3] = 0.1  # overlaps a
    warped = {"c0": c, "c1": a, "c2": b}
    cs = cset([(0, 0), (0, 1), (0, 2)], [umap(c), umap(a), umap(b)], umap(ego))
    assert set(select_greedy_coverage(cs, 2, warped).ids) == {"c1", "c2"}


@given(st.integers(0, 10_000))
def test_greedy_k1_equals_bruteforce_on_modular_instances(seed):
    rng = np.random.default_rng(seed)
    ego = rng.random(SPEC.shape)
    maps = [rng.random(SPEC.shape) for _ in range(5)]
    warped = {f"c{k}": m for k, m in enumerate(maps)}
    cs = cset([(k, 0) for k in range(5)], [umap(m) for m in maps], umap(ego))
    gain = {cid: np.maximum(0, ego - m).sum() for cid, m in warped.items()}
    oracle = oracle_select(cs, 1, lambda ids: gain[ids[0]])
    assert select_greedy_coverage(cs, 1, warped).ids == oracle.subset


# --- scorer -----------------------------------------------------------------------

def test_zero_head_gives_zero_logit(rng):
    p = init_scorer_params(rng)
    p = OvsScorerParams(p.encoder, p.cva, p.w1, p.b1, np.zeros_like(p.w2), 0.0)
    for _ in range(3):
        assert ovs_score_forward(rng.random(SPEC.shape), rng.random(SPEC.shape),
                                 tuple(rng.normal(size=3)), p) == 0.0


def test_identical_inputs_identical_score(rng):
    p = init_scorer_params(rng)
    ue, uv = rng.random(SPEC.shape), rng.random(SPEC.shape)
    assert ovs_score_forward(ue, uv, (1, 2, 0.1), p) == ovs_score_forward(ue, uv, (1, 2, 0.1), p)


def _naive_conv(x, k, b, stride):
    H, W = x.shape
    xp = np.pad(x, 1)
    Ho, Wo = (H + 2 - 3) // stride + 1, (W + 2 - 3) // stride + 1
    out = np.zeros((Ho, Wo))
    for i in range(Ho):
        for j in range(Wo):
            acc = b
            for u in range(3):
                for v in range(3):
                    acc += k[u][v] * xp[i * stride + u, j * stride + v]
            out[i, j] = max(acc, 0.0)
    return out


def _naive_bilinear(a, r, c):
    H, W = a.shape
    r0, c0 = math.floor(r), math.floor(c)
    tot = 0.0
    for rr, wr in ((r0, 1 - (r - r0)), (r0 + 1, r - r0)):
        for cc, wc in ((c0, 1 - (c - c0)), (c0 + 1, c - c0)):
            if 0 <= rr < H and 0 <= cc < W:
                tot += wr * wc * a[rr, cc]
    return tot


def test_scorer_matches_hand_loop_trace():
    k1 = [[0.1, -0.2, 0.3], [0.5, 1.0, -0.4], [0.2, 0.0, 0.1]]
    enc = ((np.array(k1)[None, None], np.array([0.05])),)
    cva = CvaParams(np.array([[0.2, -0.1], [0.3, 0.4]]), np.array([0.5, -0.25]),
                    np.array([[0.7, -0.3]]), np.array([0.2]), np.array([[1.5]]))
    w1, b1, w2, b2 = np.array([[1.2], [-0.7]]), np.array([0.1, 0.3]), np.array([0.9, -1.1]), 0.05
    p = OvsScorerParams(enc, cva, w1, b1, w2, b2)
    ue = np.array([[0.1, 0.4, 0.9, 0.2], [0.3, 0.8, 0.5, 0.6],
                   [0.7, 0.2, 0.1, 0.9], [0.4, 0.6, 0.3, 0.0]])
    uv = ue[::-1].T.copy()
    rel = (3.0, -12.0, 0.4)
    # independent scalar forward
    fe, fv = _naive_conv(ue, k1, 0.05, 2), _naive_conv(uv, k1, 0.05, 2)
    fused = np.zeros_like(fe)
    for i in range(fe.shape[0]):
        for j in range(fe.shape[1]):
            q, v = fe[i, j], fv[i, j]
            orow = 0.2 * q - 0.1 * v + 0.5
            ocol = 0.3 * q + 0.4 * v - 0.25
            w = 0.7 * q - 0.3 * v + 0.2
            fused[i, j] = q + w * _naive_bilinear(1.5 * fv, i + orow, j + ocol)
    X = fused.ravel()
    t = [rel[0] / 60.0, rel[1] / 60.0, rel[2] / math.pi]
    qv = math.sin(math.pi * t[0])  # dim 1: the single even index k=0
    logits = [x * qv for x in X]
    m = max(logits)
    e = [math.exp(l - m) for l in logits]
    z = sum(ei * xi for ei, xi in zip(e, X)) / sum(e)
    h = [max(1.2 * z + 0.1, 0.0), max(-0.7 * z + 0.3, 0.0)]
    ref = 0.9 * h[0] - 1.1 * h[1] + 0.05
    assert ovs_score_forward(umap_4(ue), umap_4(uv), rel, p) == pytest.approx(ref, abs=1e-6)


def umap_4(a):
    return UncertaintyMap(BevGridSpec((-1, 1), (-1, 1), 0.5), a, np.ones((4, 4), bool))


def test_scorer_shape_mismatch(rng):
    p = init_scorer_params(rng)
    with pytest.raises(InvalidParameterError):
        ovs_score_forward(np.zeros((4, 4)), np.zeros((4, 6)), (0, 0, 0), p)


def test_position_embedding_bounded():
    e = position_embedding((10, -20, 0.3), 16)
    assert e.shape == (16,) and np.all(np.abs(e) <= 1)
    assert np.all(np.isfinite(e))


def test_scorer_param_io(tmp_path, rng):
    p = init_scorer_params(rng)
    save_scorer_params(tmp_path / "s.bin", p)
    q = load_scorer_params(tmp_path / "s.bin")
    ue, uv = rng.random(SPEC.shape), rng.random(SPEC.shape)
    assert ovs_score_forward(ue, uv, (1, 1, 0), q) == pytest.approx(
        ovs_score_forward(ue, uv, (1, 1, 0), p), abs=1e-4)


def test_fit_scorer_lowers_loss(rng):
    p = init_scorer_params(rng, channels=(4, 8), hidden=4)
    ex = []
    for k in range(6):
        uv = np.full(SPEC.shape, 0.1 if k % 2 else 0.9)
        ex.append((np.full(SPEC.shape, 0.8), uv, (k, 0, 0), k % 2))
    _, trace = fit_scorer(ex, p, steps=25, return_trace=True)
    assert trace[-1] < trace[0]
    assert all(b <= a for a, b in zip(trace, trace[1:]))


# --- oracle, labels, loss ---------------------------------------------------------

def test_oracle_k0_full_and_budget():
    cs = cset([(1, 0), (2, 0), (3, 0)])
    r0 = oracle_select(cs, 0, lambda ids: 0.42)
    assert r0.subset == () and r0.score == 0.42
    rf = oracle_select(cs, 3, lambda ids: len(ids))
    assert rf.subset == ("c0", "c1", "c2") and len(rf.table) == 1
    with pytest.raises(BudgetExceededError):
        oracle_select(cset([(k, 0) for k in range(8)]), 4, lambda ids: 0.0, budget=10)


def test_oracle_ties_lexicographic_and_table():
    cs = cset([(1, 0), (2, 0), (3, 0), (4, 0)])
    score = {("c0", "c1"): 0.5, ("c1", "c3"): 0.9, ("c2", "c3"): 0.9}
    r = oracle_select(cs, 2, lambda ids: score.get(ids, 0.1))
    assert r.subset == ("c1", "c3")
    assert len(r.table) == 6
    assert all(r.score >= v for _, v in r.table)
    lines = r.to_csv().splitlines()
    assert lines[0] == "subset,mAP,selected" and sum(l.endswith(",1") for l in lines) == 1


def test_oracle_parallel_matches_serial():
    cs = cset([(k, 0) for k in range(6)])
    f = lambda ids: (hash(ids) % 97) / 97.0  # noqa: E731
    with ThreadPoolExecutor(3) as ex:
        assert oracle_select(cs, 2, f, executor=ex) == oracle_select(cs, 2, f)


def test_labels():
    cs = cset([(1, 0), (2, 0), (3, 0)])
    assert [l.y for l in make_labels(("c1",), cs)] == [0, 1, 0]
    assert [l.y for l in make_labels((), cs)] == [0, 0, 0]
    assert [l.y for l in make_labels(cs.ids, cs)] == [1, 1, 1]
    with pytest.raises(InvalidParameterError):
        make_labels(("zz",), cs)


def test_bce_values():
    assert ovs_bce_loss([SelectionScore("a", 0.0)], [SelectionLabel("a", 1)]) == \
        pytest.approx(math.log(2), abs=1e-9)
    assert ovs_bce_loss([SelectionScore("a", 20.0)], [SelectionLabel("a", 1)]) < 1e-7
    assert ovs_bce_loss([SelectionScore("a", -60.0)], [SelectionLabel("a", 1)]) == \
        pytest.approx(-math.log(1e-7))
    two = ovs_bce_loss([SelectionScore("a", 1.0), SelectionScore("b", -1.0)],
                       [SelectionLabel("a", 1), SelectionLabel("b", 0)])
    assert two == pytest.approx(math.log1p(math.exp(-1.0)), abs=1e-12)
    assert two == pytest.approx(0.313262, abs=1e-5)


def test_bce_mismatched_ids():
    with pytest.raises(InvalidParameterError):
        ovs_bce_loss([SelectionScore("a", 0.0)], [SelectionLabel("b", 1)])
    with pytest.raises(InvalidParameterError):
        ovs_bce_loss([], [])


@given(st.lists(st.tuples(st.floats(-50, 50), st.integers(0, 1)), min_size=1, max_size=10))
def test_bce_nonnegative(pairs):
    s = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    assert np.all(bce_terms(s, y) >= 0)
