import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvfuse.errors import InvalidParameterError
from mvfuse.fusion.snf import (SnfParams, default_snf_params, load_snf_params, save_snf_params,
                               snf_fuse, snf_scores)
from mvfuse.geom import BevGridSpec, BevRaster

SPEC = BevGridSpec((-2, 2), (-2, 2), 0.5)


def src(rng, C=4, S=3):
    return (BevRaster(SPEC, rng.random(SPEC.shape + (C,))),
            BevRaster(SPEC, rng.random(SPEC.shape + (S,))))


def rand_params(rng, cin=7):
    return SnfParams(rng.normal(size=(1, cin, 3, 3)), rng.normal(size=1))


def test_no_helpers_returns_ego_exactly(rng):
    ego = src(rng)
    B, S = snf_fuse(ego, [], rand_params(rng))
    assert np.array_equal(B.data, ego[0].data)
    assert np.all(S == 1)


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_weights_are_convex(seed, k):
    rng = np.random.default_rng(seed)
    _, S = snf_fuse(src(rng), [src(rng) for _ in range(k)], rand_params(rng))
    assert S.shape == (k + 1,) + SPEC.shape
    np.testing.assert_allclose(S.sum(axis=0), 1.0, atol=1e-6)
    assert np.all((S >= 0) & (S <= 1))


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_identical_sources_unchanged(seed, k):
    rng = np.random.default_rng(seed)
    e = src(rng)
    B, _ = snf_fuse(e, [e] * k, rand_params(rng))
    np.testing.assert_allclose(B.data, e[0].data, atol=1e-6)


def test_saturated_score_selects_source(rng):
    ego, h = src(rng), src(rng)
    k = np.zeros((1, 7, 3, 3))
    k[0, 3, 1, 1] = 20.0
    ego_f = ego[0].with_data(np.concatenate([ego[0].data[..., :3], np.zeros(SPEC.shape + (1,))], 2))
    h_f = h[0].with_data(np.concatenate([h[0].data[..., :3], np.ones(SPEC.shape + (1,))], 2))
    B, S = snf_fuse((ego_f, ego[1]), [(h_f, h[1])], SnfParams(k, np.zeros(1)))
    assert np.all(S[1] > 1 - 1e-8)
    np.testing.assert_allclose(B.data, h_f.data, atol=1e-7)


def test_default_params_score_visibility(rng):
    f, s = src(rng)
    sc = snf_scores(f, s, default_snf_params(vis_gain=5.0))
    np.testing.assert_allclose(sc, 5.0 * f.data[..., 3])


def test_mismatched_inputs(rng):
    f, s = src(rng)
    with pytest.raises(InvalidParameterError):
        snf_scores(f, s, default_snf_params(n_feat=3))
    other = BevRaster(BevGridSpec((-1, 1), (-1, 1), 0.5), np.zeros((4, 4, 4)))
    with pytest.raises(InvalidParameterError):
        snf_fuse((f, s), [(other, other)], default_snf_params())
    with pytest.raises(InvalidParameterError):
        SnfParams(np.zeros((2, 7, 3, 3)), np.zeros(2))


def test_param_io(tmp_path, rng):
    p = rand_params(rng)
    save_snf_params(tmp_path / "s.bin", p)
    q = load_snf_params(tmp_path / "s.bin")
    np.testing.assert_allclose(q.kernel, p.kernel, rtol=1e-6)
