"""Fusion sequence construction and multi-head attention behaviour."""

import numpy as np
import pytest

import oracles
from shnet import tensor as T
from shnet.errors import ConfigError, ShapeError
from shnet.hcam import split_sequence
from shnet.sfm import SFM, MultiHeadAttention


@pytest.fixture
def rng():
    return np.random.default_rng(21)


def make_sfm(rng, c=3, grid=2, heads=1, zero_pos=True, identity_norm=True):
    sfm = SFM(c, grid, heads, rng)
    if zero_pos:
        sfm.pos_visual.data[...] = 0.0
        sfm.pos_word.data[...] = 0.0
    if identity_norm:
        sfm.norm.gamma.data[...] = 1.0
        sfm.norm.beta.data[...] = 0.0
    return sfm


class TestFuseTokens:
    def test_length_and_split(self, rng):
        sfm = make_sfm(rng, c=3, grid=2)
        seq = sfm.fuse_tokens(T.tensor(rng.normal(size=(3, 2, 2))),
                              T.tensor(rng.normal(size=(3, 4))))
        assert seq.length == 8
        assert seq.split == 4

    def test_row_major_pixel_indexing_round_trip(self, rng):
        c, h, w = 3, 2, 2
        visual = rng.normal(size=(c, h, w))
        flat = T.reshape(T.tensor(visual), (c, h * w)).data
        for k in range(h * w):
            assert np.array_equal(flat[:, k], visual[:, k // w, k % w])
        assert np.array_equal(flat.reshape(c, h, w), visual)

    def test_identity_affine_norm_matches_oracle(self, rng):
        c, grid, t = 4, 2, 3
        sfm = make_sfm(rng, c=c, grid=grid)
        visual = rng.normal(size=(c, grid, grid))
        words = rng.normal(size=(c, t))
        seq = sfm.fuse_tokens(T.tensor(visual), T.tensor(words))
        joint = np.concatenate([visual.reshape(c, grid * grid), words], axis=1)
        want = oracles.layer_norm_two_pass(joint, np.ones(c), np.zeros(c))
        assert np.max(np.abs(seq.tokens.data - want)) <= 1e-10

    def test_channel_mismatch_rejected(self, rng):
        sfm = make_sfm(rng, c=3, grid=2)
        with pytest.raises(ShapeError):
            sfm.fuse_tokens(T.tensor(rng.normal(size=(3, 2, 2))),
                            T.tensor(rng.normal(size=(4, 3))))


class TestMultiHeadAttention:
    def test_heads_must_divide_channels(self, rng):
        with pytest.raises(ConfigError):
            MultiHeadAttention(6, 4, rng)

    def test_zero_query_key_gives_uniform_mixing(self, rng):
        c, s = 4, 5
        mha = MultiHeadAttention(c, 1, rng)
        mha.wq[0].data[...] = 0.0
        mha.wk[0].data[...] = 0.0
        mha.wv[0].data[...] = np.eye(c)
        mha.wo.data[...] = np.eye(c)
        x = rng.normal(size=(c, s))
        out = mha(T.tensor(x)).data
        want = x + x.mean(axis=1, keepdims=True)
        assert np.max(np.abs(out - want)) <= 1e-12

    def test_attention_rows_stochastic(self, rng):
        c, s = 8, 6
        mha = MultiHeadAttention(c, 2, rng)
        x = T.tensor(rng.normal(size=(c, s)))
        q = mha.wq[0].data.T @ x.data
        k = mha.wk[0].data.T @ x.data
        attn = T.softmax(T.scale(T.matmul(T.tensor(q.T), T.tensor(k)), mha.scale)).data
        assert np.max(np.abs(attn.sum(axis=1) - 1.0)) <= 1e-10

    def test_matches_hand_unrolled_oracle(self, rng):
        c, s, heads = 4, 3, 2
        mha = MultiHeadAttention(c, heads, rng)
        x = rng.normal(size=(c, s))
        got = mha(T.tensor(x)).data
        want = x + oracles.attention_unrolled(
            x, [w.data for w in mha.wq], [w.data for w in mha.wk],
            [w.data for w in mha.wv], mha.wo.data, heads)
        assert np.max(np.abs(got - want)) <= 1e-10

    def test_identity_attention_hook(self, rng):
        c, s = 4, 5
        mha = MultiHeadAttention(c, 2, rng)
        mha.identity_attention = True
        x = rng.normal(size=(c, s))
        out = mha(T.tensor(x)).data
        mixed = np.concatenate([w.data.T @ x for w in mha.wv], axis=0)
        want = x + mha.wo.data @ mixed
        assert np.max(np.abs(out - want)) <= 1e-12


class TestSfmForward:
    @pytest.mark.parametrize("grid,t", [(1, 1), (2, 3), (3, 5)])
    def test_output_shape_equals_input_shape(self, rng, grid, t):
        c = 4
        sfm = SFM(c, grid, 2, rng)
        seq = sfm(T.tensor(rng.normal(size=(c, grid, grid))),
                  T.tensor(rng.normal(size=(c, t))))
        assert seq.tokens.shape == (c, grid * grid + t)
        assert seq.split == grid * grid

    def test_levels_are_independent(self, rng):
        c, grid, t = 4, 2, 3
        sfm_a = SFM(c, grid, 2, rng)
        sfm_b = SFM(c, grid, 2, rng)
        visual = T.tensor(rng.normal(size=(c, grid, grid)))
        words = T.tensor(rng.normal(size=(c, t)))
        before = sfm_b(visual, words).tokens.data.copy()
        sfm_a.attention.wo.data += 1.0  # perturb the other level's parameters
        after = sfm_b(visual, words).tokens.data
        assert np.array_equal(before, after)

    def test_permutation_consistency(self, rng):
        c, grid, t = 4, 2, 3
        hw = grid * grid
        sfm = SFM(c, grid, 2, rng)
        visual = rng.normal(size=(c, grid, grid))
        words = T.tensor(rng.normal(size=(c, t)))
        base = sfm(T.tensor(visual), words).tokens.data.copy()

        perm = np.array([2, 0, 3, 1])
        flat = visual.reshape(c, hw)
        sfm.pos_visual.data = sfm.pos_visual.data[:, perm]
        permuted = sfm(T.tensor(flat[:, perm].reshape(c, grid, grid)), words).tokens.data

        unpermuted = np.empty_like(permuted)
        unpermuted[:, perm] = permuted[:, :hw]
        unpermuted[:, hw:] = permuted[:, hw:]
        # attention is position-blind apart from the positional table; only
        # floating-point reduction order differs under the permutation
        assert np.max(np.abs(unpermuted - base)) <= 1e-12

    def test_split_round_trip_reproduces_tokens(self, rng):
        c, grid, t = 4, 2, 3
        sfm = SFM(c, grid, 2, rng)
        seq = sfm(T.tensor(rng.normal(size=(c, grid, grid))),
                  T.tensor(rng.normal(size=(c, t))))
        parts = split_sequence(seq)
        rebuilt = np.concatenate(
            [parts.visual.data.reshape(c, grid * grid), parts.words.data], axis=1)
        assert np.array_equal(rebuilt, seq.tokens.data)
