"""Cross-hierarchy affinity gating and aggregation semantics."""

import numpy as np
import pytest

import oracles
from shnet import tensor as T
from shnet.hcam import HCAM, LEVELS, PAIRS, LevelSplit, linguistic_context


@pytest.fixture
def rng():
    return np.random.default_rng(33)


def random_levels(rng, c=4, grid=3, t=3):
    return {lv: LevelSplit(visual=T.tensor(rng.normal(size=(c, grid, grid))),
                           words=T.tensor(rng.normal(size=(c, t))))
            for lv in LEVELS}


class TestLinguisticContext:
    def test_constant_columns_pass_through(self):
        v = np.array([1.5, -2.0, 0.25])
        words = np.repeat(v[:, None], 4, axis=1)
        assert np.array_equal(linguistic_context(T.tensor(words)).data, v)

    def test_single_column_identity(self, rng):
        col = rng.normal(size=(5, 1))
        assert np.array_equal(linguistic_context(T.tensor(col)).data, col[:, 0])

    def test_matches_sum_over_count_oracle(self, rng):
        words = rng.normal(size=(3, 5))
        want = np.zeros(3)
        for ch in range(3):
            acc = 0.0
            for t in range(5):
                acc += words[ch, t]
            want[ch] = acc / 5
        assert np.array_equal(linguistic_context(T.tensor(words)).data, want)


class TestAffinity:
    def test_zero_conv_gives_half(self, rng):
        hcam = HCAM(4, rng)
        for conv in hcam.gates.values():
            conv.w.data[...] = 0.0
            conv.b.data[...] = 0.0
        out = hcam.affinity(2, 3, T.tensor(rng.normal(size=(4, 3, 3))),
                            T.tensor(rng.normal(size=4)))
        assert np.all(out.data == 0.5)

    def test_strictly_inside_unit_interval(self, rng):
        hcam = HCAM(4, rng)
        out = hcam.affinity(2, 4, T.tensor(rng.normal(size=(4, 3, 3))),
                            T.tensor(rng.normal(size=4)))
        assert out.data.min() > 0.0
        assert out.data.max() < 1.0

    def test_conv_path_matches_per_pixel_matvec(self, rng):
        c, grid = 3, 4
        hcam = HCAM(c, rng)
        visual = rng.normal(size=(c, grid, grid))
        ctx = rng.normal(size=c)
        got = hcam.affinity(3, 2, T.tensor(visual), T.tensor(ctx)).data
        stackd = np.concatenate(
            [visual, np.repeat(ctx[:, None, None], grid, 1).repeat(grid, 2)], axis=0)
        conv = hcam.gates["32"]
        pre = oracles.conv1x1_matvec(stackd, conv.w.data, conv.b.data)
        want = 1.0 / (1.0 + np.exp(-pre))
        assert np.max(np.abs(got - want)) <= 1e-12


class TestExchange:
    def test_six_maps_for_three_levels(self, rng):
        hcam = HCAM(4, rng)
        affinities = hcam.exchange(random_levels(rng))
        assert set(affinities) == set(PAIRS)
        assert len(affinities) == 6

    def test_pair_depends_only_on_its_inputs(self, rng):
        hcam = HCAM(4, rng)
        levels = random_levels(rng)
        before = hcam.exchange(levels)[(2, 3)].data.copy()
        levels[4].visual.data += 1.0   # irrelevant to lambda_23
        levels[3].visual.data += 1.0   # visual of j enters only via words
        levels[2].words.data += 1.0    # words of i are unused for lambda_23
        after = hcam.exchange(levels)[(2, 3)].data
        assert np.array_equal(before, after)

    def test_exchange_is_asymmetric(self, rng):
        hcam = HCAM(4, rng)
        affinities = hcam.exchange(random_levels(rng))
        diff = np.abs(affinities[(2, 3)].data - affinities[(3, 2)].data).max()
        assert diff > 0.0


class TestAggregate:
    def test_zero_gate_hook_passes_visuals_through(self, rng):
        hcam = HCAM(4, rng)
        hcam.force_affinity = 0.0
        levels = random_levels(rng)
        sums = hcam.gated_sums(levels)
        for lv in LEVELS:
            assert np.array_equal(sums[lv].data, levels[lv].visual.data)

    def test_unit_gate_hook_adds_all_levels(self, rng):
        hcam = HCAM(4, rng)
        hcam.force_affinity = 1.0
        levels = random_levels(rng)
        sums = hcam.gated_sums(levels)
        for i in LEVELS:
            want = levels[i].visual.data.copy()
            for j in LEVELS:
                if j != i:
                    want = want + levels[j].visual.data
            assert np.max(np.abs(sums[i].data - want)) <= 1e-12

    def test_zero_gate_reduces_to_direct_conv3d(self, rng):
        c, grid = 4, 3
        hcam = HCAM(c, rng)
        hcam.force_affinity = 0.0
        levels = random_levels(rng, c=c, grid=grid)
        got = hcam(levels).data
        stacked = T.concat([T.reshape(levels[lv].visual, (c, 1, grid, grid))
                            for lv in LEVELS], axis=1)
        want = T.reshape(hcam.fuse(stacked), (c, grid, grid)).data
        assert np.array_equal(got, want)

    def test_gated_sums_match_literal_equation_oracle(self, rng):
        c, grid = 3, 3
        hcam = HCAM(c, rng)
        levels = random_levels(rng, c=c, grid=grid)
        affinities = hcam.exchange(levels)
        sums = hcam.gated_sums(levels)
        for i in LEVELS:
            want = levels[i].visual.data.copy()
            for j in LEVELS:
                if j == i:
                    continue
                lam = affinities[(i, j)].data
                for ch in range(c):
                    for r in range(grid):
                        for s in range(grid):
                            want[ch, r, s] += lam[ch, r, s] * levels[j].visual.data[ch, r, s]
            assert np.max(np.abs(sums[i].data - want)) <= 1e-11

    def test_linear_in_each_visual_for_fixed_gates(self, rng):
        c, grid = 3, 3
        hcam = HCAM(c, rng)
        base = random_levels(rng, c=c, grid=grid)
        affinities = hcam.exchange(base)

        def g2(f3):
            levels = {2: base[2], 3: LevelSplit(visual=f3, words=base[3].words), 4: base[4]}
            return hcam.aggregate(levels, affinities).data

        f = T.tensor(rng.normal(size=(c, grid, grid)))
        fp = T.tensor(rng.normal(size=(c, grid, grid)))
        fsum = T.tensor(f.data + fp.data)
        zero = T.tensor(np.zeros((c, grid, grid)))
        residual = g2(fsum) - g2(f) - g2(fp) + g2(zero)
        assert np.max(np.abs(residual)) <= 1e-10
