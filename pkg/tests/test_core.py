import math

import numpy as np
import pytest

from lookm import (
    CompressionConfig,
    ConfigError,
    MergeStrategy,
    Policy,
    PromptLayout,
    TokenKind,
    make_rng,
    plan_budget,
)

T = TokenKind.TEXT
I = TokenKind.IMAGE


def cfg(alpha1, alpha2, policy=Policy.LOOKM, **kw):
    return CompressionConfig(policy=policy, alpha1=alpha1, alpha2=alpha2, **kw)


class TestPlanBudget:
    def test_paper_ratios(self):
        plan = plan_budget(cfg(0.1, 0.1), 100)
        assert (plan.m_recent, plan.n_important, plan.s_total) == (10, 10, 20)

    def test_budget_equals_length(self):
        plan = plan_budget(cfg(0.5, 0.5), 4)
        assert (plan.m_recent, plan.n_important, plan.s_total) == (2, 2, 4)

    def test_floor_then_clamp_to_minimum_one(self):
        plan = plan_budget(cfg(0.1, 0.1), 7)
        assert (plan.m_recent, plan.n_important, plan.s_total) == (1, 1, 2)

    def test_rejects_zero_length(self):
        with pytest.raises(ValueError):
            plan_budget(cfg(0.1, 0.1), 0)

    def test_single_token_prompt_clamps_total(self):
        plan = plan_budget(cfg(0.5, 0.5), 1)
        assert plan.m_recent == 1 and plan.s_total == 1

    def test_total_bounded_by_length(self):
        rng = make_rng(0)
        for _ in range(500):
            a1 = rng.uniform(0, 1)
            a2 = rng.uniform(0, 1 - a1)
            length = int(rng.integers(1, 200))
            plan = plan_budget(cfg(a1, a2), length)
            assert 1 <= plan.s_total <= length
            assert plan.s_total == plan.m_recent + plan.n_important

    def test_monotone_in_alpha2(self):
        for length in (5, 17, 100):
            previous = -1
            for a2 in np.linspace(0.0, 0.9, 19):
                plan = plan_budget(cfg(0.1, float(a2)), length)
                assert plan.n_important >= previous
                previous = plan.n_important


class TestMakeRng:
    def test_same_seed_same_stream(self):
        a = make_rng(0).random(100)
        b = make_rng(0).random(100)
        assert np.array_equal(a, b)

    def test_distinct_seeds_differ(self):
        assert not np.array_equal(make_rng(0).random(100), make_rng(1).random(100))

    def test_golden_first_draw(self):
        # Frozen once from PCG64(42); guards the generator choice.
        assert make_rng(42).random() == 0.7739560485559633


class TestCompressionConfig:
    def test_alpha_sum_above_one_rejected(self):
        with pytest.raises(ConfigError):
            cfg(0.6, 0.5).validate()

    def test_both_alphas_zero_rejected_unless_full(self):
        with pytest.raises(ConfigError):
            cfg(0.0, 0.0).validate()
        CompressionConfig(policy=Policy.FULL_CACHE).validate()

    def test_merge_requires_lookm(self):
        with pytest.raises(ConfigError):
            cfg(0.1, 0.1, policy=Policy.H2O, merge=MergeStrategy.PIVOTAL).validate()
        cfg(0.1, 0.1, merge=MergeStrategy.PIVOTAL).validate()

    def test_even_snapkv_kernel_rejected(self):
        with pytest.raises(ConfigError):
            cfg(0.1, 0.1, policy=Policy.SNAPKV, snapkv_kernel=4).validate()

    def test_baseline_labels_are_lite(self):
        assert cfg(0.1, 0.1, policy=Policy.H2O).policy_label == "h2o-lite"
        assert cfg(0.1, 0.1, policy=Policy.SNAPKV).policy_label == "snapkv-lite"
        assert cfg(0.1, 0.1, policy=Policy.ROCO).policy_label == "roco-lite"
        assert cfg(0.1, 0.1).policy_label == "lookm"
        assert CompressionConfig(policy=Policy.FULL_CACHE).policy_label == "full"


class TestPromptLayout:
    def test_boundaries_match_kind_changes(self):
        layout = PromptLayout((T, T, I, I, I, T))
        assert layout.segment_boundaries == (2, 5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            PromptLayout(())

    def test_partition_property_random_layouts(self):
        for seed in range(1000):
            rng = make_rng(seed)
            length = int(rng.integers(1, 60))
            kinds = tuple(T if rng.random() < 0.5 else I for _ in range(length))
            layout = PromptLayout(kinds)
            text = set(layout.text_indices().tolist())
            image = set(layout.image_indices().tolist())
            assert text | image == set(range(length))
            assert text & image == set()
            boundaries = set(layout.segment_boundaries)
            expected = {i for i in range(1, length) if kinds[i] is not kinds[i - 1]}
            assert boundaries == expected
