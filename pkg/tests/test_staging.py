"""Masking DP vs its enumeration oracle, decomposition, training pairs."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stagecap import staging
from stagecap.corpus.vocab import BOS, EOS, NONE
from stagecap.errors import FormatError, StagingError


class TestDpMask:
    def test_three_values(self):
        p = staging.dp_mask([0.9, 0.1, 0.8])
        assert p.phi == (1, 0, 1)
        assert p.value == pytest.approx(1.7, abs=1e-12)

    def test_single_value(self):
        p = staging.dp_mask([0.5])
        assert p.phi == (1,)
        assert p.value == 0.5

    def test_tie_masks_later_word(self):
        assert staging.dp_mask([0.5, 0.5]).phi == (0, 1)

    def test_six_values_hand_trace(self):
        p = staging.dp_mask([0.9, 0.3, 0.1, 0.8, 0.9, 0.2])
        assert p.phi == (1, 0, 0, 1, 0, 1)
        assert p.value == pytest.approx(1.9, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(StagingError):
            staging.dp_mask([])

    def test_pattern_length_and_constraint(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            t = int(rng.integers(1, 20))
            u = rng.uniform(0, 1, size=t)
            p = staging.dp_mask(u)
            assert len(p.phi) == t
            assert all(a * b == 0 for a, b in zip(p.phi, p.phi[1:]))
            assert sum(p.phi) >= 1

    def test_value_matches_selected_sum(self):
        rng = np.random.default_rng(1)
        u = rng.uniform(0, 1, size=11)
        p = staging.dp_mask(u)
        manual = sum(float(u[i]) for i, b in enumerate(p.phi) if b)
        assert abs(p.value - manual) < 1e-12


class TestBruteForce:
    def test_three_values(self):
        assert staging.brute_force_mask([0.9, 0.1, 0.8]).value == pytest.approx(1.7, abs=1e-12)

    def test_pattern_count_for_t3(self):
        assert len(staging._valid_patterns(3)) == 5

    def test_all_ones_uniform(self):
        p = staging.brute_force_mask([1.0, 1.0, 1.0, 1.0])
        assert p.value == 2.0

    def test_t1(self):
        assert staging.brute_force_mask([0.0]).phi == (1,)

    def test_too_long_rejected(self):
        with pytest.raises(StagingError):
            staging.brute_force_mask([0.5] * 23)


class TestDpAgainstOracle:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=14))
    def test_values_equal_exactly(self, u):
        assert staging.dp_mask(u).value == staging.brute_force_mask(u).value

    def test_patterns_agree_on_random_draws(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            t = int(rng.integers(1, 15))
            u = rng.uniform(0, 1, size=t).tolist()
            assert staging.dp_mask(u) == staging.brute_force_mask(u)


class TestDecompose:
    CAPTION = ("a", "red", "cube", "on", "a", "table")
    U = (0.9, 0.3, 0.1, 0.8, 0.9, 0.2)

    def test_reference_example(self):
        plan = staging.decompose(self.CAPTION, self.U)
        assert plan.stage_count == 3
        assert plan.stage_tokens(0) == ("cube",)
        assert plan.stage_tokens(1) == ("red", "cube", "a")
        assert plan.stage_tokens(2) == self.CAPTION

    def test_single_token(self):
        plan = staging.decompose(("cube",), (0.4,))
        assert plan.stage_count == 1

    def test_stages_nested(self):
        rng = np.random.default_rng(3)
        caption = tuple(f"w{i}" for i in range(12))
        plan = staging.decompose(caption, rng.uniform(0, 1, size=12))
        for a, b in zip(plan.stages, plan.stages[1:]):
            assert set(a) <= set(b)
        assert plan.stages[-1] == tuple(range(12))

    def test_replay_reconstructs(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            t = int(rng.integers(1, 21))
            caption = tuple(f"w{i}" for i in range(t))
            plan = staging.decompose(caption, rng.uniform(0, 1, size=t))
            assert staging.replay(plan) == caption

    def test_stage_count_bounds(self):
        rng = np.random.default_rng(5)
        for t in (4, 8, 16):
            ks = []
            for _ in range(200):
                caption = tuple(f"w{i}" for i in range(t))
                plan = staging.decompose(caption, rng.uniform(0, 1, size=t))
                ks.append(plan.stage_count)
                assert math.ceil(math.log2(t + 1)) <= plan.stage_count <= t
            median = sorted(ks)[len(ks) // 2]
            assert median <= math.ceil(math.log2(t)) + 2

    def test_profile_length_mismatch(self):
        with pytest.raises(StagingError):
            staging.decompose(("a", "b"), (0.5,))


class TestSequentialOrder:
    def test_one_token_per_stage(self):
        plan = staging.decompose_sequential(("x", "y", "z"))
        assert plan.stage_count == 3
        assert plan.stage_tokens(0) == ("x",)
        assert plan.stage_tokens(2) == ("x", "y", "z")
        assert staging.replay(plan) == ("x", "y", "z")

    def test_pairs_insert_rightmost(self):
        plan = staging.decompose_sequential(("x", "y"))
        pairs = staging.build_training_pairs(plan, "s")
        assert pairs[1].input_tokens == (BOS, "x", EOS)
        assert pairs[1].targets == (NONE, "y")


class TestTrainingPairs:
    def test_reference_pairs(self):
        plan = staging.decompose(TestDecompose.CAPTION, TestDecompose.U)
        pairs = staging.build_training_pairs(plan, "scene-1")
        assert len(pairs) == 4
        assert pairs[0].input_tokens == (BOS, EOS)
        assert pairs[0].targets == ("cube",)
        assert pairs[1].input_tokens == (BOS, "cube", EOS)
        assert pairs[1].targets == ("red", "a")
        assert pairs[2].input_tokens == (BOS, "red", "cube", "a", EOS)
        assert pairs[2].targets == ("a", NONE, "on", "table")
        assert pairs[3].input_tokens == (BOS,) + TestDecompose.CAPTION + (EOS,)
        assert pairs[3].targets == (NONE,) * 7

    def test_terminal_pair_slot_count(self):
        caption = tuple(f"w{i}" for i in range(6))
        plan = staging.decompose(caption, np.full(6, 0.5))
        pairs = staging.build_training_pairs(plan, "s")
        assert pairs[-1].targets == (NONE,) * 7

    def test_empty_to_first_stage(self):
        plan = staging.decompose(("cube",), (0.2,))
        pairs = staging.build_training_pairs(plan, "s")
        assert pairs[0].input_tokens == (BOS, EOS)
        assert pairs[0].targets == ("cube",)

    def test_double_insertion_rejected(self):
        bad = staging.StagePlan(
            caption=("x", "y"),
            stages=((0, 1),),
            insertions=(((0, 0), (0, 1)),),
        )
        with pytest.raises(StagingError, match="slot"):
            staging.build_training_pairs(bad, "s")

    def test_slot_invariant_holds_for_dp_plans(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            t = int(rng.integers(1, 21))
            caption = tuple(f"w{i}" for i in range(t))
            plan = staging.decompose(caption, rng.uniform(0, 1, size=t))
            pairs = staging.build_training_pairs(plan, "s")
            assert len(pairs) == plan.stage_count + 1


class TestPairIO:
    def test_round_trip(self, tmp_path):
        plan = staging.decompose(TestDecompose.CAPTION, TestDecompose.U)
        pairs = staging.build_training_pairs(plan, "scene-1")
        path = tmp_path / "pairs.jsonl"
        staging.save_pairs(path, pairs)
        assert staging.load_pairs(path) == pairs

    def test_bad_schema_reports_line(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text('{"scene": "s", "input": ["[BOS]", "[EOS]"]}\n')
        with pytest.raises(FormatError, match="line 1"):
            staging.load_pairs(path)
