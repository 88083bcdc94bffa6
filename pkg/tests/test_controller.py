"""Policy initialization, rewards, REINFORCE updates and replay memory."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skelnas.controller import (ReplayMemory, RewardRecord, argmax_candidate, compute_reward, init_policy,
                                policy_update, replay_contribute, replay_push, sample_batch)
from skelnas.space import Candidate, ChoiceGroup, SearchSpace, VersionError, builtin_cp_space, desk_space


def _space(*sizes):
    return SearchSpace(tuple(ChoiceGroup(f"g{i}", "general", "alpha", tuple(range(n)))
                             for i, n in enumerate(sizes)))


def _one_hot_state(space, sel):
    st_ = init_policy(space)
    st_.logits = [np.where(np.arange(len(g)) == s, 50.0, -50.0) for g, s in zip(space.groups, sel)]
    return st_


class TestInit:
    def test_uniform(self):
        p = init_policy(_space(4, 6)).probabilities()
        np.testing.assert_allclose(p[0], 0.25)
        np.testing.assert_allclose(p[1], 1 / 6)

    def test_fields(self):
        s = init_policy(builtin_cp_space())
        assert s.baseline == 0.5 and s.step == 0 and s.space_hash == builtin_cp_space().hash

    def test_deterministic(self):
        a, b = init_policy(builtin_cp_space()), init_policy(builtin_cp_space())
        assert a.to_dict() == b.to_dict()


class TestSampleBatch:
    def test_count(self, rng):
        assert len(sample_batch(init_policy(builtin_cp_space()), builtin_cp_space(), 30, rng)) == 30

    def test_one_hot(self, rng):
        sp = _space(3, 5)
        cands = sample_batch(_one_hot_state(sp, (1, 4)), sp, 10, rng)
        assert {c.selections for c in cands} == {(1, 4)}

    def test_reproducible(self):
        sp = builtin_cp_space()
        a = sample_batch(init_policy(sp), sp, 5, np.random.default_rng(3))
        b = sample_batch(init_policy(sp), sp, 5, np.random.default_rng(3))
        assert a == b

    def test_wrong_space(self, rng):
        with pytest.raises(VersionError):
            sample_batch(init_policy(desk_space()), builtin_cp_space(), 1, rng)


class TestReward:
    def test_at_baseline(self):
        r, _ = compute_reward(0.5, init_policy(_space(2)))
        assert r == 0.0

    def test_ema(self):
        r, s = compute_reward(0.9, init_policy(_space(2)))
        assert r == pytest.approx(0.4) and s.baseline == pytest.approx(0.54)

    def test_negative(self):
        r, _ = compute_reward(0.3, init_policy(_space(2)))
        assert r == pytest.approx(-0.2)

    @pytest.mark.parametrize("auc", [-0.1, 1.1])
    def test_range(self, auc):
        with pytest.raises(ValueError):
            compute_reward(auc, init_policy(_space(2)))


class TestUpdate:
    def test_positive_reward_raises_selected(self):
        sp = builtin_cp_space()
        st_ = init_policy(sp)
        c = Candidate(sp, tuple(i % len(g) for i, g in enumerate(sp.groups)))
        new = policy_update(st_, [RewardRecord(c, 0.9, 0.4)])
        for p0, p1, s in zip(st_.probabilities(), new.probabilities(), c.selections):
            assert p1[s] > p0[s]

    def test_zero_reward_no_change(self):
        sp = _space(3, 3)
        st_ = init_policy(sp)
        new = policy_update(st_, [RewardRecord(Candidate(sp, (0, 1)), 0.5, 0.0)])
        for a, b in zip(st_.logits, new.logits):
            assert np.array_equal(a, b)

    def test_symmetric_rewards_cancel(self):
        sp = _space(3, 4)
        st_ = init_policy(sp)
        c = Candidate(sp, (2, 3))
        new = policy_update(st_, [RewardRecord(c, 0.7, 0.3), RewardRecord(c, 0.1, -0.3)])
        for a, b in zip(st_.logits, new.logits):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_first_step_size(self):
        """Bias-corrected Adam moves every logit with nonzero gradient by lr on step one."""
        sp = _space(2)
        new = policy_update(init_policy(sp), [RewardRecord(Candidate(sp, (0,)), 1.0, 0.5)])
        np.testing.assert_allclose(new.logits[0], [0.001, -0.001], rtol=1e-6)

    def test_space_mismatch(self):
        sp = _space(2)
        rec = RewardRecord(Candidate(sp, (0,)), 0.5, 0.1)
        with pytest.raises(VersionError):
            policy_update(init_policy(_space(3)), [rec])

    def test_empty(self):
        with pytest.raises(ValueError):
            policy_update(init_policy(_space(2)), [])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), steps=st.integers(1, 15))
    def test_simplex_preserved(self, seed, steps):
        sp = _space(2, 5, 3)
        rng = np.random.default_rng(seed)
        s = init_policy(sp)
        for _ in range(steps):
            cands = sample_batch(s, sp, 4, rng)
            recs = [RewardRecord(c, float(a), float(a) - 0.5) for c, a in zip(cands, rng.random(4))]
            s = policy_update(s, recs)
        for p in s.probabilities():
            assert (p >= 0).all() and abs(p.sum() - 1) < 1e-9

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), r=st.floats(1e-3, 1.0))
    def test_single_positive_record_raises_joint_probability(self, seed, r):
        sp = _space(3, 4, 2)
        rng = np.random.default_rng(seed)
        s = init_policy(sp)
        s.logits = [rng.normal(size=len(g)) for g in sp.groups]
        c = sample_batch(s, sp, 1, rng)[0]
        joint = lambda state: np.prod([p[i] for p, i in zip(state.probabilities(), c.selections)])  # noqa: E731
        assert joint(policy_update(s, [RewardRecord(c, 0.5, r)])) > joint(s)

    def test_deterministic_trajectory(self):
        sp = builtin_cp_space()

        def run():
            rng = np.random.default_rng(5)
            s = init_policy(sp)
            for _ in range(5):
                cands = sample_batch(s, sp, 6, rng)
                recs = []
                for c in cands:
                    r, s = compute_reward(float(rng.random()), s)
                    recs.append(RewardRecord(c, 0.5, r))
                s = policy_update(s, recs)
            return s.to_dict()
        assert run() == run()


BANDIT_SIZES = (5, 4, 5, 6, 4, 2, 3, 3, 3, 3)


def run_planted_bandit(seed, updates=200, batch=30):
    """Reward 0.3 per planted option chosen plus N(0, 0.05) noise, EMA baseline.

    Returns the fraction of groups whose argmax option is the planted one.
    """
    sp = _space(*BANDIT_SIZES)
    rng = np.random.default_rng([seed, 99])
    planted = [int(rng.integers(n)) for n in BANDIT_SIZES]
    s = init_policy(sp)
    baseline = 0.0
    for _ in range(updates):
        cands = sample_batch(s, sp, batch, rng)
        recs = []
        for c in cands:
            reward = 0.3 * sum(a == b for a, b in zip(c.selections, planted)) + rng.normal(0, 0.05)
            recs.append(RewardRecord(c, 0.5, reward - baseline))
            baseline = 0.9 * baseline + 0.1 * reward
        s = policy_update(s, recs)
    best = argmax_candidate(s, sp).selections
    return float(np.mean([a == b for a, b in zip(best, planted)]))


class TestPlantedBandit:
    @pytest.mark.parametrize("seed", range(5))
    def test_recovers_planted_options(self, seed):
        assert run_planted_bandit(seed) >= 0.9


class TestReplay:
    def _c(self, i):
        sp = _space(10)
        return Candidate(sp, (i,))

    def test_threshold(self):
        assert len(replay_push(ReplayMemory(), self._c(0), 0.89)) == 0
        assert len(replay_push(ReplayMemory(), self._c(0), 0.95)) == 1

    def test_eviction(self):
        m = ReplayMemory(capacity=2)
        m = replay_push(replay_push(m, self._c(0), 0.92), self._c(1), 0.91)
        m = replay_push(m, self._c(2), 0.93)
        assert m.aucs() == [0.93, 0.92]

    def test_worse_entry_not_admitted_when_full(self):
        m = ReplayMemory(capacity=1)
        m = replay_push(replay_push(m, self._c(0), 0.97), self._c(1), 0.95)
        assert m.aucs() == [0.97] and m.entries[0][0] == self._c(0)

    def test_duplicate_keeps_max(self):
        m = replay_push(replay_push(ReplayMemory(), self._c(3), 0.91), self._c(3), 0.96)
        assert m.aucs() == [0.96]
        m = replay_push(m, self._c(3), 0.92)
        assert m.aucs() == [0.96]

    def test_contribute(self):
        sp = _space(10)
        s = init_policy(sp)
        assert replay_contribute(ReplayMemory(), s) == []
        m = ReplayMemory()
        for i, a in enumerate((0.91, 0.99, 0.95)):
            m = replay_push(m, self._c(i), a)
        recs = replay_contribute(m, s, k=5)
        assert [r.auc for r in recs] == [0.99, 0.95, 0.91]
        assert [r.reward for r in recs] == pytest.approx([0.49, 0.45, 0.41])
        assert len(m) == 3

    @settings(max_examples=40, deadline=None)
    @given(aucs=st.lists(st.floats(0, 1), max_size=40), cap=st.integers(1, 8))
    def test_invariants(self, aucs, cap):
        m = ReplayMemory(capacity=cap)
        for i, a in enumerate(aucs):
            m = replay_push(m, self._c(i % 10), a)
        assert len(m) <= cap
        assert all(a >= 0.9 for a in m.aucs())
        assert m.aucs() == sorted(m.aucs(), reverse=True)

    def test_round_trip(self):
        sp = _space(10)
        m = replay_push(ReplayMemory(), Candidate(sp, (4,)), 0.93)
        assert ReplayMemory.from_dict(m.to_dict(), sp).to_dict() == m.to_dict()


class TestArgmax:
    def test_uniform_is_index_zero(self):
        sp = builtin_cp_space()
        assert argmax_candidate(init_policy(sp), sp).selections == (0,) * len(sp)

    def test_one_hot(self):
        sp = _space(3, 4)
        assert argmax_candidate(_one_hot_state(sp, (2, 1)), sp).selections == (2, 1)
