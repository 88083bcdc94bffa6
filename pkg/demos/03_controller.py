"""
REINFORCE controller on a planted problem
=========================================

Each group hides one option worth +0.3 reward. The controller only sees
noisy scalar rewards for whole candidates and has to find all of them.
"""
import numpy as np

from skelnas.controller import (ReplayMemory, RewardRecord, argmax_candidate, init_policy, policy_update,
                                replay_push, sample_batch)
from skelnas.space import ChoiceGroup, SearchSpace

sizes = (5, 4, 5, 6, 4, 2, 3, 3, 3, 3)
space = SearchSpace(tuple(ChoiceGroup(f"g{i}", "general", "alpha", tuple(range(n)))
                          for i, n in enumerate(sizes)))
rng = np.random.default_rng(0)
planted = [int(rng.integers(n)) for n in sizes]
print("planted options:", planted)

state = init_policy(space)
baseline = 0.0
for step in range(1, 201):
    records = []
    for c in sample_batch(state, space, 30, rng):
        reward = 0.3 * sum(a == b for a, b in zip(c.selections, planted)) + rng.normal(0, 0.05)
        records.append(RewardRecord(c, 0.5, reward - baseline))
        baseline = 0.9 * baseline + 0.1 * reward
    state = policy_update(state, records)
    if step in (1, 50, 100, 200):
        best = argmax_candidate(state, space).selections
        hit = np.mean([a == b for a, b in zip(best, planted)])
        p_planted = np.mean([p[i] for p, i in zip(state.probabilities(), planted)])
        print(f"update {step:>3}: argmax recovers {hit:.0%}, mean prob of planted option {p_planted:.3f}")

# replay keeps the best candidates seen so far, above an AUC of 0.9
memory = ReplayMemory(capacity=3)
for auc in [0.85, 0.93, 0.97, 0.91, 0.95, 0.99]:
    memory = replay_push(memory, sample_batch(state, space, 1, rng)[0], auc)
print("replay memory AUCs:", memory.aucs())
