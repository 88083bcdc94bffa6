"""Reinforcement-learning controller over a categorical search space.

The policy keeps one logit vector per choice group; its softmax gives the
selection probabilities. Rewards are validation AUCs centred on an
exponential moving average baseline, and the logits follow the REINFORCE
gradient through an Adam update. High performers go to a replay memory and
are fed back into later updates.
"""
from __future__ import annotations

import copy
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .space import Candidate, SearchSpace, VersionError, sample

BASELINE_INIT = 0.5
BASELINE_DECAY = 0.9
CONTROLLER_LR = 0.001
BETA1, BETA2, EPS = 0.9, 0.999, 1e-8
REPLAY_THRESHOLD = 0.9
REPLAY_CAPACITY = 50
REPLAY_K = 5


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class PolicyState:
    logits: list[np.ndarray]
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int
    baseline: float
    space_hash: str
    lr: float = CONTROLLER_LR

    def probabilities(self) -> list[np.ndarray]:
        return [softmax(z) for z in self.logits]

    def copy(self) -> "PolicyState":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "logits": [z.tolist() for z in self.logits],
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
            "step": self.step,
            "baseline": self.baseline,
            "space_hash": self.space_hash,
            "lr": self.lr,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyState":
        arr = lambda xs: [np.asarray(x, dtype=float) for x in xs]  # noqa: E731
        return cls(arr(d["logits"]), arr(d["m"]), arr(d["v"]), int(d["step"]),
                   float(d["baseline"]), d["space_hash"], float(d.get("lr", CONTROLLER_LR)))


@dataclass(frozen=True)
class RewardRecord:
    candidate: Candidate
    auc: float
    reward: float
    iteration: int = 0

    def __post_init__(self):
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"auc must lie in [0, 1], got {self.auc}")


@dataclass
class ReplayMemory:
    entries: list[tuple[Candidate, float]] = field(default_factory=list)
    capacity: int = REPLAY_CAPACITY
    threshold: float = REPLAY_THRESHOLD

    def __len__(self) -> int:
        return len(self.entries)

    def aucs(self) -> list[float]:
        return [a for _, a in self.entries]

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "threshold": self.threshold,
            "entries": [{"selections": list(c.selections), "auc": a} for c, a in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict, space: SearchSpace) -> "ReplayMemory":
        entries = [(Candidate(space, tuple(e["selections"])), float(e["auc"])) for e in d["entries"]]
        return cls(entries, int(d["capacity"]), float(d["threshold"]))


def init_policy(space: SearchSpace, lr: float = CONTROLLER_LR) -> PolicyState:
    zeros = [np.zeros(len(g)) for g in space.groups]
    return PolicyState(
        logits=[z.copy() for z in zeros],
        m=[z.copy() for z in zeros],
        v=[z.copy() for z in zeros],
        step=0,
        baseline=BASELINE_INIT,
        space_hash=space.hash,
        lr=lr,
    )


def sample_batch(state: PolicyState, space: SearchSpace, n: int,
                 rng: np.random.Generator) -> list[Candidate]:
    if n < 1:
        raise ValueError("batch size must be >= 1")
    _check_hash(state, space)
    probs = state.probabilities()
    return [sample(space, probs, rng) for _ in range(n)]


def compute_reward(auc: float, state: PolicyState,
                   decay: float = BASELINE_DECAY) -> tuple[float, PolicyState]:
    """Centred reward ``auc - baseline``; the baseline absorbs ``auc`` afterwards."""
    if not 0.0 <= auc <= 1.0:
        raise ValueError(f"auc must lie in [0, 1], got {auc}")
    r = auc - state.baseline
    new = state.copy()
    new.baseline = decay * state.baseline + (1.0 - decay) * auc
    return r, new


def reinforce_gradient(state: PolicyState, records: Sequence[RewardRecord]) -> list[np.ndarray]:
    """Mean of ``-r * d log p(selection) / d logits`` over records."""
    probs = state.probabilities()
    grads = [np.zeros_like(z) for z in state.logits]
    for rec in records:
        for g, (p, s) in enumerate(zip(probs, rec.candidate.selections)):
            score = -p.copy()
            score[s] += 1.0
            grads[g] -= rec.reward * score
    n = len(records)
    return [gr / n for gr in grads]


UpdateRule = Callable[[PolicyState, Sequence[RewardRecord]], list[np.ndarray]]


def policy_update(state: PolicyState, records: Sequence[RewardRecord],
                  rule: UpdateRule = reinforce_gradient) -> PolicyState:
    """One Adam step on the logits along ``rule``'s gradient.

    A gradient that is exactly zero leaves the state untouched, moments included.
    """
    if not records:
        raise ValueError("policy update needs at least one record")
    for rec in records:
        if rec.candidate.space.hash != state.space_hash:
            raise VersionError(
                f"record candidate belongs to space {rec.candidate.space.hash}, policy to {state.space_hash}"
            )
    grads = rule(state, records)
    if all(not g.any() for g in grads):
        return state.copy()
    new = state.copy()
    new.step += 1
    t = new.step
    for i, g in enumerate(grads):
        new.m[i] = BETA1 * new.m[i] + (1 - BETA1) * g
        new.v[i] = BETA2 * new.v[i] + (1 - BETA2) * g * g
        m_hat = new.m[i] / (1 - BETA1 ** t)
        v_hat = new.v[i] / (1 - BETA2 ** t)
        new.logits[i] = new.logits[i] - new.lr * m_hat / (np.sqrt(v_hat) + EPS)
    return new


def replay_push(mem: ReplayMemory, candidate: Candidate, auc: float) -> ReplayMemory:
    if not 0.0 <= auc <= 1.0:
        raise ValueError(f"auc must lie in [0, 1], got {auc}")
    if auc < mem.threshold:
        return mem
    entries = list(mem.entries)
    for i, (c, a) in enumerate(entries):
        if c == candidate:
            entries[i] = (c, max(a, auc))
            break
    else:
        if len(entries) < mem.capacity:
            entries.append((candidate, auc))
        elif auc > min(a for _, a in entries):
            entries.sort(key=lambda e: -e[1])
            entries[-1] = (candidate, auc)
    # stable sort: among equal aucs the earlier entry stays first
    entries.sort(key=lambda e: -e[1])
    return ReplayMemory(entries, mem.capacity, mem.threshold)


def replay_contribute(mem: ReplayMemory, state: PolicyState, k: int = REPLAY_K,
                      iteration: int = 0) -> list[RewardRecord]:
    return [RewardRecord(c, a, a - state.baseline, iteration) for c, a in mem.entries[:k]]


def argmax_candidate(state: PolicyState, space: SearchSpace) -> Candidate:
    """Most probable option per group; ties go to the lowest index."""
    _check_hash(state, space)
    return Candidate(space, tuple(int(np.argmax(p)) for p in state.probabilities()))


def _check_hash(state: PolicyState, space: SearchSpace) -> None:
    if state.space_hash != space.hash:
        raise VersionError(f"policy was built for space {state.space_hash}, got {space.hash}")
