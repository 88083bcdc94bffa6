"""
Search space, candidates and their cost
=======================================

Enumerate the search space, materialize the best-choice candidate and
compare its size with the reference network.
"""
import numpy as np

from skelnas.builder import build_architecture, complexity, dump_architecture
from skelnas.space import best_choice_candidate, builtin_cp_space, cardinality, desk_space, sample

space = builtin_cp_space()
print(f"{len(space)} choice groups, {cardinality(space):,} candidates")
for g in space.groups[:5]:
    print(f"  {g.name:<22} {g.options}")
print("  ...")

best = best_choice_candidate()
graph = build_architecture(best)
print()
print(dump_architecture(graph))

# random candidates span a wide range of sizes
rng = np.random.default_rng(0)
uniform = [np.full(len(g), 1 / len(g)) for g in space.groups]
sizes = []
for _ in range(200):
    c = sample(space, uniform, rng)
    rep = complexity(build_architecture(c))
    sizes.append((rep.params, rep.macs))
p, m = np.array(sizes).T
print(f"\n200 random candidates: params {p.min():,}..{p.max():,} (median {int(np.median(p)):,}), "
      f"MACs {m.min() / 1e9:.3f}..{m.max() / 1e9:.2f} G")

# the CPU-sized space used for end-to-end runs
desk = desk_space()
print(f"\ndesk space: {[g.name for g in desk.groups]}, {cardinality(desk)} candidates")
