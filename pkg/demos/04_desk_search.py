"""
A small end-to-end search
=========================

Runs the whole protocol on synthetic data: sample students, train them,
update the controller, then train the winner for longer and score it on
held-out videos. The default here is a shortened version that finishes in
a few minutes; pass ``--full`` for the desk-scale run (about 25 minutes).
"""
import sys
import tempfile
from dataclasses import replace

from skelnas.search import desk_config, run_search
from skelnas.train import TrainBudget

full = "--full" in sys.argv
cfg = desk_config()
if not full:
    cfg = replace(cfg, students_per_iteration=4, iterations=2,
                  student_budget=TrainBudget(epochs=8, warmup_epochs=2, early_stop_epoch=6),
                  final_budget=TrainBudget(epochs=30, warmup_epochs=5, early_stop_epoch=None))

out = tempfile.mkdtemp(prefix="skelnas_demo_")
result = run_search(replace(cfg, output_dir=out))

for it in result.iterations:
    aucs = [round(s["auc"], 3) for s in it["students"]]
    print(f"iteration {it['iteration']}: student AUCs {aucs}, baseline {it['baseline']:.3f}")
print("replay memory:", [round(e["auc"], 3) for e in result.replay["entries"]])
print("final candidate:", result.final_candidate["selections"])
m = result.test_metrics
print(f"test: video AUC {m['video_auc']:.3f}, video accuracy {m['video_accuracy']:.1f}% "
      f"over {m['videos']} videos, confusion {m['confusion']}")
print(f"parameters {result.complexity['params']:,}, MACs {result.complexity['macs'] / 1e6:.1f} M")
print("run directory:", out)
