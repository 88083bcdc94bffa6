"""Search orchestration: iterations of sampled students, controller updates,
replay, then a long training run of the final candidate and its test report.

Every random draw derives from the global seed. The controller draws from
``[seed, 10, iteration]``, student ``i`` of iteration ``k`` trains from
``[seed, k, i]`` and the final candidate from ``[seed, 0, 0]``, so results
do not depend on how students are spread over worker processes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .builder import BuildError, build_architecture, complexity
from .controller import (PolicyState, ReplayMemory, RewardRecord, argmax_candidate, compute_reward,
                         init_policy, policy_update, replay_contribute, replay_push, sample_batch)
from .dataset import WindowSet, build_windows, read_container, stratified_split
from .nn import predict_proba, save_weights
from .skeleton import SkeletonGraph, load_skeleton
from .space import Candidate, SearchSpace, VersionError, builtin_cp_space, desk_space, parse_space
from .stats import evaluate_videos
from .synth import SynthConfig, generate_synthetic
from .train import DivergenceError, TrainBudget, features_f32, train_student

log = logging.getLogger(__name__)

CONFIG_FORMAT = "skelnas.search-config/1"
RESULT_FORMAT = "skelnas.search-result/1"
CHECKPOINT_FORMAT = "skelnas.search-checkpoint/1"
SUB_CONTROLLER = 10
# fields that change how a run is executed but not what it computes
EXECUTION_FIELDS = ("workers", "output_dir")
# video split of the desk run: fewer training windows keep students CPU-sized
DESK_SPLIT = (0.4, 0.3, 0.3)


class ConfigError(ValueError):
    pass


class ResumeError(ValueError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    space: str = "builtin"  # "builtin", "desk" or a path to a space document
    synth: SynthConfig | None = field(default_factory=SynthConfig)
    train_path: str | None = None
    val_path: str | None = None
    test_path: str | None = None
    split: tuple[float, float, float] = (0.5, 0.25, 0.25)
    students_per_iteration: int = 30
    iterations: int = 3
    student_budget: TrainBudget = field(default_factory=TrainBudget.student)
    final_budget: TrainBudget = field(default_factory=TrainBudget.final)
    workers: int = 1
    seed: int = 1234
    output_dir: str | None = None

    def __post_init__(self):
        if self.students_per_iteration < 1:
            raise ConfigError("students_per_iteration must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        paths = (self.train_path, self.val_path, self.test_path)
        if any(p is not None for p in paths) and not all(p is not None for p in paths):
            raise ConfigError("train_path, val_path and test_path must be given together")
        if self.synth is None and self.train_path is None:
            raise ConfigError("either a synth config or dataset paths are required")
        if len(self.split) != 3 or not np.isclose(sum(self.split), 1.0) or min(self.split) <= 0:
            raise ConfigError("split needs three positive fractions summing to 1")

    @property
    def uses_containers(self) -> bool:
        return self.train_path is not None

    def to_dict(self) -> dict:
        return {
            "format": CONFIG_FORMAT,
            "space": self.space,
            "synth": None if self.synth is None else self.synth.to_dict(),
            "train_path": self.train_path, "val_path": self.val_path, "test_path": self.test_path,
            "split": list(self.split),
            "students_per_iteration": self.students_per_iteration,
            "iterations": self.iterations,
            "student_budget": self.student_budget.to_dict(),
            "final_budget": self.final_budget.to_dict(),
            "workers": self.workers,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        d = dict(d)
        fmt = d.pop("format", CONFIG_FORMAT)
        if fmt != CONFIG_FORMAT:
            raise ConfigError(f"unsupported config format {fmt!r}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        if "synth" in d and d["synth"] is not None:
            d["synth"] = SynthConfig.from_dict(d["synth"])
        for key in ("student_budget", "final_budget"):
            if key in d:
                d[key] = TrainBudget.from_dict(d[key])
        if "split" in d:
            d["split"] = tuple(float(x) for x in d["split"])
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def fingerprint(self) -> str:
        """Hash of everything that determines the result (worker count excluded)."""
        d = self.to_dict()
        for key in EXECUTION_FIELDS:
            d.pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path: str | Path) -> SearchConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return SearchConfig.from_dict(doc)


def desk_config(**overrides) -> SearchConfig:
    """The CPU-sized run: zero-noise synthetic data, six-group space, 3 x 10 students."""
    base = SearchConfig(space="desk", synth=SynthConfig(), split=DESK_SPLIT,
                        students_per_iteration=10, iterations=3)
    return replace(base, **overrides)


def resolve_space(spec: str) -> SearchSpace:
    if spec == "builtin":
        return builtin_cp_space()
    if spec == "desk":
        return desk_space()
    return parse_space(Path(spec).read_text(encoding="utf-8"))


# --- data -------------------------------------------------------------------

@dataclass
class SearchData:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    val_features: dict
    test_features: dict
    skeleton: SkeletonGraph


def prepare_data(cfg: SearchConfig, skeleton: SkeletonGraph | None = None) -> SearchData:
    skel = skeleton or load_skeleton()
    if cfg.uses_containers:
        parts = [read_container(p) for p in (cfg.train_path, cfg.val_path, cfg.test_path)]
    else:
        parts = stratified_split(generate_synthetic(cfg.synth, skel), cfg.split, cfg.seed)
    sets = [build_windows(p, skel) for p in parts]
    for name, ws in zip(("train", "val"), sets):
        if len(set(np.asarray(ws.labels).tolist())) < 2:
            raise ConfigError(f"{name} split needs windows of both classes")
    if len(sets[2]) == 0:
        raise ConfigError("test split is empty")
    train, val, test = sets
    return SearchData(train, val, test, features_f32(val.frames, skel), features_f32(test.frames, skel), skel)


# --- students ---------------------------------------------------------------

# Worker processes inherit the prepared data through fork instead of pickling it per task.
_SHARED: dict = {}


def _train_one(task: tuple) -> dict:
    iteration, index, selections = task
    cfg: SearchConfig = _SHARED["cfg"]
    space: SearchSpace = _SHARED["space"]
    data: SearchData = _SHARED["data"]
    cand = Candidate(space, tuple(selections))
    t0 = time.perf_counter()
    out = {"iteration": iteration, "index": index, "selections": list(cand.selections),
           "candidate": cand.key, "auc": 0.0, "status": "ok", "early_stopped": False,
           "epochs_run": 0, "best_epoch": 0}
    try:
        graph = build_architecture(cand, data.skeleton)
    except BuildError as exc:
        out.update(status="build_error", error=f"{exc.group}: {exc}")
    else:
        try:
            rep = train_student(graph, data.train, data.val, cand.hyper(), cfg.student_budget,
                                seed=[cfg.seed, iteration, index], skeleton=data.skeleton,
                                val_features=data.val_features)
        except DivergenceError as exc:
            out.update(status="diverged", error=str(exc), epochs_run=exc.epoch)
        else:
            out.update(auc=float(max(rep.best_auc, 0.0)), early_stopped=rep.early_stopped,
                       epochs_run=rep.epochs_run, best_epoch=rep.best_epoch)
    out["seconds"] = time.perf_counter() - t0
    return out


def _run_students(tasks: list[tuple], workers: int):
    """Yield student results in task order, whatever the worker count."""
    if workers == 1 or len(tasks) == 1:
        for t in tasks:
            yield _train_one(t)
        return
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(min(workers, len(tasks))) as pool:
        # imap keeps task order, so gathering is canonical by student index
        yield from pool.imap(_train_one, tasks, chunksize=1)


# --- state, checkpoints and results ------------------------------------------

@dataclass
class SearchState:
    policy: PolicyState
    replay: ReplayMemory
    iterations: list[dict]

    def to_dict(self) -> dict:
        return {"policy": self.policy.to_dict(), "replay": self.replay.to_dict(), "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d: dict, space: SearchSpace) -> "SearchState":
        return cls(PolicyState.from_dict(d["policy"]), ReplayMemory.from_dict(d["replay"], space),
                   list(d["iterations"]))


@dataclass
class SearchResult:
    config: dict
    space: dict
    iterations: list[dict]
    replay: dict
    policy: dict
    final_candidate: dict
    final_report: dict
    test_metrics: dict
    complexity: dict

    def to_dict(self) -> dict:
        return {
            "format": RESULT_FORMAT,
            "config": self.config,
            "space": self.space,
            "iterations": self.iterations,
            "replay": self.replay,
            "policy": self.policy,
            "final_candidate": self.final_candidate,
            "final_report": self.final_report,
            "test_metrics": self.test_metrics,
            "complexity": self.complexity,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SearchResult":
        if d.get("format") != RESULT_FORMAT:
            raise ValueError(f"unsupported result format {d.get('format')!r}")
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def _checkpoint_path(out: Path, iteration: int) -> Path:
    return out / "checkpoints" / f"iter_{iteration:04d}.json"


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def save_checkpoint(out: Path, cfg: SearchConfig, space: SearchSpace, state: SearchState) -> Path:
    k = len(state.iterations)
    path = _checkpoint_path(out, k)
    _write_json(path, {"format": CHECKPOINT_FORMAT, "config_fingerprint": cfg.fingerprint(),
                       "space_hash": space.hash, "iteration": k, "state": state.to_dict()})
    return path


def load_checkpoint(path: Path, cfg: SearchConfig, space: SearchSpace) -> SearchState:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ResumeError(f"{path}: unsupported checkpoint format {doc.get('format')!r}")
    if doc["space_hash"] != space.hash:
        raise ResumeError(f"{path}: checkpoint space {doc['space_hash']} differs from configured {space.hash}")
    if doc["config_fingerprint"] != cfg.fingerprint():
        raise ResumeError(f"{path}: checkpoint was written under a different configuration")
    return SearchState.from_dict(doc["state"], space)


def latest_checkpoint(out: Path) -> Path | None:
    paths = sorted((out / "checkpoints").glob("iter_*.json"))
    return paths[-1] if paths else None


# --- the loop -----------------------------------------------------------------

def run_iteration(state: SearchState, k: int, cfg: SearchConfig, space: SearchSpace,
                  log_line=None) -> SearchState:
    """Sample, train, reward, update the policy and push to replay for iteration ``k``."""
    rng = np.random.default_rng([cfg.seed, SUB_CONTROLLER, k])
    cands = sample_batch(state.policy, space, cfg.students_per_iteration, rng)
    tasks = [(k, i, c.selections) for i, c in enumerate(cands)]
    results = []
    for res in _run_students(tasks, cfg.workers):
        results.append(res)
        log.info("iter %d student %d auc %.4f %s %.1fs", k, res["index"], res["auc"], res["status"],
                 res["seconds"])

    policy = state.policy
    records = []
    students = []
    for c, res in zip(cands, results):
        r, policy = compute_reward(res["auc"], policy)
        records.append(RewardRecord(c, res["auc"], r, k))
        entry = {key: v for key, v in res.items() if key != "seconds"}
        entry["reward"] = r
        students.append(entry)
        if log_line is not None:
            log_line({**entry, "seconds": res["seconds"]})
    replayed = replay_contribute(state.replay, policy, iteration=k)
    policy = policy_update(policy, records + replayed)
    replay = state.replay
    for c, res in zip(cands, results):
        replay = replay_push(replay, c, res["auc"])
    best_prev = state.iterations[-1]["best_so_far_auc"] if state.iterations else 0.0
    rec = {
        "iteration": k,
        "students": students,
        "replayed": [{"candidate": rr.candidate.key, "auc": rr.auc, "reward": rr.reward} for rr in replayed],
        "baseline": policy.baseline,
        "best_auc": max(s["auc"] for s in students),
        "best_so_far_auc": max(best_prev, max(s["auc"] for s in students)),
        "probabilities": [p.tolist() for p in policy.probabilities()],
    }
    return SearchState(policy, replay, state.iterations + [rec])


def run_search(cfg: SearchConfig, resume: bool = False) -> SearchResult:
    """Run (or continue) the whole protocol and return its result document.

    With an output directory, each iteration leaves a checkpoint, students
    are logged one JSON line each, and the final weights, metrics and
    complexity reports are written at the end.
    """
    space = resolve_space(cfg.space)
    out = Path(cfg.output_dir) if cfg.output_dir else None
    state = SearchState(init_policy(space), ReplayMemory(), [])
    if resume:
        if out is None:
            raise ResumeError("resume needs an output directory")
        done = out / "result.json"
        if done.exists():
            prev = SearchResult.from_dict(json.loads(done.read_text(encoding="utf-8")))
            if SearchConfig.from_dict(prev.config).fingerprint() != cfg.fingerprint():
                raise ResumeError(f"{done}: completed run used a different configuration")
            log.info("run already complete; re-emitting %s", done)
            return prev
        ck = latest_checkpoint(out)
        if ck is not None:
            state = load_checkpoint(ck, cfg, space)
            log.info("resuming after iteration %d from %s", len(state.iterations), ck)

    data = prepare_data(cfg)
    _SHARED.update(cfg=cfg, space=space, data=data)
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", cfg.to_dict())
        log_fh = open(out / "search.log", "a", encoding="utf-8")

    def log_line(entry: dict) -> None:
        if log_fh is not None:
            keep = ("iteration", "index", "candidate", "auc", "reward", "early_stopped", "epochs_run",
                    "status", "seconds")
            log_fh.write(json.dumps({k: entry[k] for k in keep}) + "\n")
            log_fh.flush()

    try:
        for k in range(len(state.iterations) + 1, cfg.iterations + 1):
            t0 = time.perf_counter()
            state = run_iteration(state, k, cfg, space, log_line)
            log.info("iteration %d done in %.1fs, baseline %.4f", k, time.perf_counter() - t0,
                     state.policy.baseline)
            if out is not None:
                save_checkpoint(out, cfg, space, state)
        result = _finish(cfg, space, data, state, out)
    finally:
        _SHARED.clear()
        if log_fh is not None:
            log_fh.close()
    if out is not None:
        (out / "result.json").write_text(result.to_json(), encoding="utf-8")
    return result


def _finish(cfg: SearchConfig, space: SearchSpace, data: SearchData, state: SearchState,
            out: Path | None) -> SearchResult:
    cand = argmax_candidate(state.policy, space)
    graph = build_architecture(cand, data.skeleton)
    t0 = time.perf_counter()
    rep = train_student(graph, data.train, data.val, cand.hyper(), cfg.final_budget,
                        seed=[cfg.seed, 0, 0], skeleton=data.skeleton, val_features=data.val_features)
    log.info("final candidate %s trained in %.1fs, best val auc %.4f (epoch %d)",
             cand.key, time.perf_counter() - t0, rep.best_auc, rep.best_epoch)
    scores = predict_proba(graph, rep.weights, data.test_features)
    metrics = evaluate_videos(scores, data.test.labels, data.test.video_ids)
    cx = complexity(graph).to_dict()
    cand_doc = {**cand.to_dict(), "key": cand.key, "selection_indices": list(cand.selections),
                "graph_hash": graph.hash}
    if out is not None:
        save_weights(out / "final_weights.npz", rep.weights, {"candidate": cand_doc})
        _write_json(out / "metrics.json", metrics)
        _write_json(out / "complexity.json", cx)
        (out / "final_candidate.json").write_text(json.dumps(cand.to_dict(), indent=2) + "\n", encoding="utf-8")
    return SearchResult(
        config={k: v for k, v in cfg.to_dict().items() if k not in EXECUTION_FIELDS},
        space={"name": space.name, "hash": space.hash, "groups": len(space.groups)},
        iterations=state.iterations,
        replay=state.replay.to_dict(),
        policy=state.policy.to_dict(),
        final_candidate=cand_doc,
        final_report=rep.to_dict(),
        test_metrics=metrics,
        complexity={k: v for k, v in cx.items() if k != "layers"},
    )


def check_resumable(cfg: SearchConfig) -> None:
    """Raise ResumeError if the output directory holds an incompatible run."""
    space = resolve_space(cfg.space)
    out = Path(cfg.output_dir)
    ck = latest_checkpoint(out)
    if ck is not None:
        load_checkpoint(ck, cfg, space)


__all__ = [
    "ConfigError", "ResumeError", "SearchConfig", "SearchResult", "SearchState", "VersionError",
    "desk_config", "load_config", "prepare_data", "resolve_space", "run_iteration", "run_search",
]
