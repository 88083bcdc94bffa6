"""Command-line entry point: ``skelnas <subcommand> ...``.

Exit status 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error. Failures print a single line to stderr of the form
``error: CLASS: message`` so scripts can match on ``CLASS``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import dataset, space as space_mod
from .builder import BuildError, build_architecture, complexity, dump_architecture
from .dataset import build_windows, read_container, save_features, stratified_split, write_container
from .nn import ModelMismatchError, check_compatible, load_weights, predict_proba, save_weights
from .search import ConfigError, ResumeError, SearchConfig, desk_config, load_config, resolve_space, run_search
from .signal import MalformedInputError
from .skeleton import SkeletonError, load_skeleton
from .space import Candidate, SearchSpace, best_choice_candidate, builtin_cp_space, cardinality
from .stats import evaluate_videos
from .synth import SynthConfig, generate_synthetic
from .train import DivergenceError, TrainBudget, features_f32, train_student


class CliError(Exception):
    def __init__(self, cls: str, message: str, status: int = 1):
        super().__init__(message)
        self.cls = cls
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("USAGE", message, 2)


# exception type -> (error class, exit status); first match wins
ERROR_CLASSES = (
    (CliError, None),
    (ModelMismatchError, ("MODEL_MISMATCH", 1)),
    (ResumeError, ("RESUME_REFUSED", 1)),
    (ConfigError, ("CONFIG_ERROR", 2)),
    (BuildError, ("BUILD_ERROR", 1)),
    (DivergenceError, ("DIVERGENCE", 1)),
    (space_mod.VersionError, ("VERSION_MISMATCH", 1)),
    (space_mod.SchemaError, ("SCHEMA_ERROR", 1)),
    (dataset.SchemaError, ("SCHEMA_ERROR", 1)),
    (MalformedInputError, ("MALFORMED_INPUT", 1)),
    (SkeletonError, ("SKELETON_ERROR", 1)),
    (FileNotFoundError, ("NOT_FOUND", 1)),
    (OSError, ("IO_ERROR", 1)),
)


def _classify(exc: BaseException) -> tuple[str, int]:
    for typ, info in ERROR_CLASSES:
        if isinstance(exc, typ):
            return (exc.cls, exc.status) if info is None else info
    return "RUNTIME_ERROR", 1


def _emit(doc, path: str | None) -> None:
    text = doc if isinstance(doc, str) else json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _space(spec: str | None) -> SearchSpace:
    return resolve_space(spec or "builtin")


def load_candidate(spec: str, space_spec: str | None = None) -> Candidate:
    """``best_choice`` or a candidate document; the space is taken from
    ``space_spec`` or, failing that, matched on the document's space hash."""
    if spec == "best_choice":
        return best_choice_candidate(_space(space_spec) if space_spec else builtin_cp_space())
    text = Path(spec).read_text(encoding="utf-8")
    if space_spec:
        return space_mod.parse_candidate(text, _space(space_spec))
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError("SCHEMA_ERROR", f"{spec}: line {exc.lineno}: {exc.msg}") from None
    return load_candidate_doc(doc, None)


# --- subcommands ----------------------------------------------------------------

def cmd_search(args) -> int:
    cfg = load_config(args.config) if args.config else (desk_config() if args.desk else SearchConfig())
    over = {}
    for flag, key in (("space", "space"), ("iterations", "iterations"), ("students", "students_per_iteration"),
                      ("workers", "workers"), ("seed", "seed"), ("output", "output_dir"),
                      ("train", "train_path"), ("val", "val_path"), ("test", "test_path")):
        val = getattr(args, flag)
        if val is not None:
            over[key] = val
    if args.student_epochs is not None:
        over["student_budget"] = replace(cfg.student_budget, epochs=args.student_epochs,
                                         warmup_epochs=min(cfg.student_budget.warmup_epochs, args.student_epochs))
    if args.final_epochs is not None:
        halvings = tuple(h for h in cfg.final_budget.halving_epochs if h < args.final_epochs)
        over["final_budget"] = replace(cfg.final_budget, epochs=args.final_epochs, halving_epochs=halvings,
                                       warmup_epochs=min(cfg.final_budget.warmup_epochs, args.final_epochs))
    try:
        cfg = replace(cfg, **over)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.resume and not cfg.output_dir:
        raise CliError("USAGE", "--resume needs --output", 2)
    result = run_search(cfg, resume=args.resume)
    if cfg.output_dir:
        print(Path(cfg.output_dir) / "result.json")
        m = result.test_metrics
        print(f"final {result.final_candidate['key']}: test video AUC {m['video_auc']:.4f}, "
              f"video accuracy {m['video_accuracy']:.1f}%")
    else:
        sys.stdout.write(result.to_json())
    return 0


def _split_data(args, skel):
    if args.train or args.val:
        if not (args.train and args.val):
            raise CliError("USAGE", "--train and --val go together", 2)
        return read_container(args.train), read_container(args.val)
    seqs = generate_synthetic(SynthConfig(seed=args.seed), skel)
    train, val, _ = stratified_split(seqs, seed=args.seed)
    return train, val


def cmd_train(args) -> int:
    cand = load_candidate(args.candidate, args.space)
    skel = load_skeleton()
    graph = build_architecture(cand, skel)
    train_seqs, val_seqs = _split_data(args, skel)
    budget = TrainBudget.final()
    if args.epochs is not None:
        budget = TrainBudget(args.epochs, min(budget.warmup_epochs, args.epochs), None, 0.5,
                             tuple(h for h in budget.halving_epochs if h < args.epochs))
    rep = train_student(graph, build_windows(train_seqs, skel), build_windows(val_seqs, skel),
                        cand.hyper(), budget, seed=[args.seed, 0, 0], skeleton=skel)
    extra = {"candidate": {**cand.to_dict(), "key": cand.key, "graph_hash": graph.hash}}
    save_weights(args.output, rep.weights, extra)
    _emit(rep.to_dict(timing=True) | {"weights": str(args.output)}, args.report)
    return 0


def cmd_eval(args) -> int:
    weights, meta = load_weights(args.weights)
    if args.candidate:
        cand = load_candidate(args.candidate, args.space)
    else:
        doc = meta.get("extra", {}).get("candidate")
        if doc is None:
            raise CliError("USAGE", "weights carry no candidate; pass --candidate", 2)
        cand = load_candidate_doc(doc, args.space)
    skel = load_skeleton()
    graph = build_architecture(cand, skel)
    check_compatible(graph, weights)
    ws = build_windows(read_container(args.data), skel)
    scores = predict_proba(graph, weights, features_f32(ws.frames, skel))
    report = evaluate_videos(scores, ws.labels, ws.video_ids, threshold=args.threshold)
    report["graph_hash"] = graph.hash
    _emit(report, args.output)
    return 0


def load_candidate_doc(doc: dict, space_spec: str | None) -> Candidate:
    if space_spec:
        return space_mod.candidate_from_dict(doc, _space(space_spec))
    for name in ("builtin", "desk"):
        sp = resolve_space(name)
        if doc.get("space_hash") == sp.hash:
            return space_mod.candidate_from_dict(doc, sp)
    raise CliError("SCHEMA_ERROR", "stored candidate belongs to an unknown space; pass --space")


def cmd_features(args) -> int:
    skel = load_skeleton()
    ws = build_windows(read_container(args.input), skel)
    save_features(args.output, ws, skel, args.cutoff)
    print(f"{len(ws)} windows from {len(ws.videos())} videos -> {args.output}")
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(videos_per_class=args.videos_per_class, frames_per_video=args.frames,
                      noise_std=args.noise, seed=args.seed)
    seqs = generate_synthetic(cfg)
    if args.split:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        for name, part in zip(("train", "val", "test"), stratified_split(seqs, seed=args.seed)):
            write_container(out / f"{name}.jsonl", part)
        print(f"{len(seqs)} videos split into {out}/{{train,val,test}}.jsonl")
    else:
        write_container(args.output, seqs)
        print(f"{len(seqs)} videos -> {args.output}")
    return 0


def cmd_inspect(args) -> int:
    cand = load_candidate(args.candidate, args.space)
    graph = build_architecture(cand)
    if args.json:
        _emit({"candidate": cand.to_dict(), "graph_hash": graph.hash, **complexity(graph).to_dict()}, None)
    else:
        print(dump_architecture(graph, reference=True))
    return 0


def cmd_space(args) -> int:
    sp = _space(args.space)
    if args.cardinality:
        print(cardinality(sp))
        return 0
    if args.json:
        _emit(space_mod.serialize_space(sp), None)
        return 0
    print(f"space {sp.name} ({len(sp.groups)} groups, hash {sp.hash}, {cardinality(sp)} candidates)")
    for i, g in enumerate(sp.groups):
        print(f"  {i:>2} {g.name:<24} {g.kind:<13} {', '.join(map(str, g.options))}")
    for k, v in sp.fixed.items():
        print(f"     {k:<24} fixed         {v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="skelnas", description="Architecture search for skeleton graph-conv classifiers.")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("search", help="run the controller search end to end")
    s.add_argument("--config", help="search config JSON; flags override its fields")
    s.add_argument("--desk", action="store_true", help="start from the CPU-sized desk config")
    s.add_argument("--space", help="builtin, desk or a space document path")
    s.add_argument("--iterations", type=int)
    s.add_argument("--students", type=int, help="students per iteration")
    s.add_argument("--workers", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--student-epochs", type=int)
    s.add_argument("--final-epochs", type=int)
    s.add_argument("--train")
    s.add_argument("--val")
    s.add_argument("--test")
    s.add_argument("--output", help="run directory (checkpoints, log, weights, reports)")
    s.add_argument("--resume", action="store_true", help="continue from the run directory")
    s.set_defaults(func=cmd_search)

    t = sub.add_parser("train", help="train one candidate with the long budget")
    t.add_argument("--candidate", required=True, help="candidate document or best_choice")
    t.add_argument("--space")
    t.add_argument("--train")
    t.add_argument("--val")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int, default=1234)
    t.add_argument("--output", required=True, help="weights file (.npz)")
    t.add_argument("--report", help="training report JSON (default stdout)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a weights file on a container")
    e.add_argument("--weights", required=True)
    e.add_argument("--data", required=True, help="dataset container (.jsonl)")
    e.add_argument("--candidate")
    e.add_argument("--space")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--output", help="metrics report path (default stdout)")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("features", help="preprocess a container and dump feature tensors")
    f.add_argument("--input", required=True)
    f.add_argument("--output", required=True, help=".npz path")
    f.add_argument("--cutoff", type=float, default=5.0, help="acceleration low-pass cutoff in Hz")
    f.set_defaults(func=cmd_features)

    g = sub.add_parser("synth", help="generate a synthetic labelled container")
    g.add_argument("--output", required=True, help=".jsonl path, or a directory with --split")
    g.add_argument("--videos-per-class", type=int, default=20)
    g.add_argument("--frames", type=int, default=450)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=1234)
    g.add_argument("--split", action="store_true", help="write train/val/test containers")
    g.set_defaults(func=cmd_synth)

    i = sub.add_parser("inspect", help="layer listing with parameter and MAC totals")
    i.add_argument("--candidate", default="best_choice")
    i.add_argument("--space")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_inspect)

    c = sub.add_parser("space", help="print a search space or its cardinality")
    c.add_argument("--space")
    c.add_argument("--cardinality", action="store_true")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_space)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
        return args.func(args)
    except KeyboardInterrupt:
        print("error: INTERRUPTED: stopped by user", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every failure becomes one classified line
        cls, status = _classify(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {cls}: {msg}", file=sys.stderr)
        return status


if __name__ == "__main__":
    sys.exit(main())
