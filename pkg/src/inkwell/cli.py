"""Command-line front end.

Batch commands (train, sweep, extract, ...) call the library directly and
write their outputs atomically with a manifest sidecar; ``serve`` hosts the
study API over HTTP.  Logging verbosity comes from the INKWELL_LOG
environment variable (DEBUG/INFO/WARNING/...).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import tempfile
import time
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .corpus import CorpusError, Dataset, LabelSpace, load_jsonl, save_jsonl, validate
from .objectives import LossWeights
from .rationale import (
    Rationale, avg_segment_count, extract, index_rationales, load_rationales,
    max_feasible_segments, random_rationale, save_rationales, word_budget,
)
from .trainer import Checkpoint, TrainConfig, TrainingError, evaluate, sweep, train

log = logging.getLogger(__name__)

DEFAULT_LABELS = "positive,negative"
LEVEL_PERCENTS = (10, 20, 30, 40, 50)


def _write_atomic(path: Path, writer: Callable[[Path], None]) -> None:
    """Write via a temp file in the destination directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _write_json(path: Path, payload) -> None:
    _write_atomic(path, lambda tmp: tmp.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"))


def _write_text(path: Path, text: str) -> None:
    _write_atomic(path, lambda tmp: tmp.write_text(text, encoding="utf-8"))


def _manifest(out_path: Path, args: argparse.Namespace) -> None:
    """Reproducibility sidecar next to every artifact."""
    skip = {"func"}
    payload = {
        "command": args.command,
        "arguments": {k: (str(v) if isinstance(v, Path) else v)
                      for k, v in vars(args).items() if k not in skip},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    _write_json(out_path.with_name(out_path.name + ".manifest.json"), payload)


def _label_space(args) -> LabelSpace:
    names = [s.strip() for s in args.labels.split(",") if s.strip()]
    return LabelSpace(names)


def _load_vocab(args, data_path: Path) -> Optional[set[str]]:
    vocab_path = Path(args.vocab) if getattr(args, "vocab", None) else None
    if vocab_path is None:
        candidate = data_path.with_suffix(".vocab.json")
        vocab_path = candidate if candidate.exists() else None
    if vocab_path is None:
        return None
    return set(json.loads(vocab_path.read_text(encoding="utf-8")))


def _load_dataset(args) -> Dataset:
    data_path = Path(args.data)
    vocab = _load_vocab(args, data_path)
    return load_jsonl(data_path, _label_space(args), vocab=vocab)


def _train_config(args, **overrides) -> TrainConfig:
    weights = LossWeights(continuity=args.lambda1, length_control=args.lambda2)
    fields = dict(
        method=args.method, length_level=args.length_level, epochs=args.epochs,
        seed=args.seed, weights=weights, temperature=args.temperature,
        temperature_start=args.temperature_start)
    fields.update(overrides)
    return TrainConfig(**fields)


# ----------------------------------------------------------- subcommands

def cmd_ingest(args) -> int:
    out = Path(args.out)
    if args.synthetic:
        from .synthetic import KEYWORDS, make_reviews, subword_vocab

        vocab = subword_vocab()
        dataset = make_reviews(seed=args.seed, vocab=vocab)
        _write_atomic(out, lambda tmp: save_jsonl(dataset, tmp))
        _write_json(out.with_suffix(".vocab.json"), sorted(vocab))
        _write_json(out.with_suffix(".keywords.json"),
                    {label: sorted(words) for label, words in KEYWORDS.items()})
    else:
        if not args.data:
            raise CorpusError("ingest needs --data or --synthetic")
        dataset = _load_dataset(args)
        problems = validate(dataset)
        if problems:
            for p in problems[:20]:
                print(f"invalid: {p}", file=sys.stderr)
            return 1
        _write_atomic(out, lambda tmp: save_jsonl(dataset, tmp))
    _manifest(out, args)
    sizes = {s: len(dataset.split(s)) for s in ("train", "val", "test")}
    print(f"wrote {out} ({sizes['train']} train / {sizes['val']} val / "
          f"{sizes['test']} test)")
    return 0


def cmd_train(args) -> int:
    dataset = _load_dataset(args)
    config = _train_config(args)
    ckpt = train(dataset, config)
    out = Path(args.out)
    _write_atomic(out, lambda tmp: ckpt.save(tmp))
    _manifest(out, args)
    print(f"wrote {out} (best epoch {ckpt.best_epoch}, "
          f"val weighted F1 {ckpt.best_val_f1:.4f})")
    return 0


def cmd_sweep(args) -> int:
    dataset = _load_dataset(args)
    config = _train_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoints = sweep(dataset, config)
    summary = {}
    for pct, ckpt in sorted(checkpoints.items()):
        path = out_dir / f"level_{pct}.json"
        _write_atomic(path, lambda tmp, c=ckpt: c.save(tmp))
        scores = evaluate(ckpt, dataset, split="test")
        summary[str(pct)] = {"checkpoint": path.name,
                             "accuracy": scores["accuracy"],
                             "weighted_f1": scores["weighted_f1"]}
        print(f"level {pct:>2}%: test acc {scores['accuracy']:.4f} "
              f"weighted F1 {scores['weighted_f1']:.4f}")
    summary_path = out_dir / "sweep.json"
    _write_json(summary_path, summary)
    _manifest(summary_path, args)
    return 0


def _sweep_checkpoints(sweep_dir: Path) -> dict[int, Checkpoint]:
    out = {}
    for pct in LEVEL_PERCENTS:
        path = sweep_dir / f"level_{pct}.json"
        if not path.exists():
            raise FileNotFoundError(f"missing sweep checkpoint {path}")
        out[pct] = Checkpoint.load(path)
    return out


def cmd_extract(args) -> int:
    from .model import identifier_logits

    dataset = _load_dataset(args)
    docs = dataset.split(args.split)
    if args.checkpoint:
        checkpoints = [Checkpoint.load(args.checkpoint)]
    elif args.sweep_dir:
        checkpoints = [c for _, c in sorted(_sweep_checkpoints(
            Path(args.sweep_dir)).items())]
    else:
        raise ValueError("extract needs --checkpoint or --sweep-dir")

    rationales: list[Rationale] = []
    for ckpt in checkpoints:
        idn, _ = ckpt.nets()
        vocab = ckpt.vocabulary()
        level = args.length_level if args.length_level else ckpt.config.length_level
        for doc in docs:
            scores = identifier_logits(idn, vocab.encode(doc.subtokens))
            rationales.append(extract(doc, scores, level, method="limitedink"))
    out = Path(args.out)
    _write_atomic(out, lambda tmp: save_rationales(rationales, tmp))
    _manifest(out, args)
    print(f"wrote {len(rationales)} rationales to {out}")
    return 0


def _matched_segment_counts(path: str) -> dict[int, int]:
    """Per-level segment count copied from extracted rationales.

    Matched baselines keep the comparison honest: a random rationale with
    the same budget but one long run is easier to read than the 2-3 spans
    the trained model tends to pick, so we mirror the mean span count.
    """
    reference = load_rationales(path)
    by_pct: dict[int, list[Rationale]] = {}
    for r in reference:
        by_pct.setdefault(round(r.length_level * 100), []).append(r)
    return {pct: max(1, round(avg_segment_count(group)))
            for pct, group in by_pct.items()}


def cmd_random_baseline(args) -> int:
    from . import rng as rngmod

    dataset = _load_dataset(args)
    docs = dataset.split(args.split)
    levels = [int(v) for v in args.levels.split(",") if v.strip()]
    matched = _matched_segment_counts(args.match) if args.match else {}
    rationales = []
    for pct in levels:
        level = pct / 100.0
        for doc in docs:
            gen = rngmod.generator(args.seed, "random-rationale", doc.doc_id, pct)
            budget = word_budget(level, doc.n_words)
            if pct in matched:
                segments = matched[pct]
            elif args.segments:
                segments = args.segments
            else:
                feasible = max_feasible_segments(doc.n_words, budget)
                segments = int(gen.integers(1, min(3, feasible) + 1))
            rationales.append(random_rationale(
                doc.doc_id, doc.n_words, budget, segments, gen, level=level))
    out = Path(args.out)
    _write_atomic(out, lambda tmp: save_rationales(rationales, tmp))
    _manifest(out, args)
    print(f"wrote {len(rationales)} random rationales to {out}")
    return 0


def cmd_eval(args) -> int:
    dataset = _load_dataset(args)
    ckpt = Checkpoint.load(args.checkpoint)
    scores = evaluate(ckpt, dataset, split=args.split)
    text = json.dumps(scores, indent=2, sort_keys=True)
    if args.out:
        _write_text(Path(args.out), text + "\n")
        _manifest(Path(args.out), args)
    print(text)
    return 0


def cmd_agreement(args) -> int:
    from .metrics import dataset_agreement, format_aligned

    dataset = _load_dataset(args)
    rationales = load_rationales(args.rationales)
    report = dataset_agreement(rationales, dataset)
    if args.out:
        _write_json(Path(args.out), report)
        _manifest(Path(args.out), args)
    print(format_aligned(report["cells"],
                         ["method", "length_level", "n_documents",
                          "precision", "recall", "f1"]))
    return 0


def cmd_ablate(args) -> int:
    from .metrics import ablation_report

    dataset = _load_dataset(args)
    config = _train_config(args)
    report = ablation_report(dataset, config, split=args.split)
    if args.out:
        _write_json(Path(args.out), report["rows"])
        _manifest(Path(args.out), args)
    print(report["text"])
    return 0


def cmd_plan_study(args) -> int:
    from .study import N_REVIEWS, N_WORKERS, build_plan, save_plan, select_study_docs, verify_plan

    dataset = _load_dataset(args)
    if args.sweep_dir:
        checkpoints = _sweep_checkpoints(Path(args.sweep_dir))
        docs = select_study_docs(checkpoints, dataset, n=N_REVIEWS)
    else:
        docs = dataset.split("test")[:N_REVIEWS]
        if len(docs) < N_REVIEWS:
            raise ValueError(f"test split has {len(docs)} docs; need {N_REVIEWS}")
    if args.workers:
        workers = [w.strip() for w in
                   Path(args.workers).read_text(encoding="utf-8").splitlines()
                   if w.strip()]
    else:
        workers = [f"w{idx:03d}" for idx in range(N_WORKERS)]
    plan = build_plan([d.doc_id for d in docs], workers, seed=args.seed)
    problems = verify_plan(plan)
    if problems:
        for p in problems[:20]:
            print(f"invalid plan: {p}", file=sys.stderr)
        return 1
    out = Path(args.out)
    _write_atomic(out, lambda tmp: save_plan(plan, tmp))
    _manifest(out, args)
    print(f"wrote plan with {len(plan.hits)} HITs, {plan.slot_count()} "
          f"assignment slots to {out}")
    return 0


def cmd_simulate_study(args) -> int:
    from .study import SimAnnotator, load_plan, save_responses, simulate

    dataset = _load_dataset(args)
    plan = load_plan(args.plan)
    rationales = index_rationales(load_rationales(args.rationales))
    keywords_path = Path(args.keywords) if args.keywords else (
        Path(args.data).with_suffix(".keywords.json"))
    keywords = {label: set(words) for label, words in
                json.loads(keywords_path.read_text(encoding="utf-8")).items()}
    annotator = SimAnnotator(keywords=keywords, guess_accuracy=args.guess_accuracy)
    docs = {d.doc_id: d for d in dataset.documents()}
    responses = simulate(plan, rationales, docs, annotator,
                         dataset.label_space.names, seed=args.seed,
                         participation=args.participation)
    out = Path(args.out)
    _write_atomic(out, lambda tmp: save_responses(responses, tmp))
    _manifest(out, args)
    print(f"wrote {len(responses)} responses to {out}")
    return 0


def cmd_analyze_study(args) -> int:
    from .study import analysis_csv, analysis_text, analyze, load_responses

    dataset = _load_dataset(args)
    responses = load_responses(args.responses)
    gold = {d.doc_id: d.label for d in dataset.documents()}
    report = analyze(responses, gold, dataset.label_space.names)
    if args.out:
        _write_json(Path(args.out), report)
        _manifest(Path(args.out), args)
    if args.csv:
        _write_text(Path(args.csv), analysis_csv(report))
    print(analysis_text(report))
    test = report.get("label_code_t_test")
    if test:
        print(f"label codes (limitedink vs random): "
              f"t = {test['statistic']:.4f}, df = {test['df']}, "
              f"p = {test['p_value']:.4g}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import load_app

    app = load_app(args.plan, args.data, args.rationales, args.log,
                   label_names=_label_space(args).names)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ----------------------------------------------------------------- parser

def _add_common(p: argparse.ArgumentParser, *, data: bool = True,
                out_required: bool = True) -> None:
    if data:
        p.add_argument("--data", required=True, help="corpus JSONL path")
        p.add_argument("--vocab",
                       help="subword vocabulary JSON (default: sibling .vocab.json)")
        p.add_argument("--labels", default=DEFAULT_LABELS,
                       help="comma-separated label names, in order")
    if out_required:
        p.add_argument("--out", required=True, help="output path")
    else:
        p.add_argument("--out", help="optional output path")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", default="limitedink",
                   choices=["limitedink", "sparse_n", "sparse_c", "sparse_ib",
                            "full_text"])
    p.add_argument("--length-level", type=float, default=0.2,
                   help="rationale budget as a fraction of words")
    p.add_argument("--epochs", type=int, default=TrainConfig().epochs)
    p.add_argument("--lambda1", type=float, default=LossWeights().continuity,
                   help="continuity (fused lasso) weight")
    p.add_argument("--lambda2", type=float, default=LossWeights().length_control,
                   help="length-control (sorted-mask) weight")
    p.add_argument("--temperature", type=float, default=TrainConfig().temperature,
                   help="final relaxation temperature (annealed from "
                        "--temperature-start)")
    p.add_argument("--temperature-start", type=float, default=1.0,
                   help="relaxation temperature at the first epoch")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inkwell",
        description="Length-controllable rationale models and the study "
                    "pipeline around them.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def new(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = new("ingest", cmd_ingest, "validate/convert a corpus, or generate one")
    p.add_argument("--data", help="raw corpus JSONL (omit with --synthetic)")
    p.add_argument("--vocab", help="subword vocabulary JSON")
    p.add_argument("--labels", default=DEFAULT_LABELS)
    p.add_argument("--out", required=True)
    p.add_argument("--synthetic", action="store_true",
                   help="generate the synthetic review corpus")

    p = new("train", cmd_train, "train one model")
    _add_common(p)
    _add_train_flags(p)

    p = new("sweep", cmd_sweep, "train one model per length level")
    _add_common(p)
    _add_train_flags(p)

    p = new("extract", cmd_extract, "extract rationales with a trained model")
    _add_common(p)
    p.add_argument("--checkpoint", help="single checkpoint path")
    p.add_argument("--sweep-dir", help="directory from the sweep command")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--length-level", type=float, default=0.0,
                   help="override the checkpoint's level (0 keeps it)")

    p = new("random-baseline", cmd_random_baseline,
            "random rationales at each length level")
    _add_common(p)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--levels", default=",".join(str(v) for v in LEVEL_PERCENTS),
                   help="comma-separated level percents")
    p.add_argument("--segments", type=int, default=0,
                   help="fixed span count (0 draws 1-3 per document)")
    p.add_argument("--match",
                   help="rationale file whose mean span count per level "
                        "the baseline copies")

    p = new("eval", cmd_eval, "score a checkpoint on a split")
    _add_common(p, out_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])

    p = new("agreement", cmd_agreement, "rationale overlap with gold evidence")
    _add_common(p, out_required=False)
    p.add_argument("--rationales", required=True)

    p = new("ablate", cmd_ablate, "train and score the ablation grid")
    _add_common(p, out_required=False)
    _add_train_flags(p)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])

    p = new("plan-study", cmd_plan_study, "build the counterbalanced study plan")
    _add_common(p)
    p.add_argument("--sweep-dir",
                   help="pick reviews the swept models get right")
    p.add_argument("--workers", help="file with one worker id per line")

    p = new("simulate-study", cmd_simulate_study,
            "run simulated annotators over a plan")
    _add_common(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--rationales", required=True)
    p.add_argument("--keywords",
                   help="label->keywords JSON (default: sibling .keywords.json)")
    p.add_argument("--participation", type=float, default=0.835)
    p.add_argument("--guess-accuracy", type=float, default=0.5)

    p = new("analyze-study", cmd_analyze_study, "summarize collected responses")
    _add_common(p, out_required=False)
    p.add_argument("--responses", required=True)
    p.add_argument("--csv", help="also write a level,method,accuracy CSV")

    p = new("serve", cmd_serve, "host the study over HTTP")
    _add_common(p, out_required=False)
    p.add_argument("--plan", required=True)
    p.add_argument("--rationales", required=True)
    p.add_argument("--log", required=True, help="append-only response log (JSONL)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    level_name = os.environ.get("INKWELL_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CorpusError, TrainingError, ValueError, KeyError,
            FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
