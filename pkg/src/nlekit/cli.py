"""Command-line entry point wiring all modules into reproducible commands.

Exit codes: 0 success; 2 usage; 3 missing or malformed input data;
4 domain validation or gate failure; 5 internal error.
"""

from __future__ import annotations

import argparse
import importlib
import json
import logging
import os
import sys

from .analysis import (AnalysisError, AnnotationRecord, aggregate,
                       paired_t_test, pair_score_maps, per_instance_scores)
from .corpus import (CorpusError, DatasetSplit, Task, attach_nles, load_comve,
                     load_esnli, load_winogrande, read_split,
                     sample_few_shot, snli_label_only_view, split_winogrande,
                     write_split)
from .engine import (DataResolver, EngineError, ToyBackend, predict_records,
                     run_recipe)
from .formatting import FormattingError, canonical_label, labels_match
from .metrics import (MetricReport, MetricsError, accuracy, corpus_bleu_n)
from .recipes import (FEW_SHOT_SIZE, RecipeError, RecipeName, build_plan,
                      format_plan, recipe_to_dict)
from .service import (AnnotationCoordinator, AnnotationHTTPServer, AppendLog,
                      ServiceError, StoreError, assemble_batches, export,
                      join_predictions, read_batches, write_batches)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_VALIDATION = 4
EXIT_INTERNAL = 5

DEFAULT_SEED = 1
DEFAULT_BEAM = 5
DEFAULT_WG_SPLIT_SEED = 1

CHILD_PREFIX = {Task.WINOGRANDE: "wg", Task.COMVE: "comve"}


def _write_json(path: str, obj: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _read_ndjson(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def _write_ndjson(path: str, records: list[dict]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True,
                                separators=(",", ":")) + "\n")


def _child_task(name: str) -> Task:
    try:
        task = Task(name)
    except ValueError:
        raise RecipeError(f"unknown child task {name!r}; expected one of "
                          f"{[t.value for t in CHILD_PREFIX]}") from None
    if task not in CHILD_PREFIX:
        raise RecipeError(f"{name!r} is a parent task, not a child task")
    return task


def _make_backend(spec: str):
    if spec == "toy":
        return ToyBackend()
    if ":" not in spec:
        raise RecipeError(
            f"unknown backend {spec!r}; use 'toy' or 'module:factory'")
    module_name, attr = spec.split(":", 1)
    try:
        factory = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise RecipeError(f"cannot load backend {spec!r}: {exc}") from exc
    return factory()


def _load_nle_annotations(path: str) -> list[tuple[str, str]]:
    return [(str(r["id"]), str(r["nle"])) for r in _read_ndjson(path)]


# ── commands ─────────────────────────────────────────────────────────────────

def cmd_prepare(args) -> int:
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    if args.task == "esnli":
        splits = load_esnli(args.raw_dir)
        for name, split in splits.items():
            write_split(split, os.path.join(out, f"esnli-{name}.ndjson"))
    elif args.task == "winogrande":
        raw = load_winogrande(args.raw_dir)
        wg_train, wg_dev = split_winogrande(raw["train"], args.seed)
        wg_test = DatasetSplit("test", raw["dev"].examples,
                               raw["dev"].provenance)
        named = {"train": wg_train, "dev": wg_dev, "test": wg_test}
        for name in named:
            nle_path = os.path.join(args.raw_dir, f"nles_{name}.ndjson")
            if os.path.exists(nle_path):
                named[name] = attach_nles(named[name],
                                          _load_nle_annotations(nle_path))
        for name, split in named.items():
            write_split(split, os.path.join(out, f"wg-{name}.ndjson"))
        fewshot = sample_few_shot(named["train"], FEW_SHOT_SIZE, args.seed)
        write_split(fewshot, os.path.join(out, "wg-fewshot.ndjson"))
    elif args.task == "comve":
        splits = load_comve(args.raw_dir)
        for name, split in splits.items():
            write_split(split, os.path.join(out, f"comve-{name}.ndjson"))
        fewshot = sample_few_shot(splits["train"], FEW_SHOT_SIZE, args.seed)
        write_split(fewshot, os.path.join(out, "comve-fewshot.ndjson"))
    else:
        raise CorpusError(f"unknown task {args.task!r}")
    print(f"prepared {args.task} splits in {out}")
    return EXIT_OK


def cmd_plan(args) -> int:
    plan = build_plan(RecipeName(args.recipe), _child_task(args.child))
    if args.out:
        _write_json(args.out, recipe_to_dict(plan))
        print(f"wrote plan to {args.out}")
    else:
        print(format_plan(plan))
    return EXIT_OK


def _build_resolver(data_dir: str, child: Task) -> DataResolver:
    prefix = CHILD_PREFIX[child]
    paths = {
        "esnli/train": os.path.join(data_dir, "esnli-train.ndjson"),
        "esnli/dev": os.path.join(data_dir, "esnli-dev.ndjson"),
        "child/train": os.path.join(data_dir, f"{prefix}-train.ndjson"),
        "child/dev": os.path.join(data_dir, f"{prefix}-dev.ndjson"),
        "child/fewshot": os.path.join(data_dir, f"{prefix}-fewshot.ndjson"),
    }
    splits = {key: read_split(path) for key, path in paths.items()
              if os.path.exists(path)}
    if "esnli/train" in splits:
        splits["snli/train"] = snli_label_only_view(splits["esnli/train"])
    if not splits:
        raise CorpusError(f"no split files found under {data_dir}")
    return DataResolver(splits, child)


def cmd_train(args) -> int:
    child = _child_task(args.child)
    plan = build_plan(RecipeName(args.recipe), child)
    resolver = _build_resolver(args.data_dir, child)
    backend = _make_backend(args.backend)
    os.makedirs(args.run_dir, exist_ok=True)
    config = {"recipe": args.recipe, "child": args.child, "seed": args.seed,
              "backend": args.backend, "beam": args.beam,
              "max_len": args.max_len, "data_dir": args.data_dir}
    _write_json(os.path.join(args.run_dir, "config.json"), config)
    _write_json(os.path.join(args.run_dir, "plan.json"),
                recipe_to_dict(plan))
    final, manifest = run_recipe(backend, plan, args.seed, resolver,
                                 run_dir=args.run_dir, beam_width=args.beam,
                                 max_len=args.max_len)
    winners = [s["points"][s["winner"]] for s in manifest["stages"]]
    last = winners[-1]
    print(f"run complete: {len(manifest['stages'])} stage(s); final winner "
          f"lr={last['lr']:g} epochs={last['epochs']} "
          f"criterion={last['criterion_value']:.6g}")
    print(f"artifacts in {args.run_dir}")
    return EXIT_OK


def cmd_predict(args) -> int:
    backend = _make_backend(args.backend)
    with open(args.checkpoint, "rb") as fh:
        backend.initialize(fh.read())
    split = read_split(args.split)
    records = predict_records(backend, split, beam_width=args.beam,
                              max_len=args.max_len,
                              with_explanation=not args.label_only)
    _write_ndjson(args.out, records)
    print(f"wrote {len(records)} predictions to {args.out}")
    return EXIT_OK


def cmd_score_auto(args) -> int:
    split = read_split(args.split)
    predictions = {r["id"]: r for r in _read_ndjson(args.predictions)}
    missing = [e.id for e in split if e.id not in predictions]
    if missing:
        raise MetricsError(
            f"predictions missing for {len(missing)} example(s), "
            f"first {missing[:3]}")
    predicted = [predictions[e.id]["label"] for e in split]
    gold = [canonical_label(e) for e in split]
    accuracy_pct = accuracy(predicted, gold)
    with_refs = [e for e in split if e.nles]
    candidates = [predictions[e.id]["nle"] for e in with_refs]
    references = [list(e.nles) for e in with_refs]
    bleu = ({n: corpus_bleu_n(candidates, references, n)
             for n in (1, 2, 3, 4)} if with_refs else {})
    report = MetricReport(accuracy_pct=accuracy_pct, bleu=bleu,
                          n_examples=len(split))
    _write_json(args.out, report.to_dict())
    summary = f"accuracy {accuracy_pct:.2f}% over {len(split)} examples"
    if bleu:
        summary += "; " + ", ".join(f"BLEU-{n} {bleu[n]:.2f}"
                                    for n in sorted(bleu))
    print(summary)
    return EXIT_OK


def cmd_humaneval_assemble(args) -> int:
    split = read_split(args.split)
    predictions = join_predictions(split, _read_ndjson(args.predictions))
    gold_nles = {e.id: e.nles[0] for e in split if e.nles}
    batches = assemble_batches(predictions, gold_nles, args.seed)
    write_batches(batches, args.out)
    n_items = sum(len(b.items) for b in batches)
    print(f"assembled {len(batches)} batch(es) covering {n_items} "
          f"model-correct instance(s) into {args.out}")
    return EXIT_OK


def cmd_humaneval_serve(args) -> int:
    batches = read_batches(args.batches)
    coordinator = AnnotationCoordinator(batches, AppendLog(args.store))
    server = AnnotationHTTPServer((args.host, args.port), coordinator,
                                  args.operator_token)
    host, port = server.server_address[:2]
    print(f"serving {len(batches)} batch(es) on http://{host}:{port}")
    print(f"operator token: {server.operator_token}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        server.server_close()
    return EXIT_OK


def _accepted_records(store_path: str) -> list[AnnotationRecord]:
    store = AppendLog(store_path)
    try:
        snapshot = export(store)
    finally:
        store.close()
    return [AnnotationRecord.from_dict(json.loads(line))
            for line in snapshot.splitlines() if line.strip()]


def cmd_humaneval_report(args) -> int:
    split = read_split(args.split)
    predictions = {r["id"]: r for r in _read_ndjson(args.predictions)}
    model_correct = {}
    for e in split:
        if e.id not in predictions:
            raise AnalysisError(f"no prediction for example {e.id!r}")
        model_correct[e.id] = labels_match(predictions[e.id]["label"],
                                           canonical_label(e))
    records = _accepted_records(args.store)
    report = aggregate(records, model_correct)
    bundle = {"model_report": report.to_dict(),
              "per_instance_scores": per_instance_scores(records)}
    _write_json(args.out, bundle)
    print(f"NLE score {report.nle_score:.1f} over {report.n_rated} "
          f"rating(s); task accuracy {report.task_accuracy_pct:.2f}%")
    return EXIT_OK


def cmd_significance(args) -> int:
    bundle_a = _read_json(args.a)
    bundle_b = _read_json(args.b)
    paired = pair_score_maps(
        bundle_a["model_report"]["correct_instance_ids"],
        bundle_a["per_instance_scores"],
        bundle_b["model_report"]["correct_instance_ids"],
        bundle_b["per_instance_scores"])
    result = paired_t_test(paired.scores_a, paired.scores_b)
    significant = result.p_one_tailed < 0.05
    record = {"a": args.a, "b": args.b, "n_pairs": len(paired.instance_ids),
              "t": result.t, "p_one_tailed": result.p_one_tailed,
              "significant_at_0.05": significant,
              "degenerate": result.degenerate}
    if args.out:
        _write_json(args.out, record)
    print(f"n={record['n_pairs']}  t={result.t:.4f}  "
          f"p={result.p_one_tailed:.6f}  "
          f"significant at 0.05: {'yes' if significant else 'no'}")
    return EXIT_OK


# ── argument parsing ─────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlekit",
        description="Few-shot transfer of natural language explanations: "
                    "data preparation, staged training, scoring, and "
                    "human evaluation.")
    parser.add_argument("--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="normalize raw corpora into splits")
    p.add_argument("--task", required=True,
                   choices=["esnli", "winogrande", "comve"])
    p.add_argument("--raw-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_WG_SPLIT_SEED)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("plan", help="compile a training recipe")
    p.add_argument("--recipe", required=True,
                   choices=[r.value for r in RecipeName])
    p.add_argument("--child", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("train", help="run a recipe's staged grid search")
    p.add_argument("--recipe", required=True,
                   choices=[r.value for r in RecipeName])
    p.add_argument("--child", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--backend", default="toy")
    p.add_argument("--beam", type=int, default=DEFAULT_BEAM)
    p.add_argument("--max-len", type=int, default=64)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="decode a split with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="toy")
    p.add_argument("--beam", type=int, default=DEFAULT_BEAM)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--label-only", action="store_true",
                   help="decode without requesting explanations")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score-auto",
                       help="accuracy and BLEU against reference NLEs")
    p.add_argument("--predictions", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score_auto)

    he = sub.add_parser("humaneval", help="human evaluation workflow")
    hesub = he.add_subparsers(dest="subcommand", required=True)

    p = hesub.add_parser("assemble", help="build shuffled annotation batches")
    p.add_argument("--predictions", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_humaneval_assemble)

    p = hesub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--batches", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8780)
    p.add_argument("--operator-token")
    p.set_defaults(func=cmd_humaneval_serve)

    p = hesub.add_parser("report", help="aggregate accepted annotations")
    p.add_argument("--store", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_humaneval_report)

    p = sub.add_parser("significance",
                       help="paired one-tailed t-test between two reports")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_significance)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CorpusError, FileNotFoundError, StoreError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FormattingError, RecipeError, MetricsError, AnalysisError,
            ServiceError, EngineError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
