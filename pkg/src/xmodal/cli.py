"""``xmodal`` command line: preprocess, train, evaluate, retrieve.

Exit codes: 0 success, 2 usage or data error, 3 numerical failure.
``XMODAL_LOG`` sets the log level (default WARNING).
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict


from . import adapter as adapter_mod
from .adapter import load_checkpoint
from .config import load_config
from .data_model import Modality, Split, load_manifest, read_embedding_file
from .errors import NumericalFailure, ShapeError, XModalError
from .retrieval_eval import AudioIndex, metric_report, rank, rank_queries
from .text_prep import clean_description, join_tags, strip_markup
from .training import format_epoch_report, run_training, STRATEGIES

log = logging.getLogger("xmodal")


class UsageError(Exception):
    pass


def _adapt(adapters, dataset):
    for tower, dim in (("audio", dataset.audio_dim), ("text", dataset.text_dim)):
        if adapters[tower].in_dim != dim:
            raise ShapeError(f"checkpoint {tower} adapter expects {adapters[tower].in_dim} features, "
                             f"embeddings have {dim}")
    audio, _ = adapter_mod.forward_pooled(adapters["audio"], dataset.pooled_audio)
    text, _ = adapter_mod.forward_pooled(adapters["text"], dataset.pooled_text)
    return audio, text


def _audio_index(dataset, audio_vectors):
    first = {}
    for i, ex in enumerate(dataset.examples):
        first.setdefault(ex.label, i)
    return AudioIndex(list(first), audio_vectors[list(first.values())])


def cmd_preprocess(args):
    try:
        src = open(args.input, encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {args.input}: {exc.strerror}") from None
    records = truncated = 0
    out_lines = []
    with src:
        for lineno, line in enumerate(src, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                item_id = str(rec["item_id"])
                desc = rec.get("description", "")
                tags = rec.get("tags", [])
                if not isinstance(desc, str) or not isinstance(tags, list):
                    raise TypeError
                tags = [str(t).strip() for t in tags if str(t).strip()]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise UsageError(f"{args.input}: malformed record on line {lineno}") from None
            if len(strip_markup(desc)) > 500:
                truncated += 1
            out_lines.append(json.dumps({"item_id": item_id,
                                         "cleaned_description": clean_description(desc),
                                         "joined_tags": join_tags(tags)}, ensure_ascii=False))
            records += 1
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.writelines(line + "\n" for line in out_lines)
    print(f"records={records} truncated={truncated}", file=sys.stderr)
    return 0


def cmd_train(args):
    spec = load_config(args.config, strategy=args.strategy, seed=args.seed)
    datasets = spec.load_datasets()
    os.makedirs(args.out, exist_ok=True)
    adapters, reports = run_training(spec.config, datasets, datasets[spec.clean], checkpoint_dir=args.out)
    with open(os.path.join(args.out, "epochs.tsv"), "w", encoding="utf-8") as fh:
        fh.write(format_epoch_report(reports))
    summary = {"config": spec.config.to_dict(), "config_hash": spec.config.config_hash(),
               "stages": [{k: v for k, v in asdict(r).items() if k != "epochs"} for r in reports]}
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    for r in reports:
        print(f"stage {r.stage} ({r.kind}, {'+'.join(r.datasets)}): {len(r.epochs)} epochs, "
              f"best epoch {r.best_epoch} val mAP@10 {r.best_score:.3f}")
    return 0


def cmd_evaluate(args):
    adapters, _ = load_checkpoint(args.checkpoint)
    test = load_manifest(args.manifest, args.embedding_root).split(args.split)
    if len(test) == 0:
        raise UsageError(f"{args.manifest} has no {args.split} records")
    audio, text = _adapt(adapters, test)
    index = _audio_index(test, audio)
    results = rank_queries(index, [ex.pair_id for ex in test.examples], text,
                           [{ex.label} for ex in test.examples], k=10)
    report = metric_report(results)
    out = report.to_json() if args.format == "json" else report.to_tsv()
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)
    return 0


def cmd_retrieve(args):
    adapters, _ = load_checkpoint(args.checkpoint)
    ds = load_manifest(args.index, args.embedding_root)
    if args.split:
        ds = ds.split(args.split)
    if len(ds) == 0:
        raise UsageError("index manifest has no records")
    audio, _ = _adapt(adapters, ds)
    index = _audio_index(ds, audio)
    query = read_embedding_file(args.query_embedding, modality=Modality.TEXT)
    if query.F != adapters["text"].in_dim:
        raise ShapeError(f"query has {query.F} features, text adapter expects {adapters['text'].in_dim}")
    qvec, _ = adapter_mod.forward(adapters["text"], query.data)
    k = args.k
    if k > len(index):
        print(f"warning: k={k} exceeds index size {len(index)}, clamping", file=sys.stderr)
        k = len(index)
    for pos, (aid, score) in enumerate(rank(index, qvec, k), 1):
        print(f"{pos}\t{aid}\t{score:.6f}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="xmodal", description="Text-to-audio embedding alignment toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean raw descriptions and join tags")
    p.add_argument("--input", required=True, help="JSON lines with item_id, description, tags")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train adapters with a data strategy")
    p.add_argument("--config", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, help="overrides the config's strategy")
    p.add_argument("--out", required=True, help="checkpoint/report directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="Recall@1/5/10 and mAP@10 with jackknife CIs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--embedding-root")
    p.add_argument("--split", default="test", choices=[s.value for s in Split])
    p.add_argument("--format", default="tsv", choices=["tsv", "json"])
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("retrieve", help="top-k audio for one text query embedding")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True, help="manifest whose audio items form the index")
    p.add_argument("--embedding-root")
    p.add_argument("--split", choices=[s.value for s in Split])
    p.add_argument("--query-embedding", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_retrieve)
    return ap


def main(argv=None):
    level = os.environ.get("XMODAL_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"xmodal {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (XModalError, UsageError, OSError) as exc:
        print(f"xmodal {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
