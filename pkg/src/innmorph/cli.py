"""Command-line interface: ``innmorph <command> ...``."""

import argparse
import logging
import os
import sys

import numpy as np

from . import evaluation
from .ablation import DEFAULT_GRID, parse_grid, run_ablation
from .embedding import extend_vocabulary, load_embeddings, random_distractors, save_embeddings
from .errors import (
    CheckpointError,
    DataFormatError,
    InnMorphError,
    TrainingError,
    VocabularyError,
)
from .flow import INFLECTION, LEMMATIZATION, InnModel
from .morphdata import (
    TAG_SEP,
    TagIndex,
    ToyLangConfig,
    build_tag_index,
    generate_toy_language,
    parse_dataset,
    split_dataset,
    write_dataset,
)
from .training import (
    TrainConfig,
    build_model,
    load_model,
    save_model,
    train_baseline,
    train_inflection,
    train_lemmatization,
)

log = logging.getLogger("innmorph")

EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_VOCAB = 4
EXIT_CHECKPOINT = 5
EXIT_TRAINING = 6


def _read_records(path):
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh)


def _read_table(path):
    with open(path, encoding="utf-8") as fh:
        return load_embeddings(fh)


def _data_splits(path, split_seed=0):
    """A gen-toy directory yields its train/dev/test files; a single TSV is split 80/10/10."""
    if os.path.isdir(path):
        return tuple(_read_records(os.path.join(path, f"{p}.tsv")) for p in ("train", "dev", "test"))
    return split_dataset(_read_records(path), (0.8, 0.1, 0.1), split_seed)


def _default_embeddings(data):
    if os.path.isdir(data):
        return os.path.join(data, "embeddings.vec")
    raise DataFormatError("--embeddings is required when --data is a file")


def _load_inference(args):
    model, meta = load_model(args.model, with_meta=True)
    extra = meta.get("extra", {})
    emb = args.embeddings or extra.get("embeddings")
    if not emb:
        raise CheckpointError("checkpoint does not record an embedding file; pass --embeddings")
    table = _read_table(emb)
    return model, table, TagIndex(extra.get("tags", [])), extra


def cmd_gen_toy(args):
    cfg = ToyLangConfig(args.lemmas, args.slots, args.tags_per_slot, args.dim, args.seed)
    records, table = generate_toy_language(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    parts = dict(zip(("train", "dev", "test"), split_dataset(records, (0.8, 0.1, 0.1), args.seed)))
    parts["all"] = records
    for name, recs in parts.items():
        with open(os.path.join(args.out_dir, f"{name}.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            write_dataset(recs, fh)
    with open(os.path.join(args.out_dir, "embeddings.vec"), "w", encoding="utf-8", newline="\n") as fh:
        save_embeddings(table, fh)
    print(f"wrote {len(records)} records and {len(table)} vectors to {args.out_dir}")
    return 0


def cmd_train(args):
    cfg = TrainConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = TrainConfig.from_text(fh.read())
    emb = args.embeddings or _default_embeddings(args.data)
    table = _read_table(emb)
    if os.path.isdir(args.data):
        train, dev, _ = _data_splits(args.data)
    else:
        train = _read_records(args.data)
        dev = _read_records(args.dev) if args.dev else None
    index = build_tag_index(train) if args.task == INFLECTION else build_tag_index([])
    if args.baseline:
        model, history = train_baseline(args.task, train, table, cfg, dev=dev, index=index)
    elif args.task == INFLECTION:
        model = build_model(INFLECTION, table.dim, len(index), cfg)
        model, history = train_inflection(model, train, table, cfg, dev=dev, index=index)
    else:
        model = build_model(LEMMATIZATION, table.dim, 0, cfg)
        model, history = train_lemmatization(model, train, table, cfg, dev=dev)
    extra = {
        "tags": index.tags,
        "embeddings": os.path.abspath(emb),
        "config": cfg.to_text(),
        "fingerprint": cfg.fingerprint(),
    }
    save_model(model, args.out, extra)
    log_path = args.log or args.out + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        for line in history.to_lines():
            fh.write(line + "\n")
    print(f"trained {len(history)} epochs; model -> {args.out}; log -> {log_path}")
    return 0


def _emit_reports(reports, report_path=None):
    print(evaluation.format_reports(reports))
    lines = [r.to_json() for r in reports]
    for line in lines:
        print(line)
    if report_path:
        with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def cmd_eval(args):
    model, table, index, extra = _load_inference(args)
    if os.path.isdir(args.data):
        records = _read_records(os.path.join(args.data, "test.tsv"))
    else:
        records = _read_records(args.data)
    if args.distractors:
        table = extend_vocabulary(table, random_distractors(args.distractors, table.dim, args.distractor_seed))
    report = evaluation.evaluate(
        model, records, table, index, name=os.path.basename(args.model), fingerprint=extra.get("fingerprint", "")
    )
    report.extra["distractors"] = args.distractors
    _emit_reports([report], args.report)
    return 0


def _parse_tags(text):
    return frozenset(t for t in (text or "").split(TAG_SEP) if t)


def cmd_inflect(args):
    model, table, index, _ = _load_inference(args)
    print(evaluation.predict_inflection(model, args.lemma, _parse_tags(args.tags), table, index))
    return 0


def cmd_analyze(args):
    model, table, index, _ = _load_inference(args)
    if not isinstance(model, InnModel):
        raise CheckpointError("analysis needs an INN checkpoint; baselines have no inverse")
    if args.sample:
        lemma, tags = evaluation.predict_analysis(
            model, args.surface, table, index, evaluation.SAMPLED, args.tau, np.random.default_rng(args.seed)
        )
    else:
        lemma, tags = evaluation.predict_analysis(model, args.surface, table, index)
    print(f"{lemma}\t{TAG_SEP.join(sorted(tags))}")
    return 0


def cmd_lemmatize(args):
    model, table, _, _ = _load_inference(args)
    print(evaluation.predict_lemma(model, args.surface, table))
    return 0


def cmd_sample_surfaces(args):
    model, table, _, _ = _load_inference(args)
    if not isinstance(model, InnModel):
        raise CheckpointError("sampling needs an INN checkpoint; baselines have no inverse")
    rng = np.random.default_rng(args.seed)
    surfaces = evaluation.sample_surfaces(model, args.lemma, args.n, args.tau, rng, table)
    for s in surfaces:
        print(s)
    print(f"# distinct: {len(set(surfaces))} of {len(surfaces)}")
    return 0


def cmd_ablate(args):
    grid_text = DEFAULT_GRID
    if args.config_grid:
        with open(args.config_grid, encoding="utf-8") as fh:
            grid_text = fh.read()
    grid = parse_grid(grid_text)
    if args.data:
        train, dev, test = _data_splits(args.data)
        table = _read_table(args.embeddings or _default_embeddings(args.data))
    else:
        records, table = generate_toy_language(ToyLangConfig(seed=args.seed))
        train, dev, test = split_dataset(records, (0.8, 0.1, 0.1), args.seed)
    reports = run_ablation(train, dev, test, table, grid)
    _emit_reports(reports, args.report)
    return EXIT_TRAINING if any("error" in r.extra for r in reports) else 0


def build_parser():
    p = argparse.ArgumentParser(prog="innmorph", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-toy", help="write a deterministic toy corpus and its embeddings")
    g.add_argument("--lemmas", type=int, default=200)
    g.add_argument("--slots", type=int, default=3)
    g.add_argument("--tags-per-slot", type=int, default=2)
    g.add_argument("--dim", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen_toy)

    t = sub.add_parser("train", help="train an INN (or the baseline) and save a checkpoint")
    t.add_argument("--task", choices=(INFLECTION, LEMMATIZATION), required=True)
    t.add_argument("--data", required=True, help="gen-toy directory or training TSV")
    t.add_argument("--dev", help="dev TSV when --data is a file")
    t.add_argument("--embeddings")
    t.add_argument("--config", help="key = value file overriding TrainConfig defaults")
    t.add_argument("--baseline", action="store_true", help="train the feed-forward baseline")
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="training log path (default: OUT.log.jsonl)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True, help="gen-toy directory (uses test.tsv) or TSV")
    e.add_argument("--embeddings")
    e.add_argument("--distractors", type=int, default=0)
    e.add_argument("--distractor-seed", type=int, default=0)
    e.add_argument("--report", help="also write the JSON-lines report here")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inflect", help="lemma + tags -> surface form")
    i.add_argument("--model", required=True)
    i.add_argument("--lemma", required=True)
    i.add_argument("--tags", default="", help="semicolon-separated tags")
    i.add_argument("--embeddings")
    i.set_defaults(func=cmd_inflect)

    a = sub.add_parser("analyze", help="surface form -> lemma and tags")
    a.add_argument("--model", required=True)
    a.add_argument("--surface", required=True)
    a.add_argument("--sample", action="store_true", help="sample z instead of the hardened z")
    a.add_argument("--tau", type=float, default=1.0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--embeddings")
    a.set_defaults(func=cmd_analyze)

    lz = sub.add_parser("lemmatize", help="surface form -> lemma")
    lz.add_argument("--model", required=True)
    lz.add_argument("--surface", required=True)
    lz.add_argument("--embeddings")
    lz.set_defaults(func=cmd_lemmatize)

    s = sub.add_parser("sample-surfaces", help="lemma + sampled z -> surface forms")
    s.add_argument("--model", required=True)
    s.add_argument("--lemma", required=True)
    s.add_argument("-n", type=int, default=10)
    s.add_argument("--tau", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--embeddings")
    s.set_defaults(func=cmd_sample_surfaces)

    ab = sub.add_parser("ablate", help="run a grid of configurations and print one table")
    ab.add_argument("--config-grid", help="INI grid file (default: built-in grid)")
    ab.add_argument("--data", help="gen-toy directory or TSV (default: toy corpus)")
    ab.add_argument("--embeddings")
    ab.add_argument("--seed", type=int, default=0, help="toy corpus / split seed")
    ab.add_argument("--report", help="also write the JSON-lines report here")
    ab.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except VocabularyError as exc:
        print(f"vocabulary error: {exc}", file=sys.stderr)
        return EXIT_VOCAB
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (InnMorphError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
