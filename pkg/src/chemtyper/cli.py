"""Command-line pipeline: build-ontology -> distant-label -> resolve -> train -> evaluate -> predict.

Every stage reads its declared inputs from the run directory given by
``--out``, writes only to its own sub-directory, and echoes the resolved
configuration there as ``config.json``.

Exit codes: 0 success, 2 bad or missing input, 3 a module contract was
violated (the module's message is printed verbatim).
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from chemtyper import metrics, ontology
from chemtyper import typer as ty
from chemtyper.encoders import EncoderConfig, Vocab
from chemtyper.errors import ContractError
from chemtyper.labeler import AnnotatedSentence, MentionSpan, read_corpus, read_jsonl, tag_document, tokenize, write_jsonl
from chemtyper.molecule import AtomVocab, SmilesError
from chemtyper.ontology import LabelSpace, TypedEntityDictionary
from chemtyper.resolver import FormatError, Linked, Resolver, make_resolver

log = logging.getLogger("chemtyper")

FIXTURES_ENV = "CHEMTYPER_FIXTURES"


class InputError(Exception):
    """A missing or unusable input; maps to exit code 2."""


# ---------------------------------------------------------------- config


def bundled_data() -> Path:
    return Path(str(resources.files("chemtyper") / "data"))


def load_config(args: argparse.Namespace) -> dict:
    path = Path(args.config) if args.config else bundled_data() / "config.json"
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {path} is not valid JSON: {exc}") from exc
    cfg = copy.deepcopy(cfg)
    base = path.parent
    paths = cfg.setdefault("paths", {})
    for key, value in list(paths.items()):
        if value is not None:
            paths[key] = str((base / value).resolve())
    if os.environ.get(FIXTURES_ENV):
        paths["fixtures"] = str(Path(os.environ[FIXTURES_ENV]).resolve())
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.ablation is not None:
        cfg["ablation"] = args.ablation
    if args.threshold is not None:
        cfg["threshold"] = args.threshold
    if args.resolver is not None:
        cfg.setdefault("resolver", {})["mode"] = args.resolver
    if "seed" not in cfg or not isinstance(cfg["seed"], int):
        raise InputError("an integer seed is required (config 'seed' or --seed)")
    if cfg.get("ablation", "full") not in ty.ABLATIONS:
        raise InputError(f"unknown ablation {cfg.get('ablation')!r}")
    return cfg


def require(path: Path, what: str) -> Path:
    if not path.exists():
        raise InputError(f"missing {what}: {path}")
    return path


def config_path(cfg: dict, key: str) -> Path:
    value = cfg.get("paths", {}).get(key)
    if value is None:
        raise InputError(f"config has no paths.{key}")
    return require(Path(value), f"input '{key}'")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def stage_dir(args, name: str) -> Path:
    out = Path(args.out) / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def upstream(args, stage: str, filename: str) -> Path:
    return require(Path(args.out) / stage / filename, f"upstream artifact from the {stage} stage")


def echo_config(out: Path, cfg: dict) -> None:
    (out / "config.json").write_text(dumps(cfg))


def build_resolver(cfg: dict) -> Resolver:
    rcfg = cfg.get("resolver", {})
    mode = rcfg.get("mode", "fixture")
    fixtures = config_path(cfg, "fixtures") if mode == "fixture" else None
    try:
        return make_resolver(mode, fixtures, rcfg.get("live"), rcfg.get("cache"))
    except (FormatError, OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc


# ---------------------------------------------------------------- stages


def cmd_build_ontology(args, cfg) -> int:
    ocfg = cfg.get("ontology", {})
    graph = ontology.CategoryGraph.load(config_path(cfg, "category_graph"))
    terms = ontology.load_terms(config_path(cfg, "dictionary"))
    syn_path = cfg["paths"].get("synonyms")
    synonyms = ontology.load_synonyms(require(Path(syn_path), "synonym table")) if syn_path else {}
    try:
        tree = ontology.build_tree(
            graph,
            ocfg.get("root", "Chemistry"),
            terms,
            max_depth=int(ocfg.get("max_depth", 3)),
            coverage_threshold=float(ocfg.get("coverage_threshold", 0.2)),
        )
    except ontology.MissingRootError as exc:
        raise InputError(f"MissingRootError: {exc}") from exc
    ontology.populate_entities(tree, graph.pages, synonyms)
    ontology.derive_other_nodes(tree)
    labels, dictionary = ontology.flatten(tree)
    summary = ontology.summarize(tree, dictionary)
    out = stage_dir(args, "ontology")
    (out / "tree.json").write_text(dumps(tree.to_json()))
    (out / "dictionary.json").write_text(dumps(dictionary.to_json()))
    (out / "labels.json").write_text(dumps(labels.to_json()))
    (out / "summary.json").write_text(dumps(summary))
    echo_config(out, cfg)
    print(f"ontology: {summary['nodes']} nodes, {summary['leaves']} leaves, {summary['entities']} entities")
    return 0


def split_documents(doc_ids: list[str], cfg: dict) -> dict[str, str]:
    """Deterministic document-level train/dev/test assignment."""
    scfg = cfg.get("split", {})
    order = sorted(set(doc_ids))
    rng = np.random.default_rng(cfg["seed"])
    order = [order[i] for i in rng.permutation(len(order))]
    n = len(order)
    n_test = max(1, round(n * float(scfg.get("test", 0.2)))) if n >= 3 else 0
    n_dev = max(1, round(n * float(scfg.get("dev", 0.2)))) if n >= 3 else 0
    assign = {}
    for i, doc in enumerate(order):
        assign[doc] = "test" if i < n_test else "dev" if i < n_test + n_dev else "train"
    return assign


def cmd_distant_label(args, cfg) -> int:
    dictionary = TypedEntityDictionary.from_json(json.loads(upstream(args, "ontology", "dictionary.json").read_text()))
    docs = read_corpus(config_path(cfg, "corpus"))
    if not docs:
        raise InputError("the corpus holds no documents")
    sentences: list[AnnotatedSentence] = []
    for doc_id, text in docs:
        sentences += tag_document(doc_id, text, dictionary)
    assign = split_documents([d for d, _ in docs], cfg)
    out = stage_dir(args, "labeled")
    write_jsonl(sentences, out / "all.jsonl")
    counts = {}
    for split in ("train", "dev", "test"):
        part = [s for s in sentences if assign[s.doc_id] == split]
        write_jsonl(part, out / f"{split}.jsonl")
        counts[split] = {"sentences": len(part), "mentions": sum(len(s.mentions) for s in part)}
    stats = {
        "documents": len(docs),
        "sentences": len(sentences),
        "mentions": sum(len(s.mentions) for s in sentences),
        "splits": counts,
        "sentence_splitter": "newline and standalone period",
    }
    (out / "stats.json").write_text(dumps(stats))
    echo_config(out, cfg)
    print(f"distant-label: {stats['sentences']} sentences, {stats['mentions']} mentions")
    return 0


def cmd_resolve(args, cfg) -> int:
    sentences = read_jsonl(upstream(args, "labeled", "all.jsonl"))
    resolver = build_resolver(cfg)
    surfaces = [m.surface for s in sentences for m in s.mentions]
    report = resolver.report(surfaces)
    report["mode"] = resolver.mode
    if resolver.store is not None:
        report["ingest"] = resolver.store.report.to_json()
    by_mention = {}
    for surface in surfaces:
        result = resolver.resolve(surface)
        by_mention[surface] = result.record.canonical_name if isinstance(result, Linked) else None
    report["resolved"] = dict(sorted(by_mention.items()))
    resolver.save_cache()
    out = stage_dir(args, "resolve")
    (out / "report.json").write_text(dumps(report))
    echo_config(out, cfg)
    print(
        f"resolve: {report['mentions']} mentions, {report['linked']} linked, "
        f"{report['unlinkable']} unlinkable ({100 * report['unlinkable_rate']:.1f}%)"
    )
    return 0


def build_model(cfg: dict, train_sents, resolver: Resolver, labels: LabelSpace) -> ty.ChemTyper:
    texts = [s.words for s in train_sents]
    graphs = []
    for s in train_sents:
        for m in s.mentions:
            result = resolver.resolve(m.surface)
            if isinstance(result, Linked):
                texts.append([t.surface for t in tokenize(result.record.description)])
                graphs.append(result.record.graph())
    enc = EncoderConfig.from_json(cfg.get("encoder", {}))
    return ty.ChemTyper(
        enc, Vocab.build(texts), AtomVocab.default(graphs), labels, ty.ABLATIONS[cfg.get("ablation", "full")], cfg["seed"]
    )


def train_config(cfg: dict) -> ty.TrainConfig:
    tcfg = dict(cfg.get("train", {}))
    tcfg["seed"] = cfg["seed"]
    tcfg["threshold"] = cfg.get("threshold", 0.5)
    return ty.TrainConfig.from_json(tcfg)


def cmd_train(args, cfg) -> int:
    train_sents = read_jsonl(upstream(args, "labeled", "train.jsonl"))
    dev_path = Path(args.out) / "labeled" / "dev.jsonl"
    dev_sents = read_jsonl(dev_path) if dev_path.exists() else []
    labels = LabelSpace.from_json(json.loads(upstream(args, "ontology", "labels.json").read_text()))
    resolver = build_resolver(cfg)
    model = build_model(cfg, train_sents, resolver, labels)
    model.check_widths()
    train_ex = ty.examples_from_sentences(model, train_sents, resolver)
    dev_ex = ty.examples_from_sentences(model, dev_sents, resolver)
    out = stage_dir(args, "model")
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    for old in ckpt.glob("epoch_*.json"):
        old.unlink()
    tcfg = train_config(cfg)
    result = ty.train(model, train_ex, tcfg, dev_ex, checkpoint_dir=ckpt, log_path=out / "train_log.csv")
    model.save(out / "model.json")
    model.vocab.save(out / "vocab.txt")
    linked = sum(ex.linked for ex in train_ex)
    (out / "data_report.json").write_text(
        dumps({"train_mentions": len(train_ex), "train_linked": linked, "train_unlinkable": len(train_ex) - linked,
               "dev_mentions": len(dev_ex), "parameters": model.store.num_values()})
    )
    echo_config(out, cfg)
    last = result.history[-1]
    print(f"train: {tcfg.epochs} epochs, final loss {last.train_loss:.6f}, dev micro-F1 {last.dev_micro_f1:.4f}")
    return 0


def label_sets(sentences: list[AnnotatedSentence]) -> list[tuple[tuple, frozenset]]:
    out = []
    for k, s in enumerate(sentences):
        for m in s.mentions:
            out.append(((s.doc_id, k, m.token_start, m.token_end), frozenset(m.labels)))
    return out


def predicted_sentences(model: ty.ChemTyper, sentences, resolver, threshold: float):
    """Copies of ``sentences`` whose mention labels are the model's decisions, plus probabilities."""
    names = model.label_space.names()
    out, probs = [], []
    for sent in sentences:
        mentions = []
        for m in sent.mentions:
            ex = model.prepare(sent, m, resolver.resolve(m.surface))
            pred = model.predict(ex, threshold)
            mentions.append(MentionSpan(m.token_start, m.token_end, m.surface, frozenset(names[i] for i in pred.predicted)))
            probs.append({names[i]: float(p) for i, p in enumerate(pred.probs)})
        out.append(AnnotatedSentence(sent.doc_id, sent.text, sent.tokens, mentions))
    return out, probs


def report_files(out: Path, reports: dict[str, metrics.EvalReport], name: str) -> None:
    (out / "report.json").write_text(dumps({k: v.to_json() for k, v in reports.items()}))
    table = metrics.format_table(reports, name)
    (out / "table.txt").write_text(table)
    print(table, end="")


def cmd_evaluate(args, cfg) -> int:
    out = stage_dir(args, "eval")
    if args.predictions or args.gold:
        if not (args.predictions and args.gold):
            raise InputError("--predictions and --gold must be given together")
        pred = label_sets(read_jsonl(require(Path(args.predictions), "predictions file")))
        gold = label_sets(read_jsonl(require(Path(args.gold), "gold file")))
        if [k for k, _ in pred] != [k for k, _ in gold]:
            raise ContractError("prediction and gold files do not list the same mentions in the same order")
        report = metrics.evaluate([p for _, p in pred], [g for _, g in gold])
        report_files(out, {"test": report}, "predictions")
        echo_config(out, cfg)
        return 0
    model = ty.ChemTyper.load(upstream(args, "model", "model.json"))
    resolver = build_resolver(cfg)
    threshold = float(cfg.get("threshold", 0.5))
    reports = {}
    for split in ("dev", "test"):
        path = Path(args.out) / "labeled" / f"{split}.jsonl"
        if split == "test":
            require(path, "upstream artifact from the labeled stage")
        elif not path.exists():
            continue
        gold_sents = read_jsonl(path)
        pred_sents, _ = predicted_sentences(model, gold_sents, resolver, threshold)
        if split == "test":
            write_jsonl(pred_sents, out / "test_predictions.jsonl")
        pred = [p for _, p in label_sets(pred_sents)]
        gold = [g for _, g in label_sets(gold_sents)]
        reports[split] = metrics.evaluate(pred, gold, labels=model.label_space.names())
    report_files(out, reports, f"chemtyper ({cfg.get('ablation', 'full')})")
    echo_config(out, cfg)
    return 0


def cmd_predict(args, cfg) -> int:
    model = ty.ChemTyper.load(upstream(args, "model", "model.json"))
    source = Path(args.input) if args.input else Path(args.out) / "labeled" / "test.jsonl"
    sentences = read_jsonl(require(source, "input sentences"))
    resolver = build_resolver(cfg)
    pred_sents, probs = predicted_sentences(model, sentences, resolver, float(cfg.get("threshold", 0.5)))
    out = stage_dir(args, "predict")
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        k = 0
        for sent in pred_sents:
            obj = sent.to_json()
            for m in obj["mentions"]:
                m["probs"] = probs[k]
                m["linked"] = isinstance(resolver.resolve(m["surface"]), Linked)
                k += 1
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
    echo_config(out, cfg)
    print(f"predict: {k} mentions typed -> {out / 'predictions.jsonl'}")
    return 0


def cmd_fixtures(args, cfg) -> int:
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("resolver", {})["mode"] = "fixture"
    if args.fixtures:
        cfg["paths"]["fixtures"] = str(Path(args.fixtures).resolve())
    resolver = build_resolver(cfg)
    if args.action == "check":
        print(dumps(resolver.store.report.to_json()), end="")
        return 0
    results = {}
    for name in args.names:
        r = resolver.resolve(name)
        results[name] = r.record.to_json() if isinstance(r, Linked) else None
    print(dumps(results), end="")
    return 0


# ---------------------------------------------------------------- entry point


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON (default: bundled synthetic config)")
    common.add_argument("--seed", type=int)
    common.add_argument("--ablation", choices=list(ty.ABLATIONS))
    common.add_argument("--threshold", type=float)
    common.add_argument("--resolver", choices=["fixture", "live"])
    common.add_argument("--out", default="out", help="run directory holding one sub-directory per stage")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="chemtyper", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build-ontology", parents=[common], help="build the type tree and typed dictionary")
    sub.add_parser("distant-label", parents=[common], help="tag the corpus with the typed dictionary")
    sub.add_parser("resolve", parents=[common], help="report linked / unlinkable mentions")
    sub.add_parser("train", parents=[common], help="train the typing model")
    ev = sub.add_parser("evaluate", parents=[common], help="score the model, or a predictions file against gold")
    ev.add_argument("--predictions")
    ev.add_argument("--gold")
    pr = sub.add_parser("predict", parents=[common], help="type mentions in a JSONL file")
    pr.add_argument("--input", help="JSONL sentences with mention spans (default: the test split)")
    fx = sub.add_parser("fixtures", parents=[common], help="inspect the resolver fixture store")
    fx.add_argument("action", choices=["check", "resolve"])
    fx.add_argument("names", nargs="*")
    fx.add_argument("--fixtures", help="fixture JSONL (overrides config and environment)")
    return parser


COMMANDS = {
    "build-ontology": cmd_build_ontology,
    "distant-label": cmd_distant_label,
    "resolve": cmd_resolve,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "fixtures": cmd_fixtures,
}


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, SmilesError, json.JSONDecodeError) as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
