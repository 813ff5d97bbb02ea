"""Command-line entry point: ``kgreader <group> <command> [options]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .evalkit import build_report
from .kgstore import load_triples, save_triples
from .localgraph import dumps_graph, graph_stats
from .pipeline.experiment import (ExperimentConfig, Workspace, eval_examples, metadata_subsets, run_experiment,
                                  sweep_passages, synth_workspace)
from .pipeline.training import predict, train
from .reader import Reader

log = logging.getLogger("kgreader")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")


def _data(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=required, help="dataset directory (kg.tsv, lexicon.tsv, <split>.jsonl)")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _workspace(args, cfg: ExperimentConfig, out: Path) -> Workspace:
    data = getattr(args, "data", None) or cfg.data_dir
    if data:
        return Workspace.load(data)
    spec = cfg.synth
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    log.info("no --data given; generating a synthetic dataset under %s", out / "data")
    return synth_workspace(spec, out / "data")


# ------------------------------------------------------------------ commands


def cmd_kg_build(args) -> int:
    kg = load_triples(args.triples, dedupe=not args.keep_duplicates)
    out = _out(args, ".")
    save_triples(kg, out / "kg.tsv")
    print(f"{kg.n_entities} entities  {kg.n_relations} relations  {len(kg.triples)} triples")
    return 0


def cmd_data_synth(args) -> int:
    cfg = _config(args)
    spec = cfg.synth if args.seed is None else dataclasses.replace(cfg.synth, seed=args.seed)
    out = _out(args, "data")
    ws = synth_workspace(spec, out)
    sizes = "  ".join(f"{k}={len(v)}" for k, v in ws.splits.items())
    print(f"wrote {out}: {len(ws.kg.triples)} triples  {sizes}")
    return 0


def _graph_split(args, cfg):
    ws = Workspace.load(args.data)
    rcfg = cfg.reader.replace(vocab_size=len(ws.vocab))
    return ws, ws.prepare(args.split, rcfg)


def cmd_graphs_build(args) -> int:
    cfg = _config(args)
    ws, examples = _graph_split(args, cfg)
    out = _out(args, ".")
    with open(out / f"{args.split}.graphs.jsonl", "w", encoding="utf-8") as fh:
        for ex in examples:
            for j, g in enumerate(ex.graphs):
                fh.write(dumps_graph(g, ws.kg, example=ex.row.get("id", ""), passage=j) + "\n")
    print(f"wrote {out / (args.split + '.graphs.jsonl')}")
    return 0


def cmd_graphs_stats(args) -> int:
    cfg = _config(args)
    _, examples = _graph_split(args, cfg)
    stats = graph_stats([ex.graphs for ex in examples]).as_dict()
    text = json.dumps(stats, indent=2, sort_keys=True) + "\n"
    if args.out:
        (_out(args, ".") / "graph_stats.json").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args, "run")
    ws = _workspace(args, cfg, out)
    seed = cfg.train.seed
    rcfg = cfg.reader.replace(vocab_size=len(ws.vocab), ablation=args.variant or cfg.reader.ablation,
                              precision=cfg.train.precision)
    model = Reader(rcfg, seed=seed, rel_tokens=ws.preprocessor(rcfg).relation_tokens())
    res = train(model, ws.prepare("train", rcfg), cfg.train, ws.vocab, ws.prepare("dev", rcfg), out_dir=out)
    print(f"best dev EM {100 * res.best_dev_em:.2f} at step {res.best_step}; checkpoint {out / 'checkpoint'}")
    return 0


def cmd_eval(args) -> int:
    model = Reader.load(args.checkpoint)
    ws = Workspace.load(args.data)
    examples = ws.prepare(args.split, model.config, k=args.k or model.config.k)
    preds = predict(model, examples, ws.vocab, k=args.k)
    for p in preds:
        print(p)
    if args.out:
        out = _out(args, ".")
        report = build_report(eval_examples(examples, ws), {model.config.ablation: preds},
                              extra_subsets=metadata_subsets([ex.row for ex in examples]))
        (out / "predictions.txt").write_text("".join(p + "\n" for p in preds), encoding="utf-8")
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    if args.variants:
        cfg = dataclasses.replace(cfg, variants=tuple(args.variants.replace(",", " ").split()))
    out = _out(args, "ablate")
    ws = _workspace(args, cfg, out)
    result = run_experiment(cfg, ws, out_dir=out)
    sys.stdout.write(result.to_table())
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    model = Reader.load(args.checkpoint)
    ws = Workspace.load(args.data)
    ks = [int(k) for k in args.k.replace(",", " ").split()] if args.k else list(cfg.k_values)
    examples = ws.prepare(args.split, model.config, k=max(ks))
    res = sweep_passages(model, examples, ks, ws.vocab, out_dir=_out(args, "sweep"))
    sys.stdout.write(res.to_table())
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kgreader", description="KG-enhanced passage reader toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    groups = ap.add_subparsers(dest="group", required=True)

    kg = groups.add_parser("kg", help="knowledge-graph triple files").add_subparsers(dest="command", required=True)
    p = kg.add_parser("build", help="load, dedupe and re-save a triple file")
    _common(p)
    p.add_argument("triples")
    p.add_argument("--keep-duplicates", action="store_true")
    p.set_defaults(func=cmd_kg_build)

    data = groups.add_parser("data", help="synthetic datasets").add_subparsers(dest="command", required=True)
    p = data.add_parser("synth", help="generate a synthetic KG-grounded QA dataset")
    _common(p)
    p.set_defaults(func=cmd_data_synth)

    graphs = groups.add_parser("graphs", help="localized question-passage graphs")
    graphs = graphs.add_subparsers(dest="command", required=True)
    for name, fn, text in (("build", cmd_graphs_build, "write the local graph of every (question, passage)"),
                           ("stats", cmd_graphs_stats, "graph size statistics")):
        p = graphs.add_parser(name, help=text)
        _common(p)
        _data(p)
        p.add_argument("--split", default="test")
        p.set_defaults(func=fn)

    p = groups.add_parser("train", help="train one reader variant")
    _common(p)
    _data(p, required=False)
    p.add_argument("--variant", default=None, help="full, no_rel, no_att or baseline")
    p.set_defaults(func=cmd_train)

    p = groups.add_parser("eval", help="predict answers (one per line) with a checkpoint")
    _common(p)
    _data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = groups.add_parser("ablate", help="train and compare variants under one budget")
    _common(p)
    _data(p, required=False)
    p.add_argument("--variants", default=None, help="comma-separated variant list")
    p.set_defaults(func=cmd_ablate)

    p = groups.add_parser("sweep", help="EM as a function of the number of passages read")
    _common(p)
    _data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--k", default=None, help="comma-separated k values")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
