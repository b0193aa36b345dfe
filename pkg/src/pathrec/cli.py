"""``pathrec`` command line: build-kg, pretrain, train, evaluate, recommend, explain, ablate.

Every stage reads a ``key = value`` config, writes into a per-stage directory under the
workdir, and leaves a manifest.json describing how to reproduce it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import pipeline
from .config import Config, ConfigError, write_manifest
from .data_io import DataFormatError, read_instances, write_jsonl
from .eval import run_ablation, write_report_csv
from .inference import explain_session, recommend
from .kg import GraphError, KnowledgeGraph
from .kg_embed import EmbeddingTable
from .model import PathReasoner

logger = logging.getLogger("pathrec")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_MISSING = 0, 1, 2, 3


class MissingArtifact(FileNotFoundError):
    pass


class Workdir:
    def __init__(self, root):
        self.root = Path(root)

    @property
    def kg(self) -> Path:
        return self.root / "kg"

    @property
    def embed(self) -> Path:
        return self.root / "embed"

    @property
    def model(self) -> Path:
        return self.root / "model"

    @property
    def embeddings(self) -> Path:
        return self.embed / "embeddings.bin"

    @property
    def embedding_index(self) -> Path:
        return self.embed / "embeddings.index.tsv"

    @property
    def checkpoint(self) -> Path:
        return self.model / "checkpoint.bin"


def config_path(name: str) -> Path:
    """``toy`` names the bundled planted corpus unless a file of that name exists."""
    path = Path(name)
    if name == "toy" and not path.exists():
        return Path(__file__).parent / "toy" / "toy.conf"
    return path


def need(*paths: Path) -> None:
    for p in paths:
        if not p.exists():
            raise MissingArtifact(f"missing upstream artifact: {p}")


def _inputs(config: Config) -> dict:
    out = {}
    for key in ("paths.interactions", "paths.metadata", "paths.image_labels"):
        p = config.path(key)
        if p is not None:
            if not p.exists():
                raise MissingArtifact(f"{key} does not exist: {p}")
            out[key] = p
    return out


def _load_graph(wd: Workdir) -> KnowledgeGraph:
    need(wd.kg / "entities.tsv", wd.kg / "triples.tsv")
    return KnowledgeGraph.load(wd.kg)


def _load_table(wd: Workdir) -> EmbeddingTable:
    need(wd.embeddings, wd.embedding_index)
    return EmbeddingTable.load(wd.embeddings, wd.embedding_index)


def _load_model(wd: Workdir) -> PathReasoner:
    graph = _load_graph(wd)
    table = _load_table(wd)
    need(wd.checkpoint, wd.checkpoint.with_suffix(".json"))
    return PathReasoner.load(wd.checkpoint, graph, table)


# commands ---------------------------------------------------------------------------------


def cmd_build_kg(config: Config, wd: Workdir, args) -> None:
    inputs = _inputs(config)
    data = pipeline.prepare_from_config(config)
    built = pipeline.build_from_config(config, data)
    built.graph.save(wd.kg)
    for name in ("train", "valid", "test"):
        write_jsonl(wd.kg / f"sessions_{name}.jsonl", getattr(data, name))
        write_jsonl(wd.kg / f"instances_{name}.jsonl", data.instances[name])
    (wd.kg / "merge_report.json").write_text(json.dumps(built.merge, indent=2, sort_keys=True) + "\n")
    (wd.kg / "session_report.json").write_text(json.dumps(vars(data.report), indent=2, sort_keys=True) + "\n")
    write_manifest(wd.kg, "build-kg", config, inputs)
    print(json.dumps(built.graph.stats(), sort_keys=True))


def cmd_pretrain(config: Config, wd: Workdir, args) -> None:
    graph = _load_graph(wd)
    table = pipeline.pretrain_from_config(config, graph)
    wd.embed.mkdir(parents=True, exist_ok=True)
    table.save(wd.embeddings, wd.embedding_index, graph.registry)
    with open(wd.embed / "loss.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for e, loss in enumerate(table.loss_history, start=1):
            fh.write(f"{e},{loss!r}\n")
    write_manifest(wd.embed, "pretrain", config, {"triples": wd.kg / "triples.tsv"})


def cmd_train(config: Config, wd: Workdir, args) -> None:
    graph = _load_graph(wd)
    table = _load_table(wd)
    need(wd.kg / "instances_train.jsonl")
    instances = read_instances(wd.kg / "instances_train.jsonl")
    wd.model.mkdir(parents=True, exist_ok=True)
    model, trainer = pipeline.train_from_config(config, graph, table, instances, wd.model / "metrics.csv")
    model.save(wd.checkpoint, {"epoch": trainer.epoch})
    write_manifest(wd.model, "train", config, {"embeddings": wd.embeddings, "instances": wd.kg / "instances_train.jsonl"})


def cmd_evaluate(config: Config, wd: Workdir, args) -> None:
    model = _load_model(wd)
    split = args.split
    need(wd.kg / f"instances_{split}.jsonl")
    instances = read_instances(wd.kg / f"instances_{split}.jsonl")
    report = pipeline.evaluate_from_config(config, model, instances)
    out = wd.root / "eval"
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / f"metrics_{split}.csv", report.rows("PR4SR", config["training.seed"]))
    write_manifest(out, "evaluate", config, {"checkpoint": wd.checkpoint}, {"split": split})
    for k in sorted(report.hr):
        print(f"HR@{k}={report.hr[k]:.4f}  NDCG@{k}={report.ndcg[k]:.4f}  (n={report.n_instances})")


def _prefixes(wd: Workdir, args) -> list[list[str]]:
    if args.input:
        rows = []
        with open(args.input, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rows.append([str(x) for x in json.loads(line)["prefix"]])
        return rows
    need(wd.kg / "instances_test.jsonl")
    return [list(i.prefix) for i in read_instances(wd.kg / "instances_test.jsonl")]


def cmd_recommend(config: Config, wd: Workdir, args) -> None:
    model = _load_model(wd)
    registry = model.graph.registry
    sample_seed = config["inference.sample_seed"] if config["inference.sample"] else None
    lines = []
    for prefix in _prefixes(wd, args):
        try:
            ids = model.entity_ids(prefix)
        except KeyError as exc:
            raise DataFormatError(f"unknown item {exc.args[0]!r} in prefix {prefix}") from None
        recs = recommend(model, ids, config["inference.K"], config["inference.widths"], sample_seed)
        lines.append(json.dumps({"prefix": prefix, "recommendations": [r.to_json(registry) for r in recs]}, sort_keys=True))
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_explain(config: Config, wd: Workdir, args) -> None:
    model = _load_model(wd)
    sample_seed = config["inference.sample_seed"] if config["inference.sample"] else None
    K = args.k or config["inference.K"]
    for line in explain_session(model, args.prefix, K, config["inference.widths"], sample_seed):
        print(line)


def cmd_ablate(config: Config, wd: Workdir, args) -> None:
    inputs = _inputs(config)
    out = wd.root / "ablate"
    out.mkdir(parents=True, exist_ok=True)

    def run(cfg, seed):
        report, _ = pipeline.run_config(cfg, seed)
        logger.info("seed %d: HR@5 %.4f", seed, report.hr.get(5, float("nan")))
        return report

    rows = run_ablation(run, config, args.seeds, args.variants, out / "ablation.csv")
    write_manifest(out, "ablate", config, inputs, {"seeds": list(args.seeds), "variants": sorted({r["variant"] for r in rows})})


COMMANDS = {
    "build-kg": cmd_build_kg,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "recommend": cmd_recommend,
    "explain": cmd_explain,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pathrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="key = value config file ('toy' for the bundled corpus)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--workdir", help="artifact directory (default: paths.workdir, $PATHREC_WORKDIR, ./work)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "evaluate":
            p.add_argument("--split", choices=("valid", "test"), default="test")
        if name == "recommend":
            p.add_argument("--input", help="JSON-lines file of {\"prefix\": [...]} (default: test instances)")
            p.add_argument("--out", help="write JSON lines here instead of stdout")
        if name == "explain":
            p.add_argument("--prefix", nargs="+", required=True, help="session item ids in order")
            p.add_argument("-k", type=int, default=None)
        if name == "ablate":
            p.add_argument("--seeds", type=int, nargs="+", default=[0])
            p.add_argument("--variants", nargs="+", default=None)
    return parser


def resolve_workdir(args, config: Config) -> Path:
    if args.workdir:
        return Path(args.workdir)
    if config["paths.workdir"]:
        return config.path("paths.workdir")
    return Path(os.environ.get("PATHREC_WORKDIR", "work"))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        config = Config.load(config_path(args.config)) if args.config else Config()
        config.override(args.set)
        wd = Workdir(resolve_workdir(args, config))
        COMMANDS[args.command](config, wd, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (DataFormatError, GraphError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
