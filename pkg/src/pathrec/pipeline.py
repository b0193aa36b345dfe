"""In-process glue: raw files -> sessions/instances -> graph -> embeddings -> trained model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .data_io import (
    Session,
    SessionReport,
    TrainInstance,
    build_sessions,
    load_interactions,
    make_instances,
    split_corpus,
)
from .kg import (
    EntityRegistry,
    KnowledgeGraph,
    add_cooccur,
    add_purchases,
    finalize,
    ingest_image_features,
    ingest_metadata,
    merge_duplicate_edges,
    merge_report,
    read_metadata,
    split_relations,
)
from .eval import MetricReport, evaluate, model_ranker
from .kg_embed import EmbeddingTable, pretrain
from .model import PathReasoner
from .trainer import Trainer, encode_instances

logger = logging.getLogger(__name__)


@dataclass
class PreparedData:
    sessions: list[Session]
    train: list[Session]
    valid: list[Session]
    test: list[Session]
    instances: dict[str, list[TrainInstance]]
    report: SessionReport


@dataclass
class GraphOptions:
    domain: str = "ecommerce"
    use_images: bool = True
    merge_edges: bool = True
    image_min_conf: float = 0.5
    image_top_k: int = 5


@dataclass
class BuiltGraph:
    graph: KnowledgeGraph
    merge: dict = field(default_factory=dict)


def prepare_data(interactions, min_item_count: int = 5, T: int = 5, seed: int = 0) -> PreparedData:
    report = SessionReport()
    sessions = build_sessions(load_interactions(interactions), min_item_count, report)
    train, valid, test = split_corpus(sessions, seed)
    # targets continue through the user's later sessions of the same split only, so no
    # training reward ever points at a held-out session
    instances = {
        name: make_instances(part, T)
        for name, part in (("train", train), ("valid", valid), ("test", test))
    }
    return PreparedData(sessions, train, valid, test, instances, report)


def build_graph(data: PreparedData, metadata=None, image_labels=None, options: GraphOptions | None = None) -> BuiltGraph:
    options = options or GraphOptions()
    item_kind = "movie" if options.domain == "movie" else "product"
    registry = EntityRegistry()
    triples = ingest_metadata(metadata, registry, options.domain) if metadata else []
    for s in data.sessions:
        for item in s.items:
            registry.add(item_kind, item)
    if options.use_images and image_labels:
        triples += ingest_image_features(image_labels, registry, options.image_min_conf, options.image_top_k)
    triples = split_relations(triples, registry.product_domain())
    stats = merge_report(triples)
    if options.merge_edges:
        triples = merge_duplicate_edges(triples)
    triples += add_purchases(data.train, registry)
    triples += add_cooccur(data.train, registry)
    graph = finalize(triples, registry)
    logger.info("graph: %d entities, %d triples", graph.n_entities, len(graph.triples))
    return BuiltGraph(graph, stats)


# config-driven stages ---------------------------------------------------------------------


def graph_options(config) -> GraphOptions:
    return GraphOptions(
        domain=config["kg.domain"],
        use_images=config["kg.use_images"],
        merge_edges=config["kg.merge_edges"],
        image_min_conf=config["kg.image_min_conf"],
        image_top_k=config["kg.image_top_k"],
    )


def prepare_from_config(config) -> PreparedData:
    return prepare_data(
        config.path("paths.interactions"), config["data.min_item_count"], config["training.T"], config["data.split_seed"]
    )


def build_from_config(config, data: PreparedData) -> BuiltGraph:
    metadata = config.path("paths.metadata")
    labels = config.path("paths.image_labels")
    return build_graph(
        data,
        read_metadata(metadata) if metadata else None,
        labels if labels else None,
        graph_options(config),
    )


def pretrain_from_config(config, graph: KnowledgeGraph) -> EmbeddingTable:
    return pretrain(
        graph,
        d=config["model.d"],
        epochs=config["embed.epochs"],
        lr=config["embed.lr"],
        margin=config["embed.margin"],
        seed=config["embed.seed"],
        batch_size=config["embed.batch_size"],
    )


def train_from_config(config, graph: KnowledgeGraph, table: EmbeddingTable, instances, metrics_path=None):
    model = PathReasoner(graph, table, config.model_config())
    trainer = Trainer(model, config.train_config())
    T = config["training.T"]
    encoded = [(prefix, t_list[:T]) for prefix, t_list in encode_instances(model, instances)]
    trainer.fit(encoded, metrics_path=metrics_path)
    return model, trainer


def eval_instances(config, model: PathReasoner, instances) -> list:
    return [x for x in encode_instances(model, instances) if len(x[0]) >= config["eval.min_prefix"]]


def evaluate_from_config(config, model: PathReasoner, instances) -> MetricReport:
    K = max(config["inference.K"], max(config["eval.ks"]))
    return evaluate(model_ranker(model, K, config["inference.widths"]), eval_instances(config, model, instances), config["eval.ks"])


def run_config(config, seed: int | None = None):
    """Whole pipeline in memory; ``seed`` replaces the embedding and training seeds."""
    if seed is not None:
        config = config.with_values({"embed.seed": seed, "training.seed": seed})
    data = prepare_from_config(config)
    graph = build_from_config(config, data).graph
    table = pretrain_from_config(config, graph)
    model, trainer = train_from_config(config, graph, table, data.instances["train"])
    report = evaluate_from_config(config, model, data.instances["test"])
    return report, trainer.history
