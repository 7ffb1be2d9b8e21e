"""Command-line pipeline: ingest -> build-graph -> gen-trees -> train ->
encode -> eval, plus a grid sweep.

A single JSON config drives every stage; any flag overrides its config
key.  Stages cache their outputs by a content hash of their inputs and
refuse to combine artifacts from different lineages.  Exit codes: 0 ok,
2 config error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import corpus as corpus_mod
from . import forest as forest_mod
from . import graph as graph_mod
from . import hashcodes as codes_mod
from . import model as model_mod
from . import trainer as trainer_mod
from .errors import ConfigError, DataError, DivergenceError, GraphHashError

logger = logging.getLogger(__name__)

LATENT_GRID = (16, 32, 64, 128)
BATCH_GRID = (32, 64, 128)
LR_GRID = (0.0005, 0.001, 0.003)
TEMP_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))
BETA_GRID = tuple(round(0.01 * i, 2) for i in range(1, 11))
ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))
TREES_GRID = tuple(range(1, 21))
NEIGHBOR_GRID = tuple(range(1, 21))


@dataclass
class PipelineConfig:
    corpus_path: str = ""
    corpus_format: str = "bow-text"
    tfidf: bool = True
    dataset_name: str = "dataset"
    affinity_k: int = 10
    affinity_metric: str = "cosine"
    affinity_bandwidth: float | None = None
    m_trees: int = 5
    alpha: float = 0.5
    forest_seed: int = 0
    latent_dim: int = 64
    sigmoid_temp: float = 0.3
    batch_size: int = 64
    learning_rate: float = 0.001
    kl_weight: float = 0.05
    lam: float = 0.99
    epochs: int = 50
    train_seed: int = 0
    patience: int = 10
    ablation: str = "full"
    eval_k: int = 100
    output_dir: str = "out"
    checkpoint_name: str = "checkpoint.npz"
    sweep: dict = field(default_factory=dict)

    # config-file key -> attribute, grouped the way the JSON nests them
    SCHEMA = {
        "corpus": {"path": "corpus_path", "format": "corpus_format", "tfidf": "tfidf",
                   "dataset_name": "dataset_name"},
        "affinity": {"k": "affinity_k", "metric": "affinity_metric",
                     "bandwidth": "affinity_bandwidth"},
        "forest": {"m_trees": "m_trees", "alpha": "alpha", "seed": "forest_seed"},
        "model": {"latent_dim": "latent_dim", "sigmoid_temp": "sigmoid_temp"},
        "train": {"batch_size": "batch_size", "learning_rate": "learning_rate",
                  "kl_weight": "kl_weight", "lam": "lam", "epochs": "epochs",
                  "seed": "train_seed", "patience": "patience", "ablation": "ablation"},
        "eval": {"k": "eval_k"},
    }

    @classmethod
    def from_file(cls, path: str | None) -> "PipelineConfig":
        cfg = cls()
        if path is None:
            return cfg
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        for section, mapping in cls.SCHEMA.items():
            for key, value in raw.get(section, {}).items():
                if key not in mapping:
                    raise ConfigError(f"unknown config key {section}.{key}")
                setattr(cfg, mapping[key], value)
        for key in ("output_dir", "checkpoint_name", "sweep"):
            if key in raw:
                setattr(cfg, key, raw[key])
        known = set(cls.SCHEMA) | {"output_dir", "checkpoint_name", "sweep"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        return cfg

    def apply_overrides(self, args: argparse.Namespace) -> None:
        for attr in vars(self):
            value = getattr(args, attr, None)
            if value is not None:
                setattr(self, attr, value)

    def validate_grids(self, allow_out_of_grid: bool = False) -> None:
        """Check hyperparameters against the published search grids."""
        if allow_out_of_grid:
            return
        checks = [
            ("model.latent_dim", self.latent_dim, LATENT_GRID, False),
            ("train.batch_size", self.batch_size, BATCH_GRID, False),
            ("train.learning_rate", self.learning_rate, LR_GRID, True),
            ("model.sigmoid_temp", self.sigmoid_temp, TEMP_GRID, True),
            ("train.kl_weight", self.kl_weight, BETA_GRID, True),
            ("forest.m_trees", self.m_trees, TREES_GRID, False),
            ("forest.alpha", self.alpha, ALPHA_GRID, True),
            ("affinity.k", self.affinity_k, NEIGHBOR_GRID, False),
        ]
        for name, value, grid, approx in checks:
            ok = (
                any(np.isclose(value, g, rtol=0, atol=1e-9) for g in grid)
                if approx
                else value in grid
            )
            if not ok:
                raise ConfigError(
                    f"{name}={value} is outside the standard grid {grid}; "
                    "pass --allow-out-of-grid to override"
                )

    # ------ derived paths and sub-configs

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    @property
    def ingested_corpus(self) -> str:
        return self.path("corpus.bow")

    @property
    def graph_file(self) -> str:
        return self.path("graph.txt")

    @property
    def forest_file(self) -> str:
        return self.path("forest.txt")

    @property
    def checkpoint_file(self) -> str:
        return self.path(self.checkpoint_name)

    def affinity_config(self) -> graph_mod.AffinityConfig:
        return graph_mod.AffinityConfig(
            k=self.affinity_k, metric=self.affinity_metric, bandwidth=self.affinity_bandwidth
        )

    def forest_config(self) -> forest_mod.TreeGenConfig:
        return forest_mod.TreeGenConfig(
            m_trees=self.m_trees, alpha=self.alpha, rng_seed=self.forest_seed
        )

    def model_config(self, vocab_size: int) -> model_mod.ModelConfig:
        return model_mod.ModelConfig(
            latent_dim=self.latent_dim, vocab_size=vocab_size, sigmoid_temp=self.sigmoid_temp
        )

    def train_config(self) -> trainer_mod.TrainConfig:
        return trainer_mod.TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            kl_weight=self.kl_weight,
            epochs=self.epochs,
            lam=self.lam,
            rng_seed=self.train_seed,
            eval_k=self.eval_k,
            patience=self.patience,
            ablation=self.ablation,
        )


# ---------------------------------------------------------------------------
# content hashes and lineage


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _graph_inputs_hash(cfg: PipelineConfig) -> str:
    corpus_hash = sha256_file(cfg.ingested_corpus)
    spec = json.dumps(
        {"k": cfg.affinity_k, "metric": cfg.affinity_metric, "bandwidth": cfg.affinity_bandwidth},
        sort_keys=True,
    )
    return sha256_text(corpus_hash + spec)


def _forest_inputs_hash(cfg: PipelineConfig) -> str:
    graph_hash = sha256_file(cfg.graph_file)
    spec = json.dumps(
        {"m_trees": cfg.m_trees, "alpha": cfg.alpha, "seed": cfg.forest_seed}, sort_keys=True
    )
    return sha256_text(graph_hash + spec)


def _check_cached(path: str, expected_hash: str) -> bool:
    if not os.path.exists(path):
        return False
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            if key.strip() == "inputs-hash":
                return value.strip() == expected_hash
    return False


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(cfg: PipelineConfig) -> None:
    if not cfg.corpus_path:
        raise ConfigError("no corpus path given (corpus.path or --corpus-path)")
    loaded = corpus_mod.load_corpus(cfg.corpus_path, cfg.corpus_format)
    if cfg.tfidf:
        loaded = corpus_mod.tfidf_transform(loaded)
    os.makedirs(cfg.output_dir, exist_ok=True)
    corpus_mod.save_corpus(loaded, cfg.ingested_corpus)
    sizes = {name: len(rows) for name, rows in loaded.split.items()}
    print(
        f"ingested {cfg.corpus_path}: N={loaded.n_docs} |V|={loaded.vocab_size} "
        f"split train/val/test = {sizes['train']}/{sizes['val']}/{sizes['test']}"
    )
    print(f"wrote {cfg.ingested_corpus} (tfidf={cfg.tfidf})")


def _require(path: str, hint: str) -> None:
    if not os.path.exists(path):
        raise DataError(f"missing artifact {path}; run `graphhash {hint}` first")


def cmd_build_graph(cfg: PipelineConfig) -> str:
    _require(cfg.ingested_corpus, "ingest")
    inputs_hash = _graph_inputs_hash(cfg)
    if _check_cached(cfg.graph_file, inputs_hash):
        print(f"cache hit: {cfg.graph_file} is up to date")
        return cfg.graph_file
    loaded = corpus_mod.load_corpus(cfg.ingested_corpus)
    g = graph_mod.build_knn_graph(loaded, cfg.affinity_config())
    graph_mod.save_graph(g, cfg.graph_file, {"inputs-hash": inputs_hash})
    comps = len(graph_mod.connected_components(g))
    print(
        f"built graph: {g.n_nodes} nodes, {g.n_edges} edges, {comps} connected component(s)"
    )
    print(f"wrote {cfg.graph_file}")
    return cfg.graph_file


def cmd_gen_trees(cfg: PipelineConfig) -> str:
    _require(cfg.ingested_corpus, "ingest")
    _require(cfg.graph_file, "build-graph")
    inputs_hash = _forest_inputs_hash(cfg)
    if _check_cached(cfg.forest_file, inputs_hash):
        print(f"cache hit: {cfg.forest_file} is up to date")
        return cfg.forest_file
    loaded = corpus_mod.load_corpus(cfg.ingested_corpus)
    g, _ = graph_mod.load_graph(cfg.graph_file)
    f = forest_mod.generate_forest(g, loaded.submatrix("train"), cfg.forest_config())
    forest_mod.save_forest(f, cfg.forest_file, {"inputs-hash": inputs_hash})
    print(f"generated {cfg.m_trees} trees: {f.n_weighted_edges} distinct weighted edges")
    print(f"wrote {cfg.forest_file}")
    return cfg.forest_file


def _verify_lineage(cfg: PipelineConfig) -> None:
    if not _check_cached(cfg.graph_file, _graph_inputs_hash(cfg)):
        raise DataError(
            f"{cfg.graph_file} was not built from {cfg.ingested_corpus} with the "
            "current affinity config; rerun `graphhash build-graph`"
        )
    if not _check_cached(cfg.forest_file, _forest_inputs_hash(cfg)):
        raise DataError(
            f"{cfg.forest_file} was not built from {cfg.graph_file} with the "
            "current forest config; rerun `graphhash gen-trees`"
        )


def cmd_train(cfg: PipelineConfig) -> trainer_mod.TrainResult:
    _require(cfg.ingested_corpus, "ingest")
    need_edges = cfg.ablation != "ind"
    if need_edges:
        if not os.path.exists(cfg.graph_file):
            cmd_build_graph(cfg)
        if not os.path.exists(cfg.forest_file):
            cmd_gen_trees(cfg)
        _verify_lineage(cfg)
    loaded = corpus_mod.load_corpus(cfg.ingested_corpus)
    g = f = None
    lineage = {"corpus": sha256_file(cfg.ingested_corpus), "ablation": cfg.ablation}
    if need_edges:
        g, _ = graph_mod.load_graph(cfg.graph_file)
        f, _ = forest_mod.load_forest(cfg.forest_file)
        lineage["graph"] = sha256_file(cfg.graph_file)
        lineage["forest"] = sha256_file(cfg.forest_file)
    mconfig = cfg.model_config(loaded.vocab_size)
    result = trainer_mod.train(loaded, g, f, mconfig, cfg.train_config())
    result.log.write(cfg.path("train.log"))
    model_mod.save_checkpoint(cfg.checkpoint_file, result.params, mconfig, extras=lineage)
    print(
        f"trained {cfg.ablation}: best epoch {result.best_epoch}, "
        f"val precision@{cfg.eval_k} = {result.best_val_precision:.4f}"
    )
    print(f"wrote {cfg.checkpoint_file} and {cfg.path('train.log')}")
    if result.diverged:
        raise DivergenceError("training aborted on non-finite objective (kept last good params)")
    return result


def _load_checkpoint_for(cfg: PipelineConfig):
    _require(cfg.checkpoint_file, "train")
    _require(cfg.ingested_corpus, "ingest")
    params, mconfig, extras = model_mod.load_checkpoint(cfg.checkpoint_file)
    corpus_hash = sha256_file(cfg.ingested_corpus)
    recorded = extras.get("corpus")
    if recorded is not None and recorded != corpus_hash:
        raise DataError(
            f"{cfg.checkpoint_file} was trained on a different corpus than "
            f"{cfg.ingested_corpus}; refusing to mix lineages"
        )
    return params, mconfig, extras


def cmd_encode(cfg: PipelineConfig, split: str = "test") -> str:
    params, mconfig, _ = _load_checkpoint_for(cfg)
    loaded = corpus_mod.load_corpus(cfg.ingested_corpus)
    codes = codes_mod.binarize(
        params, loaded.submatrix(split), mconfig, loaded.doc_ids_of(split)
    )
    out = cfg.path(f"codes_{split}.txt")
    codes_mod.save_codes(
        codes,
        out,
        {
            "inputs-hash": sha256_text(
                sha256_file(cfg.checkpoint_file) + sha256_file(cfg.ingested_corpus) + split
            )
        },
    )
    print(f"encoded {codes.n_docs} docs ({split}) at {codes.code_length} bits")
    print(f"wrote {out}")
    return out


def cmd_eval(cfg: PipelineConfig) -> float:
    params, mconfig, _ = _load_checkpoint_for(cfg)
    loaded = corpus_mod.load_corpus(cfg.ingested_corpus)
    if cfg.eval_k > loaded.rows_of("train").size:
        raise DataError(
            f"eval k={cfg.eval_k} exceeds database (train) size {loaded.rows_of('train').size}"
        )
    db = codes_mod.binarize(
        params, loaded.submatrix("train"), mconfig, loaded.doc_ids_of("train")
    )
    queries = codes_mod.binarize(
        params, loaded.submatrix("test"), mconfig, loaded.doc_ids_of("test")
    )
    result = codes_mod.precision_at_k(
        queries, db, loaded.labels_of("test"), loaded.labels_of("train"), k=cfg.eval_k
    )
    q = np.quantile(result.per_query, [0.0, 0.25, 0.5, 0.75, 1.0])
    report_path = cfg.path("report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(f"# retrieval report: precision@{cfg.eval_k}, test queries vs train database\n")
        fh.write(f"# queries: {queries.n_docs}  database: {db.n_docs}\n")
        fh.write(
            "# per-query precision: "
            f"min {q[0]:.4f} q25 {q[1]:.4f} median {q[2]:.4f} q75 {q[3]:.4f} max {q[4]:.4f}\n"
        )
        fh.write("dataset\td\tprecision\n")
        fh.write(f"{cfg.dataset_name}\t{mconfig.latent_dim}\t{result.mean_precision:.4f}\n")
    with open(report_path, encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    print(f"wrote {report_path}")
    return result.mean_precision


def cmd_sweep(cfg: PipelineConfig, allow_out_of_grid: bool = False) -> dict:
    """Grid search with validation-set selection, then one test evaluation."""
    if not cfg.sweep:
        raise ConfigError("config has no 'sweep' section with parameter lists")
    axes = {
        "affinity_k": cfg.sweep.get("k", [cfg.affinity_k]),
        "m_trees": cfg.sweep.get("m_trees", [cfg.m_trees]),
        "alpha": cfg.sweep.get("alpha", [cfg.alpha]),
        "latent_dim": cfg.sweep.get("latent_dim", [cfg.latent_dim]),
        "sigmoid_temp": cfg.sweep.get("sigmoid_temp", [cfg.sigmoid_temp]),
        "batch_size": cfg.sweep.get("batch_size", [cfg.batch_size]),
        "learning_rate": cfg.sweep.get("learning_rate", [cfg.learning_rate]),
        "kl_weight": cfg.sweep.get("kl_weight", [cfg.kl_weight]),
    }
    unknown = set(cfg.sweep) - {k.removeprefix("affinity_") for k in axes} - set(axes)
    if unknown:
        raise ConfigError(f"unknown sweep axes: {sorted(unknown)}")
    names = list(axes)
    best = None
    rows = []
    for combo in itertools.product(*(axes[name] for name in names)):
        overrides = dict(zip(names, combo))
        sub = replace(cfg, **overrides)
        sub.output_dir = cfg.path(
            "sweep_" + "_".join(f"{k}={v}" for k, v in overrides.items())
        )
        sub.validate_grids(allow_out_of_grid)
        os.makedirs(sub.output_dir, exist_ok=True)
        for name in ("corpus.bow", "corpus.bow.meta", "corpus.bow.split"):
            src, dst = cfg.path(name), sub.path(name)
            if not os.path.exists(dst):
                with open(src, "rb") as s, open(dst, "wb") as d:
                    d.write(s.read())
        cmd_build_graph(sub)
        cmd_gen_trees(sub)
        result = cmd_train(sub)
        rows.append((overrides, result.best_val_precision))
        print(f"sweep {overrides} -> val {result.best_val_precision:.4f}")
        if best is None or result.best_val_precision > best[1]:
            best = (sub, result.best_val_precision, overrides)
    assert best is not None
    sub, val, overrides = best
    test_precision = cmd_eval(sub)
    summary = {"best": overrides, "val_precision": val, "test_precision": test_precision}
    with open(cfg.path("sweep.json"), "w", encoding="utf-8") as fh:
        json.dump({"rows": [{"params": o, "val": v} for o, v in rows], **summary}, fh, indent=2)
    print(f"best {overrides}: val {val:.4f}, test {test_precision:.4f}")
    return summary


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON pipeline config")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--allow-out-of-grid", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_override(p, flag, attr, type_):
    p.add_argument(flag, dest=attr, type=type_)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphhash",
        description="Binary document hashing with graph-correlated Gaussian priors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load, validate, TFIDF-weight, and store a corpus")
    _add_common(p)
    _add_override(p, "--corpus-path", "corpus_path", str)
    _add_override(p, "--corpus-format", "corpus_format", str)
    p.add_argument("--no-tfidf", dest="tfidf", action="store_false", default=None)

    p = sub.add_parser("build-graph", help="build the KNN affinity graph")
    _add_common(p)
    _add_override(p, "--k", "affinity_k", int)
    _add_override(p, "--metric", "affinity_metric", str)
    _add_override(p, "--bandwidth", "affinity_bandwidth", float)

    p = sub.add_parser("gen-trees", help="sample spanning trees of the graph")
    _add_common(p)
    _add_override(p, "--m-trees", "m_trees", int)
    _add_override(p, "--alpha", "alpha", float)
    _add_override(p, "--forest-seed", "forest_seed", int)

    p = sub.add_parser("train", help="train the hashing model")
    _add_common(p)
    for flag, attr, type_ in [
        ("--latent-dim", "latent_dim", int),
        ("--sigmoid-temp", "sigmoid_temp", float),
        ("--batch-size", "batch_size", int),
        ("--learning-rate", "learning_rate", float),
        ("--kl-weight", "kl_weight", float),
        ("--lam", "lam", float),
        ("--epochs", "epochs", int),
        ("--seed", "train_seed", int),
        ("--patience", "patience", int),
        ("--eval-k", "eval_k", int),
    ]:
        _add_override(p, flag, attr, type_)
    p.add_argument("--ablation", choices=trainer_mod.ABLATIONS, default=None)

    p = sub.add_parser("encode", help="binarize a split with a trained checkpoint")
    _add_common(p)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")

    p = sub.add_parser("eval", help="Hamming retrieval evaluation, test vs train")
    _add_common(p)
    _add_override(p, "--eval-k", "eval_k", int)

    p = sub.add_parser("sweep", help="grid search with validation selection")
    _add_common(p)

    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = PipelineConfig.from_file(args.config)
    cfg.apply_overrides(args)
    if args.command in ("build-graph", "gen-trees", "train", "sweep"):
        cfg.validate_grids(args.allow_out_of_grid)
    os.makedirs(cfg.output_dir, exist_ok=True)
    if args.command == "ingest":
        cmd_ingest(cfg)
    elif args.command == "build-graph":
        cmd_build_graph(cfg)
    elif args.command == "gen-trees":
        cmd_gen_trees(cfg)
    elif args.command == "train":
        cmd_train(cfg)
    elif args.command == "encode":
        cmd_encode(cfg, args.split)
    elif args.command == "eval":
        cmd_eval(cfg)
    elif args.command == "sweep":
        cmd_sweep(cfg, args.allow_out_of_grid)
    return 0


def main() -> None:
    try:
        sys.exit(run())
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        sys.exit(2)
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        sys.exit(3)
    except DivergenceError as err:
        print(f"numeric divergence: {err}", file=sys.stderr)
        sys.exit(4)
    except GraphHashError as err:
        print(f"error: {err}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
