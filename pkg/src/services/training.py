"""
Training orchestration.

One step runs the forward propagation, hashes every layer, builds the two
augmented views for contrastive learning, scores the BPR triples, and folds
all gradient contributions back to the layer-0 embeddings through the sign
estimator and the propagation adjoint before an Adam update.

A run directory holds:
    run.json          resolved config + input hashes (immutable)
    checkpoint.npz    V0, optimizer state, counters, split, history
    hash_table.bgch   exported table
    train_edges.txt / test_edges.txt, history.json, report.json
"""
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Sequence

import numpy as np

from src.config import EstimatorConfig, EstimatorKind, ModelConfig, RunConfig
from src.models import BipartiteGraph, EmbeddingState, HashTable, LossBreakdown, NormalizedOperator, TrainBatch
from src.schemas import AblationReport, AblationRun, EpochLog, EvalReport, RunManifest, TrainResult
from src.services.augmentation import make_views
from src.services.dispersion import disperse
from src.services.estimator import Adam, backprop, sign_backward
from src.services.evaluation import evaluate_index, planted_graph, split
from src.services.graph import normalize
from src.services.hamming_index import HammingIndex
from src.services.hashing import NonFiniteEmbeddingError, assemble, forward, init_embeddings, save_table
from src.services.ingestion import EdgeListIngestion, write_edge_list
from src.services.objective import bpr_loss, cl_loss_binary, cl_loss_continuous, total_loss

logger = logging.getLogger(__name__)

PACKAGE_VERSION = "0.1.0"
MANIFEST_NAME = "run.json"
CHECKPOINT_NAME = "checkpoint.npz"
HISTORY_NAME = "history.json"
REPORT_NAME = "report.json"
TRAIN_SPLIT_NAME = "train_edges.txt"
TEST_SPLIT_NAME = "test_edges.txt"
MAX_NEGATIVE_DRAWS = 10


class TrainingError(Exception):
    """Base exception for training runs."""
    pass


class TrainingDivergedError(TrainingError):
    """Loss or gradients became non-finite; the last checkpoint is kept."""
    pass


class Variant(StrEnum):
    FULL = "full"
    NO_CL1 = "no_cl1"
    NO_CL2 = "no_cl2"
    NO_CL = "no_cl"
    NO_RESCALE = "no_rescale"
    STE = "ste"
    TANH = "tanh"
    NO_BPR = "no_bpr"
    FINAL_ONLY = "final_only"


@dataclass(frozen=True)
class TrainingData:
    train: BipartiteGraph
    test_edges: np.ndarray
    inputs: dict[str, str]


# --- data ---

def load_data(config: RunConfig) -> TrainingData:
    """Training graph, held-out edges and the content hashes of the inputs."""
    data = config.data
    inputs: dict[str, str] = {}
    if data.source == "file":
        ingestion = EdgeListIngestion()
        graph = ingestion.load(Path(data.train))
        inputs["train"] = ingestion.content_hash
        if data.test is not None:
            test_ingestion = EdgeListIngestion()
            test_graph = test_ingestion.load(Path(data.test))
            inputs["test"] = test_ingestion.content_hash
            test_edges = test_graph.edges
            if test_edges[:, 0].max() >= graph.n1 or test_edges[:, 1].max() >= graph.n2:
                raise TrainingError("Test edges reference nodes outside the training graph")
            return TrainingData(train=graph, test_edges=test_edges, inputs=inputs)
    else:
        planted = config.planted
        graph = planted_graph(planted.blocks, planted.nodes_per_block, planted.p_in, planted.p_out, planted.seed)
        inputs["planted"] = hashlib.sha256(planted.model_dump_json().encode()).hexdigest()[:16]

    train, test_edges = split(graph, data.split_ratio, data.split_seed)
    return TrainingData(train=train, test_edges=test_edges, inputs=inputs)


def segment_layers(model: ModelConfig) -> tuple[int, ...]:
    """Layers that get hashed: all of 0..L, or only L without topology awareness."""
    if model.topology_aware:
        return tuple(range(model.layers + 1))
    return (model.layers,)


def sample_negatives(graph: BipartiteGraph, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    One uniformly drawn non-neighbour V2 node per user. Clashes are redrawn a
    bounded number of times; a user adjacent to all of V2 keeps its last draw.
    """
    neg = rng.integers(0, graph.n2, size=users.shape[0])
    for _ in range(MAX_NEGATIVE_DRAWS):
        if users.size == 0:
            break
        clash = np.asarray(graph.adjacency[users, graph.n1 + neg]).ravel() > 0
        if not clash.any():
            break
        neg[clash] = rng.integers(0, graph.n2, size=int(clash.sum()))
    return neg.astype(np.int64)


def epoch_batches(graph: BipartiteGraph, epoch: int, config: RunConfig) -> list[TrainBatch]:
    """
    Shuffled positive edges with fresh negatives; depends only on (seed, epoch).
    Each edge appears `neg_samples` times and the copies are shuffled
    independently, so they spread over different batches.
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.train.seed, spawn_key=(epoch,)))
    edges = graph.edges
    if config.train.neg_samples > 1:
        edges = np.repeat(edges, config.train.neg_samples, axis=0)
    order = rng.permutation(edges.shape[0])
    users = edges[order, 0]
    pos = edges[order, 1]
    neg = sample_negatives(graph, users, rng)

    size = config.train.batch_size
    return [
        TrainBatch(users=users[i:i + size], pos=pos[i:i + size], neg=neg[i:i + size])
        for i in range(0, users.shape[0], size)
    ]


# --- gradients ---

def layer_gradients(
    state: EmbeddingState,
    hashed_layers: Sequence[int],
    g_codes: np.ndarray,
    g_alphas: np.ndarray,
    g_views: np.ndarray | None,
    estimator: EstimatorConfig,
    rescale: bool,
) -> list[np.ndarray]:
    """
    dL/dV^(l) for every layer. A hashed layer collects the code gradient
    through the sign estimator, the alpha gradient via d alpha / dV = sign(V)/d,
    and the continuous-view gradient directly. Unhashed layers get zeros.
    """
    grads = [np.zeros(layer.shape, dtype=np.float64) for layer in state.layers]
    for s, layer in enumerate(hashed_layers):
        values = state.layers[layer]
        g = sign_backward(values, g_codes[:, s, :].astype(np.float64), estimator)
        if rescale:
            g = g + g_alphas[:, s, None] * np.sign(values) / values.shape[1]
        if g_views is not None:
            g = g + g_views[:, s, :]
        grads[layer] += g
    return grads


def train_step(
    v0: np.ndarray,
    op: NormalizedOperator,
    n1: int,
    batch: TrainBatch,
    config: RunConfig,
    adam: Adam,
    step: int,
) -> tuple[np.ndarray, LossBreakdown]:
    """One optimizer step; returns the updated V0 and the loss parts of this batch."""
    model, loss_cfg, cl = config.model, config.loss, config.cl
    hashed = segment_layers(model)
    state = forward(op, v0, model.layers)
    table = assemble(state, n1, rescale=model.rescale, segment_layers=hashed)

    shape = (table.num_nodes, table.num_segments, table.d)
    g_codes = np.zeros(shape, dtype=np.float64)
    g_alphas = np.zeros(shape[:2], dtype=np.float64)
    g_views = np.zeros(shape, dtype=np.float64)
    l_bpr = l_cl1 = l_cl2 = 0.0

    if loss_cfg.use_bpr:
        bpr = bpr_loss(batch, table)
        l_bpr = bpr.loss
        g_codes += bpr.codes
        g_alphas += bpr.alphas

    lambda1 = loss_cfg.lambda1
    if lambda1 > 0 and (loss_cfg.use_cl1 or loss_cfg.use_cl2):
        nodes = np.unique(np.concatenate([batch.users, n1 + batch.pos]))
        views = make_views(state, table, nodes, cl.tau, cl.seed, step, cl.alpha_noise)
        if loss_cfg.use_cl1:
            cl1 = cl_loss_continuous(views, cl.sigma)
            l_cl1 = cl1.loss
            g_views[nodes] += lambda1 * (cl1.first + cl1.second)
        if loss_cfg.use_cl2:
            cl2 = cl_loss_binary(views, table, cl.sigma)
            l_cl2 = cl2.loss
            g_codes[nodes] += lambda1 * cl2.codes
            if cl.grad_through_alpha:
                g_alphas[nodes] += lambda1 * (cl2.first + cl2.second)

    touched = np.unique(np.concatenate([batch.users, n1 + batch.pos, n1 + batch.neg]))
    rows = v0[touched].astype(np.float64)
    l_reg = float((rows * rows).sum())

    grads = layer_gradients(state, hashed, g_codes, g_alphas, g_views, config.estimator, model.rescale)
    g0 = backprop(op, grads)
    g0[touched] += loss_cfg.lambda2 * 2.0 * rows

    parts = np.array([l_bpr, l_cl1, l_cl2, l_reg])
    if not np.all(np.isfinite(parts)) or not np.all(np.isfinite(g0)):
        raise TrainingDivergedError(f"Non-finite loss or gradient at step {step}: {parts.tolist()}")
    breakdown = total_loss(l_bpr, l_cl1, l_cl2, l_reg, lambda1, loss_cfg.lambda2)
    return adam.step(v0, g0), breakdown


def _sum_breakdowns(parts: list[LossBreakdown], lambda1: float, lambda2: float) -> LossBreakdown:
    return total_loss(
        sum(p.l_bpr for p in parts),
        sum(p.l_cl1 for p in parts),
        sum(p.l_cl2 for p in parts),
        sum(p.l_reg for p in parts),
        lambda1,
        lambda2,
    )


# --- runs ---

def build_manifest(config: RunConfig, inputs: dict[str, str]) -> RunManifest:
    return RunManifest(
        config=config.resolved(),
        config_hash=config.content_hash(),
        inputs=dict(sorted(inputs.items())),
        package_version=PACKAGE_VERSION,
    )


def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    """Write run.json once; an existing manifest must match byte for byte."""
    path = out_dir / MANIFEST_NAME
    content = json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
    if path.exists():
        if path.read_text(encoding="utf-8") != content:
            raise TrainingError(f"{path} exists with a different configuration or inputs")
        return path
    path.write_text(content, encoding="utf-8")
    return path


class Trainer:
    """
    Holds the mutable state of one run: V0, optimizer, counters and history.
    Every epoch ends with a checkpoint, so a diverged run keeps the last good one.
    """

    def __init__(self, config: RunConfig, data: TrainingData):
        self.config = config
        self.data = data
        self.graph = data.train
        self.op = normalize(self.graph)
        self.out_dir = Path(config.output.dir)
        self.epoch = 0
        self.step = 0
        self.history: list[EpochLog] = []

        v0 = init_embeddings(self.graph.num_nodes, config.model)
        if config.dispersion.enabled:
            v0 = disperse(v0, config.dispersion)
        self.v0 = v0
        self.adam = Adam(v0.shape, config.optim)

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / CHECKPOINT_NAME

    def current_table(self) -> HashTable:
        model = self.config.model
        state = forward(self.op, self.v0, model.layers)
        return assemble(state, self.graph.n1, rescale=model.rescale, segment_layers=segment_layers(model))

    def run(self) -> None:
        epochs = self.config.train.epochs
        lambda1, lambda2 = self.config.loss.lambda1, self.config.loss.lambda2
        while self.epoch < epochs:
            started = time.perf_counter()
            parts = []
            for batch in epoch_batches(self.graph, self.epoch, self.config):
                self.step += 1
                try:
                    self.v0, breakdown = train_step(
                        self.v0, self.op, self.graph.n1, batch, self.config, self.adam, self.step
                    )
                except NonFiniteEmbeddingError as e:
                    raise TrainingDivergedError(str(e)) from e
                parts.append(breakdown)

            self.epoch += 1
            log = EpochLog(
                epoch=self.epoch,
                step=self.step,
                loss=_sum_breakdowns(parts, lambda1, lambda2),
                seconds=time.perf_counter() - started,
                recall_at=self._periodic_recall(),
            )
            self.history.append(log)
            if self.epoch % self.config.train.log_every == 0 or self.epoch == epochs:
                self._log_epoch(log, epochs)
            self.save_checkpoint()

    def _periodic_recall(self) -> dict[int, float] | None:
        every = self.config.eval.every
        if every == 0 or self.epoch % every != 0 or self.data.test_edges.shape[0] == 0:
            return None
        index = HammingIndex.from_table(self.current_table())
        return evaluate_index(index, self.graph, self.data.test_edges, self.config.eval.topn).recall_at

    def _log_epoch(self, log: EpochLog, epochs: int) -> None:
        loss = log.loss
        recall = f" recall={log.recall_at}" if log.recall_at else ""
        logger.info(
            f"Epoch {log.epoch}/{epochs} step {log.step}: total={loss.l_total:.4f} "
            f"bpr={loss.l_bpr:.4f} cl1={loss.l_cl1:.4f} cl2={loss.l_cl2:.4f} "
            f"reg={loss.l_reg:.4f} ({log.seconds:.2f}s){recall}"
        )

    def save_checkpoint(self) -> Path:
        path = self.checkpoint_path
        tmp = path.with_name(path.name + ".tmp")
        history = json.dumps([h.model_dump(mode="json") for h in self.history])
        with open(tmp, mode="wb") as f:
            np.savez(
                f,
                v0=self.v0,
                epoch=np.asarray(self.epoch, dtype=np.int64),
                step=np.asarray(self.step, dtype=np.int64),
                n1=np.asarray(self.graph.n1, dtype=np.int64),
                n2=np.asarray(self.graph.n2, dtype=np.int64),
                train_edges=self.graph.edges,
                test_edges=self.data.test_edges,
                history=np.asarray(history),
                **self.adam.state_dict(),
            )
        tmp.replace(path)
        return path

    def load_checkpoint(self, path: Path) -> None:
        try:
            with np.load(path, allow_pickle=False) as ckpt:
                arrays = {key: ckpt[key] for key in ckpt.files}
        except FileNotFoundError:
            raise TrainingError(f"Checkpoint not found: {path}")

        if (int(arrays["n1"]), int(arrays["n2"])) != (self.graph.n1, self.graph.n2) or not np.array_equal(
            arrays["train_edges"], self.graph.edges
        ):
            raise TrainingError("Checkpoint was written for a different training graph")
        if arrays["v0"].shape != self.v0.shape:
            raise TrainingError(f"Checkpoint embeddings have shape {arrays['v0'].shape}, expected {self.v0.shape}")

        self.v0 = arrays["v0"].astype(np.float32)
        self.adam.load_state_dict(arrays)
        self.epoch = int(arrays["epoch"])
        self.step = int(arrays["step"])
        self.history = [EpochLog(**h) for h in json.loads(str(arrays["history"]))]
        logger.info(f"Resumed from {path} at epoch {self.epoch}, step {self.step}")


def train(config: RunConfig, resume_from: Path | None = None) -> TrainResult:
    """Run (or continue) training and export the final table."""
    data = load_data(config)
    out_dir = Path(config.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = write_manifest(out_dir, build_manifest(config, data.inputs))

    trainer = Trainer(config, data)
    if resume_from is not None:
        trainer.load_checkpoint(Path(resume_from))
    else:
        trainer.save_checkpoint()

    logger.info(
        f"Training on |E|={data.train.num_edges} (n1={data.train.n1}, n2={data.train.n2}) "
        f"for {config.train.epochs} epochs, config {config.content_hash()}"
    )
    trainer.run()

    table = trainer.current_table()
    table_path = out_dir / config.output.table_name
    save_table(table, table_path)
    write_edge_list(out_dir / TRAIN_SPLIT_NAME, data.train.n1, data.train.n2, data.train.edges)
    write_edge_list(out_dir / TEST_SPLIT_NAME, data.train.n1, data.train.n2, data.test_edges)
    (out_dir / HISTORY_NAME).write_text(
        json.dumps([h.model_dump(mode="json") for h in trainer.history], indent=2), encoding="utf-8"
    )

    report: EvalReport | None = None
    if data.test_edges.shape[0]:
        report = evaluate_index(
            HammingIndex.from_table(table), data.train, data.test_edges, config.eval.topn
        ).model_copy(update={"split_ratio": config.data.split_ratio if config.data.test is None else None})
        (out_dir / REPORT_NAME).write_text(report.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"Recall@N {report.recall_at}, NDCG@N {report.ndcg_at}")

    return TrainResult(
        table_path=str(table_path),
        checkpoint_path=str(trainer.checkpoint_path),
        manifest_path=str(manifest_path),
        epochs_run=trainer.epoch,
        history=trainer.history,
        report=report,
    )


def export_checkpoint(checkpoint: Path, out_path: Path, config: RunConfig | None = None) -> HashTable:
    """Rebuild and write the table of a checkpoint; the config defaults to the run's run.json."""
    checkpoint = Path(checkpoint)
    if config is None:
        manifest_path = checkpoint.parent / MANIFEST_NAME
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise TrainingError(f"No {MANIFEST_NAME} next to {checkpoint}; pass a config")
        config = RunConfig(**manifest["config"])

    try:
        with np.load(checkpoint, allow_pickle=False) as ckpt:
            v0 = ckpt["v0"].astype(np.float32)
            graph = BipartiteGraph.from_edges(int(ckpt["n1"]), int(ckpt["n2"]), ckpt["train_edges"])
    except FileNotFoundError:
        raise TrainingError(f"Checkpoint not found: {checkpoint}")

    model = config.model
    state = forward(normalize(graph), v0, model.layers)
    table = assemble(state, graph.n1, rescale=model.rescale, segment_layers=segment_layers(model))
    save_table(table, Path(out_path))
    return table


# --- ablation ---

def apply_variant(config: RunConfig, variant: Variant | str) -> RunConfig:
    """Copy of `config` with one component removed or swapped."""
    variant = Variant(variant)
    cfg = config.model_copy(deep=True)
    match variant:
        case Variant.FULL:
            pass
        case Variant.NO_CL1:
            cfg.loss.use_cl1 = False
        case Variant.NO_CL2:
            cfg.loss.use_cl2 = False
        case Variant.NO_CL:
            cfg.loss.lambda1 = 0.0
        case Variant.NO_RESCALE:
            cfg.model.rescale = False
        case Variant.STE:
            cfg.estimator.kind = EstimatorKind.STE
        case Variant.TANH:
            cfg.estimator.kind = EstimatorKind.TANH
        case Variant.NO_BPR:
            cfg.loss.use_bpr = False
        case Variant.FINAL_ONLY:
            cfg.model.topology_aware = False
    return cfg


def _reseed(config: RunConfig, offset: int, out_dir: Path) -> RunConfig:
    cfg = config.model_copy(deep=True)
    cfg.model.seed = config.model.seed + offset
    cfg.train.seed = config.train.seed + offset
    cfg.cl.seed = config.cl.seed + offset
    cfg.dispersion.seed = config.dispersion.seed + offset
    cfg.output.dir = out_dir
    return cfg


def epochs_to_threshold(history: Sequence[EpochLog], threshold: float) -> int | None:
    """First epoch whose BPR loss is at or below `threshold`."""
    for log in history:
        if log.loss.l_bpr <= threshold:
            return log.epoch
    return None


def median_epochs(values: Sequence[int | None]) -> float | None:
    """Median over seeds; a seed that never reached the threshold counts as infinitely slow."""
    if not values:
        return None
    median = float(np.median([np.inf if v is None else v for v in values]))
    return median if np.isfinite(median) else None


def ablate(
    config: RunConfig,
    variant: Variant | str,
    seeds: int = 1,
    bpr_threshold: float | None = None,
) -> AblationReport:
    """
    Train the full model and the variant for each seed (same data split) and
    compare Recall at 20, or at the smallest configured N when 20 is absent.
    With `bpr_threshold`, also report how many epochs each side needs to get
    its BPR loss down to it, as a median over seeds.
    """
    variant = Variant(variant)
    if seeds < 1:
        raise TrainingError("seeds must be >= 1")
    if bpr_threshold is not None and not bpr_threshold > 0:
        raise TrainingError("bpr_threshold must be > 0")
    n = 20 if 20 in config.eval.topn else min(config.eval.topn)
    base = Path(config.output.dir) / "ablate"

    runs: list[AblationRun] = []
    for offset in range(seeds):
        full = train(_reseed(config, offset, base / f"seed{offset}" / Variant.FULL.value))
        if variant == Variant.FULL:
            other = full
        else:
            variant_cfg = apply_variant(_reseed(config, offset, base / f"seed{offset}" / variant.value), variant)
            other = train(variant_cfg)
        if full.report is None or other.report is None:
            raise TrainingError("Ablation needs held-out edges to evaluate")
        runs.append(AblationRun(
            seed=offset,
            full=full.report,
            variant=other.report,
            full_bpr=[h.loss.l_bpr for h in full.history],
            variant_bpr=[h.loss.l_bpr for h in other.history],
            full_epochs_to_threshold=(
                epochs_to_threshold(full.history, bpr_threshold) if bpr_threshold is not None else None
            ),
            variant_epochs_to_threshold=(
                epochs_to_threshold(other.history, bpr_threshold) if bpr_threshold is not None else None
            ),
        ))

    full_recall = [run.full.recall_at[n] for run in runs]
    variant_recall = [run.variant.recall_at[n] for run in runs]
    wins = sum(1 for f, v in zip(full_recall, variant_recall) if f > v)
    logger.info(f"Ablation {variant.value}: full wins {wins}/{seeds} seeds on Recall@{n}")

    full_median = variant_median = None
    if bpr_threshold is not None:
        full_median = median_epochs([run.full_epochs_to_threshold for run in runs])
        variant_median = median_epochs([run.variant_epochs_to_threshold for run in runs])
        logger.info(
            f"Epochs to BPR loss <= {bpr_threshold}: full {full_median}, {variant.value} {variant_median} (median)"
        )
    return AblationReport(
        variant=variant.value,
        topn=n,
        runs=runs,
        full_recall=full_recall,
        variant_recall=variant_recall,
        full_wins=wins,
        bpr_threshold=bpr_threshold,
        full_median_epochs=full_median,
        variant_median_epochs=variant_median,
    )
