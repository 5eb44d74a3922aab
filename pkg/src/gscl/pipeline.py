"""Run configuration, training loop, evaluation hooks and the sweep runner."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from ._accel import backend_name
from .encoder import (ACTIVATIONS, encode, forward_tensors, init_params, normalize_adjacency,
                      save_matrix, save_params)
from .evaluation import (kmeans_nmi, linear_probe, per_hop_similarity, random_split,
                         read_split_csv, sim_at_k)
from .graph import Graph, build_partitions, generate_sbm, load_graph, resample_beyond
from .loss import VARIANTS, LossConfig, build_loss_plan
from .sampling import STRATEGIES, SamplerConfig, pagerank, subsample_partition

log = logging.getLogger(__name__)

FULL_BATCH_LIMIT = 20_000
MINIBATCH_SIZE = 1024


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


def _in_range(name, value, lo, hi, allow_zero=False):
    if allow_zero and value == 0:
        return
    if not lo <= value <= hi:
        raise ConfigError(f"{name}={value} outside [{lo}, {hi}]")


@dataclass
class RunConfig:
    seed: int
    dataset: dict = field(default_factory=lambda: {"type": "sbm"})
    hidden_dim: int = 128
    num_layers: int = 2
    activation: str = "prelu"
    proj_dim: int | None = None
    k: int = 2
    tau_base: float = 0.5
    tau_spacing: float = 0.0
    alpha: float = 0.9
    beta: float = 0.9
    variant: str = "listwise"
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 500
    negative_cap: int | None = 256
    sampler: str = "none"
    sample_ratio: float = 0.2
    sample_size: int | None = None
    pr_damping: float = 0.85
    memoize: bool = True
    batch_size: int | None = None
    eval_every: int = 0

    def __post_init__(self):
        if self.seed is None or isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("seed is mandatory and must be an integer")
        if self.hidden_dim < 1 or (self.proj_dim is not None and self.proj_dim < 1):
            raise ConfigError("embedding dims must be positive")
        if self.num_layers not in (1, 2, 3):
            raise ConfigError("num_layers must be 1, 2 or 3")
        if self.activation not in ACTIVATIONS[:3]:
            raise ConfigError(f"activation must be one of {ACTIVATIONS[:3]}")
        if self.k not in (1, 2, 3, 4):
            raise ConfigError("k must be in 1..4")
        _in_range("tau_base", self.tau_base, 0.1, 0.9)
        _in_range("tau_spacing", self.tau_spacing, 0.0, 0.1)
        _in_range("alpha", self.alpha, 1e-4, 1.0)
        _in_range("beta", self.beta, 1e-4, 1.0)
        _in_range("lr", self.lr, 1e-8, 1e-2, allow_zero=True)
        _in_range("weight_decay", self.weight_decay, 1e-8, 1e-2, allow_zero=True)
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.sampler not in STRATEGIES:
            raise ConfigError(f"sampler must be one of {STRATEGIES}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.negative_cap is not None and self.negative_cap < 1:
            raise ConfigError("negative_cap must be positive or null")
        if self.dataset.get("type") not in ("sbm", "files"):
            raise ConfigError("dataset.type must be 'sbm' or 'files'")

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in d:
            raise ConfigError("seed is mandatory")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def loss_config(self) -> LossConfig:
        return LossConfig(k=self.k, tau_base=self.tau_base, tau_spacing=self.tau_spacing,
                          alpha=self.alpha, beta=self.beta, variant=self.variant,
                          memoize_similarities=self.memoize)

    def sampler_config(self) -> SamplerConfig | None:
        if self.sampler == "none":
            return None
        return SamplerConfig(strategy=self.sampler, ratio=self.sample_ratio,
                             per_hop_size=self.sample_size, damping=self.pr_damping,
                             seed=self.seed)


def load_dataset(spec: dict, seed: int):
    """Build ``(graph, split)`` from a dataset spec."""
    spec = dict(spec)
    kind = spec.pop("type")
    split_path = spec.pop("split", None)
    if kind == "sbm":
        spec.setdefault("block_sizes", [100, 100])
        spec.setdefault("p_in", 0.1)
        spec.setdefault("p_out", 0.01)
        spec.setdefault("seed", seed)
        g = generate_sbm(**spec)
    else:
        g = load_graph(spec["edges"], spec["features"], spec.get("labels"))
    split = None
    if split_path is not None:
        split = read_split_csv(split_path, g.num_nodes)
    elif g.labels is not None:
        split = random_split(g.num_nodes, seed)
    return g, split


@dataclass
class TrainResult:
    params: object
    embeddings: np.ndarray
    log: list
    metrics: dict
    config: RunConfig


def _seeds(seed):
    ss = np.random.SeedSequence(seed)
    init, parts, sampler, batches = ss.spawn(4)
    return (int(init.generate_state(1)[0]), np.random.default_rng(parts),
            np.random.default_rng(sampler), np.random.default_rng(batches))


def evaluate_embeddings(h, g: Graph, split, partitions, seed) -> dict:
    """Probe accuracy, NMI, Sim@5 and per-hop similarity for embeddings ``h``."""
    out = {}
    if partitions:
        out["per_hop_similarity"] = [float(x) for x in per_hop_similarity(h, partitions).means]
    if g.labels is None:
        return out
    if split is not None:
        acc, val = linear_probe(h, g.labels, split, seed=seed, return_val=True)
        out["accuracy"] = acc
        out["val_accuracy"] = val
    if g.num_classes >= 2:
        out["nmi"] = kmeans_nmi(h, g.labels, g.num_classes, seed=seed)
    if g.num_nodes > 5:
        out["sim@5"] = sim_at_k(h, g.labels, 5)
    return out


def run_train(cfg: RunConfig, out_dir=None, graph=None, split=None) -> TrainResult:
    """Train an encoder under ``cfg``; optionally write the run directory.

    Deterministic for a fixed config: the same seed reproduces the metrics
    log and the embeddings byte for byte on the same backend.
    """
    if graph is None:
        graph, split = load_dataset(cfg.dataset, cfg.seed)
    g = graph
    init_seed, part_rng, sampler_rng, batch_rng = _seeds(cfg.seed)
    dims = [g.features.shape[1]] + [cfg.hidden_dim] * cfg.num_layers
    proj = cfg.proj_dim or cfg.hidden_dim
    params = init_params(dims, [proj, proj], cfg.activation, seed=init_seed)
    adj = normalize_adjacency(g, np.float32)
    x = ad.Tensor(g.features.astype(np.float32))
    loss_cfg = cfg.loss_config()
    sampler_cfg = cfg.sampler_config()

    partitions = build_partitions(g, cfg.k, negative_cap=cfg.negative_cap, rng=part_rng)
    scores = None
    if sampler_cfg is not None and sampler_cfg.strategy == "pagerank":
        scores = pagerank(g, damping=sampler_cfg.damping, tolerance=sampler_cfg.pr_tolerance,
                          max_iters=sampler_cfg.pr_max_iters)
    batch_size = cfg.batch_size
    if batch_size is None:
        batch_size = g.num_nodes if g.num_nodes <= FULL_BATCH_LIMIT else MINIBATCH_SIZE
    full_batch = batch_size >= g.num_nodes
    plan = build_loss_plan(partitions, loss_cfg) if sampler_cfg is None and full_batch else None

    state = ad.AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_manifest(out_dir, cfg)
    records = []
    last_good = params.copy()
    num_layers = cfg.num_layers

    for epoch in range(1, cfg.epochs + 1):
        epoch_parts = partitions
        if sampler_cfg is not None:
            epoch_parts = [
                subsample_partition(resample_beyond(g, p, cfg.negative_cap, sampler_rng),
                                    sampler_cfg, scores, sampler_rng)
                for p in partitions
            ]
        if full_batch:
            batches = [None]
        else:
            order = batch_rng.permutation(len(epoch_parts))
            batches = [order[s:s + batch_size] for s in range(0, len(order), batch_size)]
        losses = []
        for batch in batches:
            if batch is None:
                step_plan = plan or build_loss_plan(epoch_parts, loss_cfg)
            else:
                step_plan = build_loss_plan([epoch_parts[i] for i in batch], loss_cfg)
            leaves = [ad.Tensor(a, requires_grad=True) for a in params.arrays()]
            _, z = forward_tensors(adj, x, leaves, num_layers, cfg.activation)
            loss = step_plan.evaluate(z, reduction="mean")
            value = float(loss.value)
            if not np.isfinite(value):
                if out_dir is not None:
                    save_params(last_good, out_dir / "params.bin")
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            grads = ad.grad(loss, leaves)
            last_good = params.copy()
            ad.adam_step(params.arrays(), grads, state)
            losses.append(value)
        record = {"epoch": epoch, "loss": float(np.mean(losses))}
        if cfg.eval_every and epoch % cfg.eval_every == 0:
            h = encode(g, params, adj)
            record.update(evaluate_embeddings(h, g, split, None, cfg.seed))
        records.append(record)
        log.debug("epoch %d loss %.6f", epoch, record["loss"])

    h = encode(g, params, adj)
    metrics = evaluate_embeddings(h, g, split, partitions, cfg.seed)
    metrics = {"final": metrics}
    evals = [r for r in records if "nmi" in r or "sim@5" in r]
    if evals:
        metrics["best_over_epochs"] = {
            key: max(r[key] for r in evals if key in r)
            for key in ("accuracy", "nmi", "sim@5") if any(key in r for r in evals)
        }
    result = TrainResult(params, h, records, metrics, cfg)
    if out_dir is not None:
        _write_outputs(out_dir, result)
    return result


def _write_manifest(out_dir: Path, cfg: RunConfig):
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "code_version": __version__,
        "backend": backend_name(),
        "numpy_version": np.__version__,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _flat_metrics(metrics: dict) -> list:
    rows = []
    for section, vals in metrics.items():
        for key, v in vals.items():
            if isinstance(v, list):
                rows.extend((section, f"{key}[hop{i + 1}]", x) for i, x in enumerate(v))
            else:
                rows.append((section, key, v))
    return rows


def _write_outputs(out_dir: Path, result: TrainResult):
    with open(out_dir / "metrics.jsonl", "w") as fh:
        for rec in result.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    save_params(result.params, out_dir / "params.bin")
    save_matrix(result.embeddings, out_dir / "embeddings.bin")
    (out_dir / "results.json").write_text(json.dumps(result.metrics, indent=2, sort_keys=True))
    with open(out_dir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["section", "metric", "value"])
        w.writerows(_flat_metrics(result.metrics))


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    best: RunConfig
    table: list


def expand_grid(grid: dict) -> list:
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def run_sweep(base: RunConfig, grid: dict, out_dir) -> SweepResult:
    """Train every grid point in turn and keep the best by validation probe accuracy.

    Finished runs are found again by config hash and not retrained, so an
    interrupted sweep can simply be restarted.
    """
    points = expand_grid(grid)
    if not points:
        raise ConfigError("empty sweep grid")
    out_dir = Path(out_dir)
    runs_dir = out_dir / "runs"
    table = []
    for overrides in points:
        cfg = base.replace(**overrides)
        run_dir = runs_dir / cfg.config_hash()[:16]
        results_path = run_dir / "results.json"
        if results_path.exists():
            metrics = json.loads(results_path.read_text())
        else:
            metrics = run_train(cfg, run_dir).metrics
        final = metrics["final"]
        table.append({"run": run_dir.name, **overrides,
                      "val_accuracy": final.get("val_accuracy"),
                      "accuracy": final.get("accuracy")})
    best_i = max(range(len(table)), key=lambda i: (table[i]["val_accuracy"] or 0.0, -i))
    best = base.replace(**points[best_i])
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(table[0]))
        w.writeheader()
        w.writerows(table)
    (out_dir / "best_config.json").write_text(json.dumps(best.to_dict(), indent=2, sort_keys=True))
    return SweepResult(best, table)
