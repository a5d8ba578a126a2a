"""Config-driven experiment execution, sweeps, and metrics emission.

An experiment config is one JSON object (see ``ExperimentConfig.from_dict``)
naming the protocol, the dataset (IDX files or the synthetic generator),
the dense model and its cut index, and output options. Runs emit one JSON
line per epoch plus a one-row CSV summary; with timestamps disabled
(default) the emitted bytes are a pure function of config and seed.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from . import comm, data, nn, protocols, splitting
from .errors import ConfigError, InputError
from .leakage import smashed_leakage_score
from .protocols import (
    STREAM_INIT,
    STREAM_PARTITION,
    STREAM_SYNTH,
    STREAM_VALSPLIT,
    ProtocolConfig,
    SplitTrainer,
    keyed_rng,
)

THREADS_ENV = "SPLITSIM_THREADS"


@dataclass
class DatasetSpec:
    kind: str = "synthetic"  # "synthetic" | "idx"
    classes: int = 4
    per_class: int = 500
    dim: int = 16
    separation: float = 3.0
    images: str | None = None
    labels: str | None = None
    per_client: int = 100
    validation: int = 200


@dataclass
class ModelSpec:
    hidden: list[int] = field(default_factory=lambda: [32, 16])
    cut_index: int = 2


@dataclass
class LeakageSpec:
    enabled: bool = False
    bins: int = 16
    pairs: int = 64
    probe: int = 256


# Protocol kinds -> analytic cost-model rows.
COST_METHOD = {
    "fl": "fl", "ssl": "ssl", "sfl": "sfl",
    "psl": "psl", "slr": "psl", "sgl": "sglr", "sglr": "sglr",
}


@dataclass
class ExperimentConfig:
    protocol: ProtocolConfig
    dataset: DatasetSpec
    model: ModelSpec
    leakage: LeakageSpec
    cost: dict | None = None
    include_timestamps: bool = False
    run_id: str | None = None

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        def build(section, cls, path):
            payload = raw.get(section, {})
            if not isinstance(payload, dict):
                raise ConfigError("must be an object", field=path)
            try:
                return cls(**payload)
            except TypeError as exc:
                raise ConfigError(str(exc), field=path) from exc
            except InputError as exc:
                raise ConfigError(str(exc), field=path) from exc

        if "protocol" not in raw:
            raise ConfigError("missing section", field="protocol")
        proto = build("protocol", ProtocolConfig, "protocol")
        ds = build("dataset", DatasetSpec, "dataset")
        model = build("model", ModelSpec, "model")
        leak = build("leakage", LeakageSpec, "leakage")

        cost = raw.get("cost")
        if cost is not None:
            if not isinstance(cost, dict):
                raise ConfigError("must be an object", field="cost")
            try:
                comm.CostParams(**cost)
            except (TypeError, InputError) as exc:
                raise ConfigError(str(exc), field="cost") from exc

        cfg = ExperimentConfig(
            protocol=proto,
            dataset=ds,
            model=model,
            leakage=leak,
            cost=cost,
            include_timestamps=bool(raw.get("include_timestamps", False)),
            run_id=raw.get("run_id"),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        ds = self.dataset
        if ds.kind not in ("synthetic", "idx"):
            raise ConfigError(f"unknown kind {ds.kind!r}", field="dataset.kind")
        if ds.kind == "idx":
            for attr in ("images", "labels"):
                path = getattr(ds, attr)
                if not path:
                    raise ConfigError("required for idx datasets", field=f"dataset.{attr}")
                if not os.path.exists(path):
                    raise ConfigError(f"file not found: {path}", field=f"dataset.{attr}")
        else:
            if ds.dim < ds.classes:
                raise ConfigError(
                    "dim must be >= classes", field="dataset.dim"
                )
        if ds.per_client < self.protocol.batch_size:
            raise ConfigError(
                "per_client smaller than the batch size", field="dataset.per_client"
            )
        if ds.kind == "synthetic":
            available = ds.classes * ds.per_class - ds.validation
            if self.protocol.clients * ds.per_client > available:
                raise ConfigError(
                    f"needs {self.protocol.clients * ds.per_client} training "
                    f"samples but only {available} remain after validation",
                    field="dataset.per_client",
                )
        if self.model.cut_index < 1:
            raise ConfigError("cut_index must be >= 1", field="model.cut_index")
        n_layers = 2 * (len(self.model.hidden) + 1) - 1
        if self.model.cut_index >= n_layers:
            raise ConfigError(
                f"cut_index must be < {n_layers} for this model",
                field="model.cut_index",
            )

    def to_dict(self) -> dict:
        return {
            "protocol": asdict(self.protocol),
            "dataset": asdict(self.dataset),
            "model": asdict(self.model),
            "leakage": asdict(self.leakage),
            "cost": self.cost,
            "include_timestamps": self.include_timestamps,
            "run_id": self.run_id,
        }

    def resolved_run_id(self) -> str:
        if self.run_id:
            return self.run_id
        p = self.protocol
        return (
            f"{p.kind}-c{p.clients}-phi{p.active_fraction:g}"
            f"-a{p.lr_exponent:g}-seed{p.seed}"
        )


@dataclass
class MetricsRecord:
    run_id: str
    seed: int
    epoch: int
    protocol: str
    clients: int
    active_fraction: float
    lr_exponent: float
    train_loss: float
    val_accuracy: float
    server_lr: float
    comm_bytes: int
    leakage_score: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[MetricsRecord]
    final_accuracy: float
    final_loss: float
    total_comm_bytes: int
    ledger: comm.CommLedger
    trainer: SplitTrainer

    def summary_row(self) -> dict:
        p = self.config.protocol
        row = {
            "run_id": self.config.resolved_run_id(),
            "protocol": p.kind,
            "clients": p.clients,
            "active_fraction": p.active_fraction,
            "lr_exponent": p.lr_exponent,
            "seed": p.seed,
            "epochs": p.epochs,
            "final_loss": self.final_loss,
            "final_accuracy": self.final_accuracy,
            "total_comm_bytes": self.total_comm_bytes,
        }
        if self.config.cost is not None:
            params = comm.CostParams(**self.config.cost)
            method = COST_METHOD[p.kind]
            row["analytic_per_client_mb"] = comm.comm_per_client(method, params)
            row["analytic_total_mb"] = comm.total_comm(method, params)
        return row


def build_dataset(cfg: ExperimentConfig) -> tuple[data.Dataset, data.Dataset]:
    """(train, validation) per the dataset spec, seeded from the run seed."""
    ds_spec = cfg.dataset
    seed = cfg.protocol.seed
    if ds_spec.kind == "idx":
        full = data.load_idx(ds_spec.images, ds_spec.labels)
    else:
        full = data.synth_dataset(
            ds_spec.classes,
            ds_spec.per_class,
            ds_spec.dim,
            ds_spec.separation,
            seed=[seed, STREAM_SYNTH],
        )
    if ds_spec.validation:
        return data.split_validation(full, ds_spec.validation, seed=[seed, STREAM_VALSPLIT])
    return full, full.subset(np.arange(0))


def build_model(cfg: ExperimentConfig, input_dim: int, n_classes: int) -> splitting.SplitModel:
    widths = [input_dim, *cfg.model.hidden, n_classes]
    rng = keyed_rng(cfg.protocol.seed, STREAM_INIT)
    return splitting.SplitModel(nn.build_mlp(widths, rng), cfg.model.cut_index)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Execute one configured run; optionally write metrics files.

    Writes ``<run_id>.metrics.jsonl`` (one record per epoch),
    ``<run_id>.summary.csv`` and ``<run_id>.config.json`` under ``out_dir``.
    """
    train, val = build_dataset(cfg)
    part = data.partition_iid(
        train,
        cfg.protocol.clients,
        cfg.dataset.per_client,
        seed=[cfg.protocol.seed, STREAM_PARTITION],
    )
    client_data = [
        (train.features[ix], train.labels[ix]) for ix in part.client_indices
    ]
    model = build_model(cfg, train.features.shape[1], train.n_classes)
    ledger = comm.CommLedger()
    val_pair = (val.features, val.labels) if len(val) else None
    trainer = SplitTrainer(model, client_data, cfg.protocol, val_data=val_pair, ledger=ledger)

    probe = None
    if cfg.leakage.enabled and cfg.protocol.kind != "fl":
        source = val if len(val) else train
        probe = source.features[: cfg.leakage.probe]

    records: list[MetricsRecord] = []
    run_id = cfg.resolved_run_id()
    prev_bytes = 0
    for epoch in range(cfg.protocol.epochs):
        m = trainer.run_epoch(epoch)
        epoch_bytes = ledger.total_bytes() - prev_bytes
        prev_bytes = ledger.total_bytes()
        leak_value = None
        if probe is not None:
            leak_value = smashed_leakage_score(
                trainer.clients[0].layers,
                probe,
                bins=cfg.leakage.bins,
                n_pairs=cfg.leakage.pairs,
                seed=cfg.protocol.seed,
            ).value
        records.append(
            MetricsRecord(
                run_id=run_id,
                seed=cfg.protocol.seed,
                epoch=epoch,
                protocol=cfg.protocol.kind,
                clients=cfg.protocol.clients,
                active_fraction=cfg.protocol.active_fraction,
                lr_exponent=cfg.protocol.lr_exponent,
                train_loss=m.train_loss,
                val_accuracy=m.val_accuracy,
                server_lr=m.server_lr,
                comm_bytes=epoch_bytes,
                leakage_score=leak_value,
            )
        )

    result = ExperimentResult(
        config=cfg,
        records=records,
        final_accuracy=records[-1].val_accuracy,
        final_loss=records[-1].train_loss,
        total_comm_bytes=ledger.total_bytes(),
        ledger=ledger,
        trainer=trainer,
    )
    if out_dir is not None:
        write_metrics(result, out_dir)
    return result


def write_metrics(result: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = result.config.resolved_run_id()

    with open(out / f"{run_id}.metrics.jsonl", "w") as f:
        for record in result.records:
            f.write(record.to_json() + "\n")

    row = result.summary_row()
    if result.config.include_timestamps:
        row["completed_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(out / f"{run_id}.summary.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow(row)

    with open(out / f"{run_id}.config.json", "w") as f:
        json.dump(result.config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def set_by_path(tree: dict, dotted: str, value) -> None:
    """Set a nested dict entry by dotted path, creating intermediate dicts."""
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError("path crosses a non-object value", field=dotted)
    node[parts[-1]] = value


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")


def sweep(
    base: dict,
    grid: dict[str, list],
    seeds: list[int],
    out_dir=None,
) -> list[dict]:
    """Run the cross product of ``grid`` over ``seeds``; aggregate per cell.

    ``base`` is a raw experiment-config dict; grid keys are dotted paths
    into it. Returns one row per cell with per-seed finals plus mean and
    standard deviation, and writes ``sweep.csv`` when ``out_dir`` is given.
    Independent runs execute in parallel when SPLITSIM_THREADS > 1; results
    are aggregated in grid order either way.
    """
    if not grid:
        raise ConfigError("sweep grid is empty", field="grid")
    if not seeds:
        raise ConfigError("need at least one seed", field="seeds")

    keys = list(grid)
    cells = list(product(*(grid[k] for k in keys)))

    jobs = []
    for cell in cells:
        for seed in seeds:
            raw = json.loads(json.dumps(base))  # deep copy
            for key, value in zip(keys, cell):
                set_by_path(raw, key, value)
            set_by_path(raw, "protocol.seed", seed)
            jobs.append((cell, seed, ExperimentConfig.from_dict(raw)))

    def execute(job):
        cell, seed, cfg = job
        run_dir = Path(out_dir) / "runs" if out_dir is not None else None
        result = run_experiment(cfg, run_dir)
        return cell, seed, result

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(execute, jobs))
    else:
        outcomes = [execute(job) for job in jobs]

    by_cell: dict[tuple, list] = {}
    for cell, seed, result in outcomes:
        by_cell.setdefault(cell, []).append((seed, result))

    rows = []
    for cell in cells:
        entries = by_cell[cell]
        accs = np.array([r.final_accuracy for _, r in entries])
        losses = np.array([r.final_loss for _, r in entries])
        row = {key: value for key, value in zip(keys, cell)}
        row.update(
            {
                "seeds": len(entries),
                "mean_final_accuracy": float(accs.mean()),
                "std_final_accuracy": float(accs.std()),
                "mean_final_loss": float(losses.mean()),
            }
        )
        rows.append(row)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return rows


# ---------------------------------------------------------------------------
# Cost report
# ---------------------------------------------------------------------------

REFERENCE_COST = comm.CostParams(
    cut_size_mb=0.024,
    model_size_mb=200.0,
    client_size_mb=67.0,
    dataset_size=50_000,
    clients=100,
    active_fraction=0.5,
)

DATASET_GRID = (50_000, 500_000, 2_000_000)


def emit_cost_report(
    methods=("fl", "ssl", "sfl", "sglr", "psl"),
    settings: list[comm.CostParams] | None = None,
    names: list[str] | None = None,
) -> str:
    """Cost CSV over the given settings; defaults to the 100-client
    reference point plus a dataset-size grid at the same model sizes."""
    if settings is None:
        settings = [REFERENCE_COST]
        names = ["reference-100clients"]
        for d in DATASET_GRID:
            settings.append(
                comm.CostParams(
                    cut_size_mb=REFERENCE_COST.cut_size_mb,
                    model_size_mb=REFERENCE_COST.model_size_mb,
                    client_size_mb=REFERENCE_COST.client_size_mb,
                    dataset_size=d,
                    clients=REFERENCE_COST.clients,
                    active_fraction=REFERENCE_COST.active_fraction,
                    link_rate=10.0,
                    compute_time=1.0,
                )
            )
            names.append(f"dataset-{d}")
    return comm.cost_table_csv(list(methods), settings, names)
