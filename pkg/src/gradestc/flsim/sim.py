"""Deterministic FedAvg simulation with pluggable per-layer uplink codecs."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import wire
from ..errors import DivergenceDetected
from ..metrics import ErrorStats, GradientTrace, summarize_errors
from ..seeding import TAG_SELECT, TAG_SHUFFLE, derive_rng
from .codecs import make_channel
from .config import SimConfig
from .data import Dataset, gaussian_mixture, load_csv, load_idx, partition_dataset
from .models import Model, Params, build_model


def local_train(model: Model, params: Params, data: Dataset, epochs: int, lr: float, batch_size: int, rng):
    """Minibatch SGD on a copy of ``params``.

    Returns ``(pseudo_gradient, mean_loss)`` where the pseudo-gradient is
    ``(w_pre - w_post) / lr`` per layer. ``params`` is left untouched.
    """
    work = {name: w.copy() for name, w in params.items()}
    losses = []
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            loss, grads = model.loss_and_grads(work, data.x[batch], data.y[batch])
            if not math.isfinite(loss):
                raise DivergenceDetected(f"loss became {loss}")
            losses.append(loss)
            for name, g in grads.items():
                work[name] -= lr * g
    pseudo = {name: (params[name] - work[name]) / lr for name in params}
    for name, g in pseudo.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceDetected(f"non-finite update in {name}")
    return pseudo, float(np.mean(losses)) if losses else float("nan")


def n_selected(fraction: float, n_clients: int) -> int:
    return max(1, min(n_clients, math.ceil(fraction * n_clients - 1e-9)))


def select_clients(config: SimConfig, round_idx: int) -> np.ndarray:
    count = n_selected(config.participation_fraction, config.n_clients)
    if count == config.n_clients:
        return np.arange(config.n_clients)
    rng = derive_rng(config.seed, TAG_SELECT, round_idx)
    return np.sort(rng.choice(config.n_clients, size=count, replace=False))


@dataclass
class RoundReport:
    round: int
    participants: list[int]
    test_accuracy: float
    test_loss: float
    train_loss: float
    uplink_bytes: int
    cum_bytes: int
    compressed_bytes: int
    sum_d: int
    d_replaced: int
    weight_norm: float


REPORT_COLUMNS = ("round", "accuracy", "loss", "uplink_bytes", "cum_bytes")


def load_datasets(config: SimConfig) -> tuple[Dataset, Dataset]:
    files = config.data.files
    if not files:
        return gaussian_mixture(config.data.mixture, config.seed)
    if "csv" in files:
        train = load_csv(files["csv"])
        test = load_csv(files["test_csv"], train.n_classes) if "test_csv" in files else train
    else:
        train = load_idx(files["idx_images"], files["idx_labels"])
        test = (
            load_idx(files["test_idx_images"], files["test_idx_labels"]) if "test_idx_images" in files else train
        )
    return train, test


class Simulation:
    """Server plus clients for one configuration.

    ``trace_layers`` lists layers whose raw pseudo-gradients are recorded
    in :attr:`trace`; ``collect_errors`` keeps per-round :class:`ErrorStats`
    for every GradESTC layer.
    """

    def __init__(self, config: SimConfig, trace_layers=(), trace_window: int = 64, collect_errors: bool = False):
        self.config = config
        self.train, self.test = load_datasets(config)
        spec = config.model
        if config.data.files:
            spec.features = self.train.x.shape[1]
            spec.classes = self.train.n_classes
        self.model = build_model(spec)
        self.params = self.model.init_params()
        self.codecs = config.resolve_codecs(self.params)
        part = config.partition
        self.client_indices = partition_dataset(
            self.train.y, config.n_clients, part.kind, part.alpha, config.seed
        )
        self.client_data = [self.train.subset(idx) for idx in self.client_indices]
        self.channels = {
            (c, name): make_channel(c, name, self.params[name], self.codecs[name], config.seed)
            for c in range(config.n_clients)
            for name in self.params
        }
        self.seq = {key: 0 for key in self.channels}
        self.ledger = wire.CommLedger()
        self.round_idx = 0
        self.cum_bytes = 0
        self.reports: list[RoundReport] = []
        self.trace_layers = tuple(trace_layers)
        self.trace = GradientTrace(trace_window) if self.trace_layers else None
        self.collect_errors = collect_errors
        self.error_stats: list[ErrorStats] = []
        self._rho_sq: dict[str, float] = {}

    @property
    def compressed_layers(self) -> list[str]:
        return [name for name, spec in self.codecs.items() if spec.kind != "none"]

    def client_update(self, client: int, round_idx: int):
        rng = derive_rng(self.config.seed, TAG_SHUFFLE, client, round_idx)
        return local_train(
            self.model,
            self.params,
            self.client_data[client],
            self.config.local_epochs,
            self.config.learning_rate,
            self.config.batch_size,
            rng,
        )

    def run_round(self) -> RoundReport:
        cfg = self.config
        r = self.round_idx
        participants = select_clients(cfg, r)
        decoded: dict[str, list[np.ndarray]] = {name: [] for name in self.params}
        error_items: dict[str, list] = {}
        round_bytes = compressed_bytes = sum_d = replaced = 0
        losses = []

        for c in participants:
            pseudo, loss = self.client_update(int(c), r)
            losses.append(loss)
            for name, g in pseudo.items():
                if self.trace is not None and name in self.trace_layers:
                    self.trace.append(int(c), name, r, g)
                client_half, server_half = self.channels[(int(c), name)]
                up = client_half.encode(g, self.seq[(int(c), name)])
                self.seq[(int(c), name)] += 1
                wire.record_upload(self.ledger, up, r, int(c))
                decoded[name].append(server_half.decode(up))
                round_bytes += up.nbytes
                if self.codecs[name].kind != "none":
                    compressed_bytes += up.nbytes
                sum_d += up.d_probed
                replaced += up.d_replaced
                if self.collect_errors and "m_basis" in up.diagnostics:
                    state = client_half.state
                    result = up.diagnostics["result"]
                    recon = state.m_basis @ result.coefficients
                    error_items.setdefault(name, []).append((up.diagnostics["g_matrix"], state.m_basis, recon))

        weights = self._aggregation_weights(participants)
        for name in self.params:
            stacked = np.stack(decoded[name])
            if weights is None:
                avg = np.mean(stacked, axis=0)
            else:
                avg = np.tensordot(weights, stacked, axes=1)
            self.params[name] = self.params[name] - cfg.learning_rate * avg

        for name, items in error_items.items():
            stats = summarize_errors(r, name, items, self._rho_sq.get(name, 0.0))
            self._rho_sq[name] = stats.rho_sq_hat
            self.error_stats.append(stats)

        self.cum_bytes += round_bytes
        report = RoundReport(
            round=r,
            participants=[int(c) for c in participants],
            test_accuracy=self.model.accuracy(self.params, self.test.x, self.test.y),
            test_loss=self.model.loss(self.params, self.test.x, self.test.y),
            train_loss=float(np.mean(losses)),
            uplink_bytes=round_bytes,
            cum_bytes=self.cum_bytes,
            compressed_bytes=compressed_bytes,
            sum_d=sum_d,
            d_replaced=replaced,
            weight_norm=float(np.sqrt(sum(np.sum(w * w) for w in self.params.values()))),
        )
        self.reports.append(report)
        self.round_idx += 1
        return report

    def _aggregation_weights(self, participants):
        if self.config.aggregation == "uniform":
            return None
        sizes = np.array([len(self.client_data[c]) for c in participants], dtype=np.float64)
        return sizes / sizes.sum()

    def run(self, rounds: int | None = None) -> list[RoundReport]:
        for _ in range(self.config.rounds if rounds is None else rounds):
            self.run_round()
        return self.reports

    def summary(self) -> dict:
        reports = self.reports
        threshold = self.config.accuracy_threshold
        at_threshold = None
        if threshold is not None:
            for rep in reports:
                if rep.test_accuracy >= threshold:
                    at_threshold = rep.cum_bytes
                    break
        compressed = self.compressed_layers
        layer_meta = {}
        for name, w in self.params.items():
            spec = self.codecs[name]
            n = int(w.size)
            sent = self.ledger.total_bytes(layers=[name])
            baseline = wire.uncompressed_bytes(n) * sum(len(rep.participants) for rep in reports)
            layer_meta[name] = {
                "shape": list(w.shape),
                "params": n,
                "codec": spec.kind,
                "bytes": sent,
                "k_slot_elements": self.ledger.total_k_slot_elements(layers=[name]),
                "compression_ratio": baseline / sent if sent else None,
            }
        return {
            "rounds": len(reports),
            "final_accuracy": reports[-1].test_accuracy if reports else None,
            "best_accuracy": max((rep.test_accuracy for rep in reports), default=None),
            "accuracy_threshold": threshold,
            "bytes_at_threshold": at_threshold,
            "total_bytes": self.cum_bytes,
            "compressed_layer_bytes": self.ledger.total_bytes(layers=compressed) if compressed else 0,
            "sum_d": sum(rep.sum_d for rep in reports),
            "layers": layer_meta,
        }

    def write_outputs(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "rounds.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for rep in self.reports:
                writer.writerow(
                    [rep.round, f"{rep.test_accuracy:.6f}", f"{rep.test_loss:.6f}", rep.uplink_bytes, rep.cum_bytes]
                )
        self.ledger.to_csv(out / "ledger.csv")
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2))
        if self.error_stats:
            with (out / "error_stats.jsonl").open("w") as fh:
                for stats in self.error_stats:
                    fh.write(stats.to_json() + "\n")
        if self.trace is not None:
            self.trace.save(out / "trace")
        return out


def reports_as_dicts(reports) -> list[dict]:
    return [asdict(rep) for rep in reports]
