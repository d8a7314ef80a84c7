"""Analysis tooling: temporal gradient similarity, subspace concentration,
reconstruction-error statistics and inter-client error correlation."""
from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_WINDOW = 64


class GradientTrace:
    """Ring-buffered float32 history of flattened gradients per (client, layer)."""

    def __init__(self, window: int = DEFAULT_WINDOW):
        if window < 1:
            raise ValueError("window must be positive")
        self.window = window
        self._streams: dict[tuple[int, str], deque] = {}

    def append(self, client: int, layer: str, round: int, values) -> None:
        buf = self._streams.setdefault((client, layer), deque(maxlen=self.window))
        if buf and round <= buf[-1][0]:
            raise ValueError(f"round {round} not after {buf[-1][0]} for stream ({client}, {layer})")
        buf.append((int(round), np.asarray(values, dtype=np.float32).ravel().copy()))

    def streams(self) -> list[tuple[int, str]]:
        return sorted(self._streams)

    def layers(self, client: int) -> list[str]:
        return sorted(layer for c, layer in self._streams if c == client)

    def rounds(self, client: int, layer: str) -> list[int]:
        return [r for r, _ in self._streams.get((client, layer), ())]

    def get(self, client: int, layer: str, round: int) -> np.ndarray:
        for r, v in self._streams.get((client, layer), ()):
            if r == round:
                return v
        raise KeyError(f"round {round} not in trace for ({client}, {layer})")

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays, index = {}, []
        for i, (client, layer) in enumerate(self.streams()):
            buf = self._streams[(client, layer)]
            arrays[f"s{i}_rounds"] = np.array([r for r, _ in buf], dtype=np.int64)
            arrays[f"s{i}_values"] = np.stack([v for _, v in buf])
            index.append({"client": client, "layer": layer, "key": f"s{i}"})
        np.savez_compressed(directory / "trace.npz", **arrays)
        (directory / "trace_index.json").write_text(json.dumps({"window": self.window, "streams": index}))
        return directory

    @classmethod
    def load(cls, directory) -> "GradientTrace":
        directory = Path(directory)
        meta = json.loads((directory / "trace_index.json").read_text())
        trace = cls(meta["window"])
        with np.load(directory / "trace.npz") as data:
            for entry in meta["streams"]:
                rounds = data[entry["key"] + "_rounds"]
                values = data[entry["key"] + "_values"]
                for r, v in zip(rounds, values):
                    trace.append(entry["client"], entry["layer"], int(r), v)
        return trace


def cosine(a, b) -> tuple[float, bool]:
    """Cosine similarity in float64; a zero vector yields (0.0, True)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0, True
    if a is b or np.array_equal(a, b):
        return 1.0, False
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0)), False


@dataclass
class Heatmap:
    """``values[layer]`` has one row per round and one column per anchor."""

    client: int
    rounds: list[int]
    anchors: list[int]
    values: dict[str, np.ndarray]
    zero_flags: dict[str, np.ndarray]

    def to_csv(self, path) -> None:
        layers = sorted(self.values)
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round"] + [f"{layer}@{a}" for layer in layers for a in self.anchors])
            for i, r in enumerate(self.rounds):
                row = [r]
                for layer in layers:
                    row.extend(f"{v:.6f}" for v in self.values[layer][i])
                writer.writerow(row)


def cosine_heatmap(trace: GradientTrace, anchor_rounds, client: int = 0, rounds=None, layers=None) -> Heatmap:
    anchors = [int(a) for a in anchor_rounds]
    layers = list(layers) if layers is not None else trace.layers(client)
    if rounds is None:
        rounds = sorted(set.intersection(*(set(trace.rounds(client, layer)) for layer in layers)))
    values, flags = {}, {}
    for layer in layers:
        grid = np.zeros((len(rounds), len(anchors)))
        zero = np.zeros_like(grid, dtype=bool)
        for j, a in enumerate(anchors):
            ref = trace.get(client, layer, a)
            for i, r in enumerate(rounds):
                grid[i, j], zero[i, j] = cosine(trace.get(client, layer, r), ref)
        values[layer], flags[layer] = grid, zero
    return Heatmap(client, list(rounds), anchors, values, flags)


def adjacent_vs_distant(trace: GradientTrace, client: int, layer: str, start: int, stop: int, gap: int):
    """Mean cosine of consecutive rounds vs. of round pairs at least ``gap`` apart.

    Only rounds in ``[start, stop]`` present in the trace are used; a side
    with no qualifying pair is NaN.
    """
    rounds = [r for r in trace.rounds(client, layer) if start <= r <= stop]
    adjacent = [
        cosine(trace.get(client, layer, a), trace.get(client, layer, b))[0]
        for a, b in zip(rounds, rounds[1:])
        if b == a + 1
    ]
    distant = [
        cosine(trace.get(client, layer, a), trace.get(client, layer, b))[0]
        for i, a in enumerate(rounds)
        for b in rounds[i + 1 :]
        if b - a >= gap
    ]
    return tuple(float(np.mean(v)) if v else float("nan") for v in (adjacent, distant))


def subspace_concentration(g_matrix, m_basis) -> float:
    """||M^T G|| / ||G||; an all-zero G counts as fully represented."""
    g = np.asarray(g_matrix, dtype=np.float64)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        return 1.0
    return float(min(1.0, np.linalg.norm(np.asarray(m_basis).T @ g) / norm))


def energy_gap(g_matrix, m_basis, reconstruction) -> float:
    """| ||G - G_hat||^2 - (1 - chi^2) ||G||^2 | / ||G||^2 for one stream."""
    g = np.asarray(g_matrix, dtype=np.float64)
    g_sq = float(np.sum(g * g))
    if g_sq == 0.0:
        return 0.0
    e = g - reconstruction
    chi = np.linalg.norm(np.asarray(m_basis).T @ g) / np.sqrt(g_sq)
    return abs(float(np.sum(e * e)) - (1.0 - chi**2) * g_sq) / g_sq


@dataclass
class ErrorCorrelation:
    mean_err: float
    avg_err: float
    tau_hat: float
    identity_residual: float


def error_correlation(errors) -> ErrorCorrelation:
    """Per-round statistics of client reconstruction errors.

    ``mean_err`` is the mean of ||e_i||^2, ``avg_err`` is ||(1/N) sum e_i||^2
    and ``tau_hat`` the largest inner product between distinct clients.
    ``identity_residual`` is the relative gap in
    ||(1/N) sum e||^2 = (sum ||e_i||^2 + sum_{i != j} <e_i, e_j>) / N^2.
    """
    e = np.stack([np.asarray(x, dtype=np.float64).ravel() for x in errors])
    n = e.shape[0]
    if n < 2:
        raise ValueError("error_correlation needs at least two clients")
    gram = e @ e.T
    sq = np.diag(gram)
    off = gram[~np.eye(n, dtype=bool)]
    avg = e.mean(axis=0)
    avg_err = float(avg @ avg)
    expanded = (sq.sum() + off.sum()) / n**2
    scale = max(float(sq.max()), np.finfo(float).tiny)
    return ErrorCorrelation(
        mean_err=float(sq.mean()),
        avg_err=avg_err,
        tau_hat=float(off.max()),
        identity_residual=abs(avg_err - expanded) / scale,
    )


@dataclass
class ErrorStats:
    round: int
    layer: str
    err_sq: list[float] = field(default_factory=list)
    chi_sq: list[float] = field(default_factory=list)
    g_sq: list[float] = field(default_factory=list)
    energy_gap: list[float] = field(default_factory=list)
    avg_err_sq: float | None = None
    tau_hat: float | None = None
    identity_residual: float | None = None
    rho_sq_hat: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def summarize_errors(round: int, layer: str, items, rho_sq_prev: float = 0.0) -> ErrorStats:
    """Build :class:`ErrorStats` from ``(g_matrix, m_basis, reconstruction)`` triples."""
    stats = ErrorStats(round=round, layer=layer)
    errors = []
    for g, m_basis, recon in items:
        g = np.asarray(g, dtype=np.float64)
        e = g - recon
        errors.append(e)
        stats.err_sq.append(float(np.sum(e * e)))
        stats.chi_sq.append(subspace_concentration(g, m_basis) ** 2)
        stats.g_sq.append(float(np.sum(g * g)))
        stats.energy_gap.append(energy_gap(g, m_basis, recon))
    if len(errors) >= 2:
        corr = error_correlation(errors)
        stats.avg_err_sq, stats.tau_hat, stats.identity_residual = corr.avg_err, corr.tau_hat, corr.identity_residual
    stats.rho_sq_hat = max([rho_sq_prev, *stats.g_sq])
    return stats
