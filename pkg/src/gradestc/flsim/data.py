"""Synthetic classification data, small-file loaders and client partitioning."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, TooFewSamples
from ..seeding import TAG_DATA, TAG_PARTITION, derive_rng

MAX_PARTITION_RETRIES = 100


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.n_classes)


@dataclass
class MixtureSpec:
    samples: int = 4000
    test_samples: int = 1000
    features: int = 32
    classes: int = 4
    clusters_per_class: int = 1
    separation: float = 3.0
    noise: float = 1.0
    latent_dim: int | None = None
    ambient_noise: float = 0.0


def gaussian_mixture(spec: MixtureSpec, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded Gaussian-mixture task; returns (train, test).

    Each class owns ``clusters_per_class`` isotropic Gaussian blobs whose
    centres are drawn on a sphere of radius ``separation``. With
    ``latent_dim`` set, the blobs live in a random ``latent_dim``-dimensional
    subspace of the feature space and ``ambient_noise`` adds isotropic noise
    in all features. Train and test sets are drawn from the same mixture.
    """
    if spec.classes < 2 or spec.features < 1 or spec.clusters_per_class < 1:
        raise ConfigError(f"invalid mixture spec {spec}")
    latent = spec.latent_dim or spec.features
    if not 1 <= latent <= spec.features:
        raise ConfigError(f"latent_dim must be in [1, features], got {spec.latent_dim}")
    rng = derive_rng(seed, TAG_DATA)
    n_blobs = spec.classes * spec.clusters_per_class
    centres = rng.standard_normal((n_blobs, latent))
    centres *= spec.separation / np.linalg.norm(centres, axis=1, keepdims=True)
    blob_class = np.arange(n_blobs) % spec.classes
    if spec.latent_dim:
        embed, _ = np.linalg.qr(rng.standard_normal((spec.features, latent)))
    else:
        embed = np.eye(spec.features)

    def draw(count: int) -> Dataset:
        blob = rng.integers(0, n_blobs, size=count)
        z = centres[blob] + spec.noise * rng.standard_normal((count, latent))
        x = z @ embed.T
        if spec.ambient_noise:
            x = x + spec.ambient_noise * rng.standard_normal((count, spec.features))
        return Dataset(x, blob_class[blob].astype(np.int64), spec.classes)

    return draw(spec.samples), draw(spec.test_samples)


def load_csv(path, n_classes: int | None = None) -> Dataset:
    """Label in the first column, features after it, no header row."""
    table = np.loadtxt(path, delimiter=",", ndmin=2)
    y = table[:, 0].astype(np.int64)
    return Dataset(table[:, 1:].astype(np.float64), y, n_classes or int(y.max()) + 1)


def _read_idx(path) -> np.ndarray:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        data = fh.read()
    zero, dtype_code, ndim = struct.unpack_from(">HBB", data, 0)
    if zero != 0 or dtype_code != 0x08:
        raise ValueError(f"{path}: only unsigned-byte IDX files are supported")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    return np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """MNIST-style IDX pair; pixels scaled to [0, 1] and flattened."""
    images = _read_idx(images_path).astype(np.float64) / 255.0
    labels = _read_idx(labels_path).astype(np.int64)
    return Dataset(images.reshape(images.shape[0], -1), labels, int(labels.max()) + 1)


def dirichlet_proportions(n_classes: int, n_clients: int, alpha: float, seed: int, attempt: int = 0) -> np.ndarray:
    """Row c holds the share of class c given to each client."""
    rng = derive_rng(seed, TAG_PARTITION, attempt)
    return rng.dirichlet(np.full(n_clients, alpha), size=n_classes)


def _split_by_proportions(labels, n_classes, props, rng) -> list[list[int]]:
    n_clients = props.shape[1]
    parts: list[list[int]] = [[] for _ in range(n_clients)]
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        cuts = (np.cumsum(props[c])[:-1] * idx.size).astype(np.int64)
        for client, chunk in enumerate(np.split(idx, cuts)):
            parts[client].extend(chunk.tolist())
    return parts


def partition_dataset(labels, n_clients: int, kind: str = "iid", alpha: float | None = None, seed: int = 0):
    """Split sample indices across clients.

    ``iid`` shuffles and deals out equal-size shards. ``dirichlet`` gives
    each client a Dirichlet(alpha)-distributed share of every class; a draw
    that leaves some client empty is redrawn, and after
    ``MAX_PARTITION_RETRIES`` failures empty clients take one sample each
    from the largest clients in turn.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n < n_clients:
        raise TooFewSamples(f"{n} samples cannot cover {n_clients} clients")

    if kind == "iid":
        rng = derive_rng(seed, TAG_PARTITION)
        perm = rng.permutation(n)
        return [np.sort(p) for p in np.array_split(perm, n_clients)]
    if kind != "dirichlet":
        raise ConfigError(f"unknown partition kind {kind!r}")
    if alpha is None or alpha <= 0:
        raise ConfigError("dirichlet partition needs alpha > 0")

    n_classes = int(labels.max()) + 1
    for attempt in range(MAX_PARTITION_RETRIES):
        props = dirichlet_proportions(n_classes, n_clients, alpha, seed, attempt)
        parts = _split_by_proportions(labels, n_classes, props, derive_rng(seed, TAG_PARTITION, attempt, 1))
        if all(parts):
            break
    else:
        for client in range(n_clients):
            if not parts[client]:
                donor = max(range(n_clients), key=lambda c: len(parts[c]))
                parts[client].append(parts[donor].pop())
    return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]
