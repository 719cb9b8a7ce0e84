"""Candidate pools, diversity selection, pair enumeration, preprocessing.

A pool is a list of (id, actuator vector) entries; images are always the
deterministic render of the actuators, so they can be regenerated from
the manifest instead of being decoded from disk.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import face
from .errors import DegenerateVector, InsufficientPool, InvalidImage, IoError

POOL_MANIFEST = "pool.jsonl"
PAIRS_CSV = "pairs.csv"


@dataclass
class PoolEntry:
    entry_id: int
    actuators: np.ndarray
    image_path: str | None = None
    sha256: str | None = None


@dataclass
class CandidatePool:
    entries: list[PoolEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def ids(self) -> list[int]:
        return [e.entry_id for e in self.entries]

    def entry(self, entry_id: int) -> PoolEntry:
        for e in self.entries:
            if e.entry_id == entry_id:
                return e
        raise KeyError(entry_id)

    def actuator_matrix(self) -> np.ndarray:
        return np.stack([e.actuators for e in self.entries])

    def images(self) -> np.ndarray:
        """Rendered images, shape (n, 224, 224)."""
        return np.stack([face.render(e.actuators) for e in self.entries])


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two flattened vectors, in [-1, 1].

    Identical inputs short-circuit to exactly 1.0; zero-norm inputs raise
    DegenerateVector.
    """
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.shape != bv.shape:
        raise DegenerateVector(f"length mismatch: {av.shape[0]} vs {bv.shape[0]}")
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVector("cosine similarity undefined for zero-norm input")
    if np.array_equal(av, bv):
        return 1.0
    return float(np.clip(av @ bv / (na * nb), -1.0, 1.0))


def _cosine_distance_matrix(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateVector("pool contains a zero-norm image vector")
    unit = x / norms[:, None]
    d = 1.0 - unit @ unit.T
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 2.0)


def select_diverse(pool: CandidatePool, k: int = 100) -> CandidatePool:
    """Greedy farthest-point subset of `k` entries under cosine distance.

    Seeds with the most distant pair, then repeatedly adds the candidate
    whose minimum distance to the selected set is largest. Deterministic:
    ties break toward the earlier pool position (lowest id for id-sorted
    pools). Selected entries keep their original ids, in selection order.
    """
    if k < 2:
        raise InsufficientPool(f"need k >= 2, got {k}")
    if len(pool) < k:
        raise InsufficientPool(f"pool has {len(pool)} entries, need at least {k}")
    if len(pool) == k:
        return CandidatePool(list(pool.entries))

    flat = pool.images().reshape(len(pool), -1)
    dist = _cosine_distance_matrix(flat)

    # argmax on the flattened matrix lands on the lexicographically first
    # maximal (i, j) pair, which is the tie-break we want.
    i, j = np.unravel_index(int(np.argmax(dist)), dist.shape)
    selected = [min(i, j), max(i, j)]
    min_dist = np.minimum(dist[selected[0]], dist[selected[1]])
    min_dist[selected] = -np.inf
    while len(selected) < k:
        nxt = int(np.argmax(min_dist))
        selected.append(nxt)
        min_dist = np.minimum(min_dist, dist[nxt])
        min_dist[nxt] = -np.inf
    return CandidatePool([pool.entries[s] for s in selected])


def enumerate_pairs(pool_or_ids) -> list[tuple[int, int]]:
    """All unordered id pairs (left < right), lexicographically sorted."""
    if isinstance(pool_or_ids, CandidatePool):
        ids = pool_or_ids.ids()
    else:
        ids = list(pool_or_ids)
    if len(ids) < 2:
        raise InsufficientPool(f"need at least 2 items, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise InsufficientPool("duplicate ids in pair enumeration")
    return list(combinations(sorted(ids), 2))


def bilinear_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resample with half-pixel-centered coordinates."""
    src = np.asarray(img, dtype=np.float64)
    sh, sw = src.shape
    if (sh, sw) == (height, width):
        return src.copy()
    ry = np.clip((np.arange(height) + 0.5) * (sh / height) - 0.5, 0.0, sh - 1.0)
    rx = np.clip((np.arange(width) + 0.5) * (sw / width) - 0.5, 0.0, sw - 1.0)
    y0 = np.floor(ry).astype(int)
    x0 = np.floor(rx).astype(int)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    wy = (ry - y0)[:, None]
    wx = (rx - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1.0 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1.0 - wx) + src[np.ix_(y1, x1)] * wx
    return top * (1.0 - wy) + bot * wy


def preprocess(raw, channels: int = 1) -> np.ndarray:
    """Standard model input: resize to 224x224 and map [0, 1] -> [-1, 1].

    Returns shape (channels, 224, 224) with the grayscale plane replicated
    across channels.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidImage(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidImage("image values must be finite and in [0, 1]")
    if channels < 1:
        raise InvalidImage(f"channels must be >= 1, got {channels}")
    if arr.shape != (face.IMAGE_SIZE, face.IMAGE_SIZE):
        arr = bilinear_resize(arr, face.IMAGE_SIZE, face.IMAGE_SIZE)
    normalized = (arr - 0.5) / 0.5
    return np.repeat(normalized[None, :, :], channels, axis=0)


def save_pool(pool: CandidatePool, path) -> None:
    """Write a pool manifest as JSONL (one entry per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for e in pool.entries:
            record = {
                "id": e.entry_id,
                "actuators": [float(x) for x in e.actuators],
                "image_path": e.image_path,
                "sha256": e.sha256,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_pool(path) -> CandidatePool:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"pool manifest not found: {path}")
    entries = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            entries.append(PoolEntry(
                entry_id=int(rec["id"]),
                actuators=np.asarray(rec["actuators"], dtype=np.float64),
                image_path=rec.get("image_path"),
                sha256=rec.get("sha256"),
            ))
    seen = set()
    for e in entries:
        if e.entry_id in seen:
            raise IoError(f"duplicate pool id {e.entry_id} in {path}")
        seen.add(e.entry_id)
    return CandidatePool(entries)


def save_pairs(pairs, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["left_id", "right_id"])
        for left, right in pairs:
            writer.writerow([left, right])


def load_pairs(path) -> list[tuple[int, int]]:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"pair file not found: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["left_id", "right_id"]:
            raise IoError(f"unexpected pair file header in {path}: {header}")
        return [(int(l), int(r)) for l, r in reader]


def image_checksum(img) -> str:
    """SHA-256 of the quantized 8-bit pixel data (encoder independent)."""
    from .imaging import to_uint8

    return hashlib.sha256(to_uint8(img).tobytes()).hexdigest()
