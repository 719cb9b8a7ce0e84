"""Interactive ranking: merge-sort comparison scheduling with an external
oracle (human or synthetic), binary-search insertion, and rank statistics.

A SortSession runs a top-down merge sort whose comparisons are served one
at a time: `next_query` returns the pending pair (idempotently until it is
answered) and `submit_answer` advances the sort. The session is fully
reconstructible by replaying its answer log from (items, seed), which is
also how the JSONL persistence format works.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .errors import (
    IncomparableRankings,
    InvalidItems,
    InvalidWinner,
    IoError,
    StaleAnswer,
)


class ComparisonQuery(NamedTuple):
    query_id: int
    left_id: int
    right_id: int
    emotion: str


class ComparisonAnswer(NamedTuple):
    query_id: int
    winner: int


@dataclass(frozen=True)
class Ranking:
    """Total order over item ids; position 0 is the strongest item."""

    order: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.order)) != len(self.order):
            raise InvalidItems("ranking contains duplicate items")

    def __len__(self):
        return len(self.order)

    def __contains__(self, item):
        return item in self.positions()

    def positions(self) -> dict[int, int]:
        cached = self.__dict__.get("_positions")
        if cached is None:
            cached = {item: pos for pos, item in enumerate(self.order)}
            self.__dict__["_positions"] = cached
        return cached

    def sigma(self, item) -> int:
        return self.positions()[item]


def _merge_plan(items):
    """Generator running a top-down merge sort, strongest first.

    Yields (left_candidate, right_candidate) pairs and expects the winner
    to be sent back. Returns the final descending order.
    """

    def sort(seq):
        if len(seq) <= 1:
            return seq
        mid = len(seq) // 2
        left = yield from sort(seq[:mid])
        right = yield from sort(seq[mid:])
        merged = []
        i = j = 0
        while i < len(left) and j < len(right):
            winner = yield (left[i], right[j])
            if winner == left[i]:
                merged.append(left[i])
                i += 1
            else:
                merged.append(right[j])
                j += 1
        merged.extend(left[i:])
        merged.extend(right[j:])
        return merged

    result = yield from sort(items)
    return result


class SortSession:
    """Resumable merge-sort ranking session for one (annotator, emotion)."""

    __slots__ = (
        "items", "emotion", "annotator_id", "seed", "shuffled",
        "log", "result", "_plan", "_pending",
    )

    def __init__(self, items, emotion="neutral", annotator_id="", seed=0):
        items = list(items)
        if not items:
            raise InvalidItems("session needs at least one item")
        if len(set(items)) != len(items):
            raise InvalidItems("session items must be unique")
        self.items = items
        self.emotion = str(getattr(emotion, "value", emotion))
        self.annotator_id = annotator_id
        self.seed = int(seed)
        shuffled = list(items)
        random.Random(self.seed).shuffle(shuffled)
        self.shuffled = shuffled
        self.log: list[tuple[int, int, int, float]] = []  # (left, right, winner, ts)
        self.result: Ranking | None = None
        self._plan = _merge_plan(shuffled)
        self._pending: tuple[int, int] | None = None
        self._advance(None)

    def _advance(self, winner):
        try:
            if winner is None:
                self._pending = next(self._plan)
            else:
                self._pending = self._plan.send(winner)
        except StopIteration as stop:
            self._pending = None
            self.result = Ranking(tuple(stop.value))

    @property
    def completed(self) -> bool:
        return self.result is not None

    def answered_count(self) -> int:
        return len(self.log)

    def next_query(self) -> ComparisonQuery | None:
        """Pending query, or None once the session is complete.

        Idempotent: repeated calls without an intervening answer return
        the same query (same query_id, same pair).
        """
        if self._pending is None:
            return None
        left, right = self._pending
        return ComparisonQuery(len(self.log), left, right, self.emotion)

    def submit(self, query_id: int, winner: int, timestamp: float | None = None) -> None:
        if self._pending is None:
            raise StaleAnswer("session already complete")
        if query_id != len(self.log):
            raise StaleAnswer(f"expected answer to query {len(self.log)}, got {query_id}")
        left, right = self._pending
        if winner != left and winner != right:
            raise InvalidWinner(f"winner {winner} not in pair ({left}, {right})")
        if timestamp is None:
            timestamp = time.time()
        self.log.append((left, right, winner, timestamp))
        self._advance(winner)

    def run_with_oracle(self, stronger: Callable[[int, int], int],
                        timestamp: float | None = 0.0) -> Ranking:
        """Drive the session to completion with `stronger(a, b) -> winner id`."""
        pending = self._pending
        while pending is not None:
            left, right = pending
            self.submit(len(self.log), stronger(left, right), timestamp)
            pending = self._pending
        return self.result


def new_session(items, emotion="neutral", annotator_id="", seed=0) -> SortSession:
    return SortSession(items, emotion, annotator_id, seed)


def next_query(session: SortSession):
    return session.next_query()


def submit_answer(session: SortSession, answer: ComparisonAnswer,
                  timestamp: float | None = None) -> SortSession:
    session.submit(answer.query_id, answer.winner, timestamp)
    return session


def worst_case_comparisons(n: int) -> int:
    """Merge-sort worst case: n*ceil(lg n) - 2^ceil(lg n) + 1 (0 for n <= 1)."""
    if n <= 1:
        return 0
    k = math.ceil(math.log2(n))
    return n * k - 2**k + 1


def insert_item(ranking: Ranking, item: int,
                stronger: Callable[[int, int], int]) -> Ranking:
    """Insert `item` into a ranking with at most ceil(lg(n+1)) comparisons.

    `stronger(a, b)` returns the id of the stronger item; the result is
    consistent with every answer the oracle gave.
    """
    if item in ranking:
        raise InvalidItems(f"item {item} already ranked")
    order = ranking.order
    lo, hi = 0, len(order)
    while lo < hi:
        mid = (lo + hi) // 2
        if stronger(item, order[mid]) == item:
            hi = mid
        else:
            lo = mid + 1
    return Ranking(order[:lo] + (item,) + order[lo:])


def _count_inversions(seq: list[int]) -> int:
    n = len(seq)
    if n < 2:
        return 0
    work = list(seq)
    buffer = [0] * n
    inversions = 0
    width = 1
    while width < n:
        for start in range(0, n - width, 2 * width):
            mid = start + width
            end = min(start + 2 * width, n)
            i, j, k = start, mid, start
            while i < mid and j < end:
                if work[i] <= work[j]:
                    buffer[k] = work[i]
                    i += 1
                else:
                    buffer[k] = work[j]
                    inversions += mid - i
                    j += 1
                k += 1
            buffer[k:end] = work[i:mid] if i < mid else work[j:end]
            work[start:end] = buffer[start:end]
        width *= 2
    return inversions


def kendall_tau(a: Ranking, b: Ranking) -> float:
    """(concordant - discordant) / total over all item pairs; in [-1, 1]."""
    if set(a.order) != set(b.order):
        raise IncomparableRankings("rankings cover different item sets")
    n = len(a)
    total = n * (n - 1) // 2
    if total == 0:
        return 1.0
    pos_b = b.positions()
    seq = [pos_b[item] for item in a.order]
    discordant = _count_inversions(seq)
    concordant = total - discordant
    return (concordant - discordant) / total


def consistency_check(ranking: Ranking, log) -> float:
    """Signed agreement of a ranking with logged answers; 1.0 for empty logs.

    Each log entry is (left, right, winner, ...); an entry is concordant
    when the winner precedes the loser in the ranking.
    """
    if not log:
        return 1.0
    pos = ranking.positions()
    concordant = 0
    for entry in log:
        left, right, winner = entry[0], entry[1], entry[2]
        loser = right if winner == left else left
        if pos[winner] < pos[loser]:
            concordant += 1
    discordant = len(log) - concordant
    return (concordant - discordant) / len(log)


def session_filename(annotator_id: str, emotion) -> str:
    emotion = str(getattr(emotion, "value", emotion))
    return f"session-{annotator_id}-{emotion}.jsonl"


def session_header(session: SortSession) -> dict:
    return {
        "items": list(session.items),
        "seed": session.seed,
        "emotion": session.emotion,
        "annotator_id": session.annotator_id,
    }


def answer_record(session: SortSession, index: int) -> dict:
    left, right, winner, ts = session.log[index]
    return {
        "query_id": index,
        "left_id": left,
        "right_id": right,
        "winner": winner,
        "timestamp": ts,
    }


def ranking_record(session: SortSession) -> dict:
    return {"ranking": list(session.result.order)}


def save_session(session: SortSession, path) -> None:
    """Write the full session file: header, one line per answer, final ranking."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(session_header(session), sort_keys=True) + "\n")
        for i in range(len(session.log)):
            fh.write(json.dumps(answer_record(session, i), sort_keys=True) + "\n")
        if session.completed:
            fh.write(json.dumps(ranking_record(session), sort_keys=True) + "\n")


def load_session(path) -> SortSession:
    """Rebuild a session by replaying its log; verifies internal consistency."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"session file not found: {path}")
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()
             if ln.strip()]
    records = []
    for i, line in enumerate(lines):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break  # torn final write: the answer was never acked
            raise IoError(f"corrupt record {i} in {path}")
    if not records:
        raise IoError(f"empty session file: {path}")
    header = records[0]
    try:
        session = SortSession(
            header["items"], header["emotion"], header["annotator_id"], header["seed"]
        )
    except KeyError as exc:
        raise IoError(f"session header missing field {exc}") from exc
    stored_ranking = None
    for rec in records[1:]:
        if "ranking" in rec:
            stored_ranking = rec["ranking"]
            continue
        pending = session.next_query()
        if pending is None:
            raise IoError(f"log continues past completion in {path}")
        if (rec["left_id"], rec["right_id"]) != (pending.left_id, pending.right_id):
            raise IoError(
                f"log does not replay: query {rec['query_id']} pair mismatch in {path}"
            )
        try:
            session.submit(rec["query_id"], rec["winner"], rec.get("timestamp"))
        except (StaleAnswer, InvalidWinner) as exc:
            raise IoError(f"log does not replay in {path}: {exc}") from exc
    if stored_ranking is not None:
        if not session.completed or list(session.result.order) != list(stored_ranking):
            raise IoError(f"stored ranking does not match replay in {path}")
    return session


def latent_oracle(pool, emotion, seed: int = 0) -> Callable[[int, int], int]:
    """Comparator answering by the synthetic latent intensity of pool images.

    Ties (measure-zero in general position) break toward the lower id so
    the oracle stays a deterministic total order.
    """
    from . import face as _face

    scores = {
        e.entry_id: _face.latent_intensity(e.actuators, emotion, seed=seed)
        for e in pool.entries
    }

    def stronger(a: int, b: int) -> int:
        sa, sb = scores[a], scores[b]
        if sa == sb:
            return min(a, b)
        return a if sa > sb else b

    return stronger


def latent_order(pool, emotion, seed: int = 0) -> Ranking:
    """Descending latent-intensity order of a pool (strongest first)."""
    from . import face as _face

    scored = sorted(
        ((_face.latent_intensity(e.actuators, emotion, seed=seed), -e.entry_id, e.entry_id)
         for e in pool.entries),
        reverse=True,
    )
    return Ranking(tuple(entry_id for _, _, entry_id in scored))


def spearman_rho(values_a, values_b) -> float:
    """Spearman rank correlation between two equal-length score sequences."""
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise IncomparableRankings("score sequences must be 1-D and equal length")
    ra = np.argsort(np.argsort(a))
    rb = np.argsort(np.argsort(b))
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    denom = np.sqrt((ra @ ra) * (rb @ rb))
    if denom == 0.0:
        return 0.0
    return float((ra @ rb) / denom)
