import math
import random

import numpy as np
import pytest

from prefrank import face, ranking
from prefrank.errors import (
    IncomparableRankings,
    InvalidItems,
    InvalidWinner,
    IoError,
    StaleAnswer,
)

from conftest import brute_force_kendall, reference_merge_sort


def value_oracle(values):
    def stronger(a, b):
        return a if values[a] > values[b] else b
    return stronger


def run_session(items, values, seed=0, emotion="anger"):
    session = ranking.SortSession(items, emotion, "t", seed)
    session.run_with_oracle(value_oracle(values))
    return session


# -- session basics -------------------------------------------------------------


def test_single_item_session_completes_immediately():
    session = ranking.SortSession([42], "fear", "t", 0)
    assert session.completed
    assert session.next_query() is None
    assert session.result.order == (42,)


def test_two_item_session():
    session = ranking.SortSession([1, 2], "fear", "t", 3)
    q = session.next_query()
    assert {q.left_id, q.right_id} == {1, 2}
    assert q.query_id == 0
    session.submit(q.query_id, 2)
    assert session.completed
    assert session.result.order[0] == 2


def test_same_seed_gives_identical_first_query():
    q1 = ranking.SortSession(list(range(20)), "anger", "t", 9).next_query()
    q2 = ranking.SortSession(list(range(20)), "anger", "t", 9).next_query()
    assert q1 == q2


def test_next_query_idempotent_until_answered():
    session = ranking.SortSession(list(range(6)), "anger", "t", 1)
    q1 = session.next_query()
    q2 = session.next_query()
    assert q1 == q2
    session.submit(q1.query_id, q1.left_id)
    assert session.next_query() != q1 or session.completed


def test_duplicate_items_rejected():
    with pytest.raises(InvalidItems):
        ranking.SortSession([1, 1, 2], "anger", "t", 0)
    with pytest.raises(InvalidItems):
        ranking.SortSession([], "anger", "t", 0)


def test_answer_validation():
    session = ranking.SortSession(list(range(4)), "anger", "t", 0)
    q = session.next_query()
    with pytest.raises(StaleAnswer):
        session.submit(q.query_id + 1, q.left_id)
    with pytest.raises(InvalidWinner):
        session.submit(q.query_id, 99)
    session.submit(q.query_id, q.left_id)
    with pytest.raises(StaleAnswer):
        session.submit(q.query_id, q.left_id)


def test_n4_completes_within_worst_case():
    # brute force over every permutation: top-down merge sort on 4 items
    # needs at most 5 comparisons
    import itertools

    for perm in itertools.permutations(range(4)):
        values = {item: -pos for pos, item in enumerate(perm)}
        session = run_session(list(range(4)), values, seed=0)
        assert len(session.log) <= 5
        assert ranking.worst_case_comparisons(4) == 5


def test_sorted_result_matches_oracle_order_many_sizes():
    rng = random.Random(5)
    for n in [2, 3, 5, 8, 13, 33, 64, 100, 128]:
        for seed in range(3):
            items = list(range(n))
            values = {i: rng.random() for i in items}
            session = run_session(items, values, seed=seed)
            want = sorted(items, key=lambda i: -values[i])
            assert list(session.result.order) == want
            assert len(session.log) <= n * math.ceil(math.log2(n))
            assert ranking.kendall_tau(session.result,
                                       ranking.Ranking(tuple(want))) == 1.0


def test_comparison_count_matches_reference_merge_sort():
    rng = random.Random(11)
    for n in range(2, 33):
        for seed in range(4):
            items = list(range(n))
            values = {i: rng.random() for i in items}
            session = ranking.SortSession(items, "fear", "t", seed)
            session.run_with_oracle(value_oracle(values))
            ref_sorted, ref_count = reference_merge_sort(
                session.shuffled, value_oracle(values))
            assert len(session.log) == ref_count
            assert list(session.result.order) == ref_sorted


def test_n100_worst_case_bound():
    # adversarial oracle: always prefer the right item (forces long merges)
    session = ranking.SortSession(list(range(100)), "anger", "t", 0)
    session.run_with_oracle(lambda a, b: b)
    assert len(session.log) <= 573
    assert ranking.worst_case_comparisons(100) == 573


def test_intransitive_answers_still_terminate():
    rng = random.Random(3)
    session = ranking.SortSession(list(range(40)), "anger", "t", 2)
    session.run_with_oracle(lambda a, b: a if rng.random() < 0.5 else b)
    assert session.completed
    consistency = ranking.consistency_check(session.result, session.log)
    assert -1.0 <= consistency <= 1.0


def test_session_consistency_with_own_log_is_perfect():
    rng = random.Random(8)
    values = {i: rng.random() for i in range(30)}
    session = run_session(list(range(30)), values, seed=4)
    assert ranking.consistency_check(session.result, session.log) == 1.0


def test_stability_governed_by_replay_determinism():
    values = {i: float(i % 3) for i in range(12)}  # many forced "ties"
    a = run_session(list(range(12)), values, seed=6)
    b = run_session(list(range(12)), values, seed=6)
    assert a.result.order == b.result.order


# -- persistence -----------------------------------------------------------------


def test_session_replay_roundtrip(tmp_path):
    rng = random.Random(13)
    values = {i: rng.random() for i in range(25)}
    session = ranking.SortSession(list(range(25)), "disgust", "ann", 7)
    oracle = value_oracle(values)
    for _ in range(11):
        q = session.next_query()
        session.submit(q.query_id, oracle(q.left_id, q.right_id), timestamp=1.5)
    path = tmp_path / ranking.session_filename("ann", "disgust")
    ranking.save_session(session, path)
    loaded = ranking.load_session(path)
    assert loaded.next_query() == session.next_query()
    assert loaded.log == session.log
    loaded.run_with_oracle(oracle)
    session.run_with_oracle(oracle)
    assert loaded.result.order == session.result.order

    ranking.save_session(session, path)
    complete = ranking.load_session(path)
    assert complete.completed
    assert complete.result.order == session.result.order


def test_session_load_detects_corruption(tmp_path):
    session = ranking.SortSession(list(range(5)), "fear", "x", 1)
    session.run_with_oracle(lambda a, b: min(a, b))
    path = tmp_path / "s.jsonl"
    ranking.save_session(session, path)
    lines = path.read_text().splitlines()
    swapped = lines[1].replace('"winner": ', '"winner": 404040') \
        if '"winner"' in lines[1] else lines[1]
    path.write_text("\n".join([lines[0], swapped] + lines[2:]))
    with pytest.raises(IoError):
        ranking.load_session(path)


def test_session_load_missing(tmp_path):
    with pytest.raises(IoError):
        ranking.load_session(tmp_path / "nope.jsonl")


def test_session_load_drops_torn_final_line(tmp_path):
    session = ranking.SortSession(list(range(6)), "fear", "x", 1)
    for _ in range(3):
        q = session.next_query()
        session.submit(q.query_id, q.left_id, 0.0)
    path = tmp_path / "s.jsonl"
    ranking.save_session(session, path)
    with path.open("a") as fh:
        fh.write('{"query_id": 3, "left_id": 1, "win')  # crash mid-write
    loaded = ranking.load_session(path)
    assert loaded.answered_count() == 3
    assert loaded.next_query() == session.next_query()


# -- insertion -------------------------------------------------------------------


def test_insert_strongest_goes_first():
    r = ranking.Ranking(tuple(range(10)))
    values = {i: -i for i in range(11)}  # item 10 has value -10? no: strongest
    values[10] = 1.0
    out = ranking.insert_item(r, 10, value_oracle(values))
    assert out.order[0] == 10


def test_insert_respects_log_bound():
    values = {i: float(i) for i in range(101)}
    base_order = tuple(sorted(range(100), key=lambda i: -values[i]))
    r = ranking.Ranking(base_order)
    calls = []
    oracle = value_oracle(values)

    def counting(a, b):
        calls.append((a, b))
        return oracle(a, b)

    out = ranking.insert_item(r, 100, counting)
    assert len(calls) <= math.ceil(math.log2(101)) == 7
    assert out.order[0] == 100
    assert len(out) == 101


def test_insert_into_tiny_rankings():
    values = {0: 0.1, 1: 0.9}
    out = ranking.insert_item(ranking.Ranking((0,)), 1, value_oracle(values))
    assert out.order == (1, 0)
    calls = []

    def oracle(a, b):
        calls.append(1)
        return a if values[a] > values[b] else b

    ranking.insert_item(ranking.Ranking((0,)), 1, oracle)
    assert len(calls) <= 1


def test_insert_everywhere_is_consistent():
    rng = random.Random(2)
    values = {i: rng.random() for i in range(33)}
    full = sorted(range(33), key=lambda i: -values[i])
    for item in (full[0], full[16], full[-1]):
        rest = [i for i in range(33) if i != item]
        r = ranking.Ranking(tuple(sorted(rest, key=lambda i: -values[i])))
        out = ranking.insert_item(r, item, value_oracle(values))
        assert list(out.order) == full


def test_insert_duplicate_rejected():
    r = ranking.Ranking((1, 2, 3))
    with pytest.raises(InvalidItems):
        ranking.insert_item(r, 2, lambda a, b: a)


# -- kendall tau and consistency ---------------------------------------------------


def test_kendall_identical_and_reversed():
    a = ranking.Ranking(tuple(range(17)))
    assert ranking.kendall_tau(a, a) == 1.0
    assert ranking.kendall_tau(a, ranking.Ranking(tuple(reversed(range(17))))) == -1.0


def test_kendall_single_swap_three_items():
    a = ranking.Ranking((1, 2, 3))
    b = ranking.Ranking((1, 3, 2))
    assert ranking.kendall_tau(a, b) == pytest.approx(1.0 / 3.0, abs=0)


def test_kendall_matches_bruteforce_on_random_pairs():
    rng = np.random.default_rng(17)
    for _ in range(100):
        n = int(rng.integers(2, 65))
        perm_a = tuple(int(x) for x in rng.permutation(n))
        perm_b = tuple(int(x) for x in rng.permutation(n))
        got = ranking.kendall_tau(ranking.Ranking(perm_a), ranking.Ranking(perm_b))
        assert got == brute_force_kendall(perm_a, perm_b)


def test_kendall_mismatched_items():
    with pytest.raises(IncomparableRankings):
        ranking.kendall_tau(ranking.Ranking((1, 2)), ranking.Ranking((1, 3)))


def test_consistency_values():
    r = ranking.Ranking((3, 1, 2))
    assert ranking.consistency_check(r, []) == 1.0
    log = [(3, 1, 3, 0.0), (1, 2, 2, 0.0)]  # second contradicts the ranking
    assert ranking.consistency_check(r, log) == 0.0
    log_ok = [(3, 1, 3, 0.0), (1, 2, 1, 0.0)]
    assert ranking.consistency_check(r, log_ok) == 1.0


def test_latent_oracle_and_order_agree(tiny_pool):
    emotion = face.Emotion.SADNESS
    session = ranking.SortSession(tiny_pool.ids(), emotion, "t", 3)
    session.run_with_oracle(ranking.latent_oracle(tiny_pool, emotion))
    assert session.result.order == ranking.latent_order(tiny_pool, emotion).order


def test_spearman_rho():
    assert ranking.spearman_rho([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert ranking.spearman_rho([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    rng = np.random.default_rng(0)
    x = rng.normal(size=50)
    from scipy.stats import spearmanr

    assert ranking.spearman_rho(x, x**3 + 0.1 * rng.normal(size=50)) == \
        pytest.approx(spearmanr(x, x**3 + 0.0).statistic, abs=0.2)
