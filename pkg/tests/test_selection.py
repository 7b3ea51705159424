"""Selection-battery tests.

Statistics are checked against hand-worked examples on crafted record
sets, and the rank correlation against a dense O(n^2) sign enumeration
plus scipy's asymptotic tau-b.
"""

import numpy as np
import pytest
from scipy import stats as sstats

from netsel.selection import (
    EvaluationRecord,
    SelectionError,
    cross_task,
    kendall_tau,
    match_mismatch,
    node_difficulty,
    records_from_batches,
    select_model,
    selection_stats,
    topk_intersection,
)
from netsel.tasks import PredictionBatch


def mk_key(task="CC", model="KNN", measure="INT", density="0.0025",
           locality="global", clf="linear-svm", seed=0):
    return (f"model={model}|measure={measure}|density={density}"
            f"|locality={locality}|task={task}|clf={clf}|seed={seed}")


def rec(pv, pt, **key_kw):
    return EvaluationRecord(mk_key(**key_kw), pv, pt)


def mk_batch(config_key, partition, nodes, predicted, actual, task="CC"):
    nodes = np.asarray(nodes, dtype=np.int64)
    return PredictionBatch(
        config_key=config_key,
        task=task,
        partition=partition,
        nodes=nodes,
        targets=[None] * len(nodes),
        predicted=np.asarray(predicted, dtype=np.int64),
        actual=np.asarray(actual, dtype=np.int64),
        fallback=np.zeros(len(nodes), dtype=bool),
    )


# --- records_from_batches ---------------------------------------------------


class TestRecordsFromBatches:
    def test_pairs_and_sorts_by_key(self):
        ka, kb = mk_key(seed=0), mk_key(seed=1)
        batches = [
            mk_batch(kb, "testing", [3], [1], [1]),
            mk_batch(ka, "validation", [1, 2], [1, 0], [1, 1]),
            mk_batch(ka, "testing", [1], [1], [1]),
            mk_batch(kb, "validation", [3, 4], [1, 1], [1, 1]),
        ]
        records = records_from_batches(batches)
        assert [r.config_key for r in records] == sorted([ka, kb])
        a = records[0]
        assert a.precision_validation == pytest.approx(0.5)
        assert a.precision_testing == pytest.approx(1.0)
        assert a.n_validation == 2 and a.n_testing == 1

    def test_threads_fallback_and_ensemble_flags(self):
        k = mk_key()
        val = mk_batch(k, "validation", [1, 2], [1, 1], [1, 1])
        val.fallback[0] = True
        test = mk_batch(k, "testing", [3], [1], [1])
        test = PredictionBatch(
            config_key=k, task="CC", partition="testing",
            nodes=test.nodes, targets=test.targets,
            predicted=test.predicted, actual=test.actual,
            fallback=test.fallback, ensemble_fallback=True)
        (r,) = records_from_batches([val, test])
        assert r.fallback_validation == 1
        assert r.fallback_testing == 0
        assert r.ensemble_fallback is True

    def test_duplicate_partition_rejected(self):
        k = mk_key()
        batches = [
            mk_batch(k, "validation", [1], [1], [1]),
            mk_batch(k, "validation", [2], [1], [1]),
        ]
        with pytest.raises(SelectionError):
            records_from_batches(batches)

    def test_missing_partition_rejected(self):
        with pytest.raises(SelectionError):
            records_from_batches([mk_batch(mk_key(), "validation",
                                           [1], [1], [1])])

    def test_fields_round_trip(self):
        f = rec(0.5, 0.5, model="TH", locality="ensemble:degree:5",
                clf="random-forest", seed=9).fields()
        assert f["model"] == "TH"
        assert f["locality"] == "ensemble:degree:5"
        assert f["clf"] == "random-forest"
        assert f["seed"] == "9"


# --- select_model -------------------------------------------------------------


class TestSelectModel:
    def test_picks_best_validation(self):
        records = [rec(0.3, 0.1, seed=0), rec(0.8, 0.2, seed=1),
                   rec(0.5, 0.9, seed=2)]
        assert select_model(records) == mk_key(seed=1)

    def test_tie_goes_to_smaller_key(self):
        records = [rec(0.8, 0.0, seed=3), rec(0.8, 0.0, seed=1)]
        assert select_model(records) == min(mk_key(seed=3), mk_key(seed=1))

    def test_empty_rejected(self):
        with pytest.raises(SelectionError):
            select_model([])


# --- kendall_tau --------------------------------------------------------------


def _dense_tau(x, y):
    """Naive tau-b by enumerating all pairs."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n = len(x)
    iu = np.triu_indices(n, 1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    num = float((dx * dy).sum())
    n0 = n * (n - 1) // 2
    tx = int((dx == 0).sum())
    ty = int((dy == 0).sum())
    denom = np.sqrt(float(n0 - tx) * float(n0 - ty))
    if denom == 0:
        return 0.0
    return num / denom


class TestKendallTau:
    def test_one_swap_example(self):
        tau, _ = kendall_tau([1, 2, 3, 4], [1, 3, 2, 4])
        assert tau == pytest.approx(2 / 3)

    def test_identical_orders(self):
        tau, p = kendall_tau([1, 2, 3, 4, 5], [10, 20, 30, 40, 50])
        assert tau == pytest.approx(1.0)
        assert p < 0.05

    def test_reversed_orders(self):
        tau, _ = kendall_tau([1, 2, 3, 4, 5], [5, 4, 3, 2, 1])
        assert tau == pytest.approx(-1.0)

    def test_constant_input_degenerate(self):
        assert kendall_tau([1, 1, 1], [1, 2, 3]) == (0.0, 1.0)
        assert kendall_tau([0, 1], [5, 5]) == (0.0, 1.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(SelectionError):
            kendall_tau([1, 2], [1, 2, 3])

    def test_too_short_rejected(self):
        with pytest.raises(SelectionError):
            kendall_tau([1], [1])

    def test_matches_dense_enumeration(self):
        rng = np.random.default_rng(11)
        for trial in range(100):
            n = int(rng.integers(2, 50))
            if trial % 2 == 0:
                x = rng.integers(0, 6, n).astype(float)
                y = rng.integers(0, 6, n).astype(float)
            else:
                x = rng.normal(size=n)
                y = x + rng.normal(size=n)
            tau, p = kendall_tau(x, y)
            assert tau == pytest.approx(_dense_tau(x, y), abs=1e-12)
            assert 0.0 <= p <= 1.0

    def test_matches_scipy_asymptotic(self):
        rng = np.random.default_rng(12)
        for _ in range(60):
            n = int(rng.integers(3, 50))
            x = rng.integers(0, 5, n).astype(float)
            y = rng.integers(0, 5, n).astype(float)
            tau, p = kendall_tau(x, y)
            ref = sstats.kendalltau(x, y, method="asymptotic")
            if np.isnan(ref.statistic):
                assert (tau, p) == (0.0, 1.0)
                continue
            assert tau == pytest.approx(ref.statistic, abs=1e-12)
            assert p == pytest.approx(ref.pvalue, abs=1e-12)


# --- topk_intersection ----------------------------------------------------------


class TestTopkIntersection:
    def test_identical_orderings_share_everything(self):
        records = [rec(v, v, seed=i)
                   for i, v in enumerate([0.9, 0.7, 0.5, 0.3])]
        assert topk_intersection(records, k=2) == 2
        assert topk_intersection(records, k=10) == 4

    def test_disjoint_tops(self):
        records = [
            rec(0.9, 0.1, seed=0),
            rec(0.8, 0.2, seed=1),
            rec(0.2, 0.8, seed=2),
            rec(0.1, 0.9, seed=3),
        ]
        assert topk_intersection(records, k=2) == 0


# --- selection_stats ------------------------------------------------------------


def _example_records():
    # validation picks the config with the second-best testing precision
    return [
        rec(0.5, 0.9, seed=0),
        rec(0.9, 0.8, seed=1),
        rec(0.4, 0.7, seed=2),
        rec(0.3, 0.1, seed=3),
    ]


class TestSelectionStats:
    def test_worked_example(self):
        stats = selection_stats(_example_records())
        assert stats.n_configs == 4
        assert stats.mu == pytest.approx(0.625)
        assert stats.mu_top10 == pytest.approx(0.625)  # k_eff covers all
        assert stats.delta_mu == pytest.approx(-0.1)
        assert stats.p1 == pytest.approx(0.9)
        assert stats.selected_key == mk_key(seed=1)
        assert stats.selected_testing == pytest.approx(0.8)
        assert stats.delta_p1 == pytest.approx(-0.1)
        assert stats.rank == pytest.approx(2 / 3)
        assert stats.k_eff == 4
        assert stats.intersection10 == 4
        # 5 concordant pairs, 1 discordant
        assert stats.tau == pytest.approx(2 / 3)
        assert stats.tau10 == pytest.approx(2 / 3)

    def test_worked_example_flags(self):
        stats = selection_stats(_example_records())
        # spread = 0.275, |delta_p1| = 0.1 > 0.0275
        assert stats.flag_delta_p1 is False
        assert stats.flag_rank is False
        assert stats.flag_intersection is True  # 2*4 >= 4
        assert stats.flag_tau is False

    def test_perfect_agreement(self):
        records = [rec(v, v, seed=i)
                   for i, v in enumerate([0.1, 0.4, 0.7, 0.9])]
        stats = selection_stats(records)
        assert stats.delta_p1 == 0.0
        assert stats.rank == 1.0
        assert stats.tau == pytest.approx(1.0)
        assert stats.flag_delta_p1 is True
        assert stats.flag_rank is True

    def test_worst_selection_gets_rank_zero(self):
        records = [
            rec(0.9, 0.0, seed=0),
            rec(0.1, 0.5, seed=1),
            rec(0.2, 0.7, seed=2),
        ]
        stats = selection_stats(records)
        assert stats.rank == 0.0
        assert stats.delta_p1 == pytest.approx(-0.7)

    def test_single_record_rejected(self):
        with pytest.raises(SelectionError):
            selection_stats([rec(0.5, 0.5)])

    def test_invariants_on_random_sets(self):
        rng = np.random.default_rng(21)
        grid = np.linspace(0.0, 1.0, 21)
        for _ in range(20):
            n = int(rng.integers(2, 40))
            records = [rec(float(rng.choice(grid)), float(rng.choice(grid)),
                           seed=i) for i in range(n)]
            stats = selection_stats(records)
            assert stats.delta_p1 <= 1e-12
            assert 0.0 <= stats.rank <= 1.0
            assert stats.mu_top10 >= stats.mu - 1e-12
            assert stats.p1 >= stats.mu - 1e-12
            assert stats.p1 >= stats.selected_testing - 1e-12
            assert 0 <= stats.intersection10 <= stats.k_eff


# --- match_mismatch -------------------------------------------------------------


class TestMatchMismatch:
    def test_grouped_gap_example(self):
        records = [
            rec(0.5, 0.9, locality="global", seed=0),
            rec(0.5, 0.9, locality="global", seed=1),
            rec(0.5, 0.1, locality="local-adjacency", seed=2),
            rec(0.5, 0.1, locality="local-adjacency", seed=3),
        ]
        # matched gaps are 0; all four cross gaps are 0.8
        assert match_mismatch(records) == pytest.approx(-0.8)

    def test_group_by_other_field(self):
        records = [
            rec(0.5, 0.6, model="KNN", seed=0),
            rec(0.5, 0.6, model="KNN", seed=1),
            rec(0.5, 0.6, model="TH", seed=2),
            rec(0.5, 0.6, model="TH", seed=3),
        ]
        assert match_mismatch(records, group_by="model") == 0.0

    def test_single_group_rejected(self):
        records = [rec(0.5, 0.5, seed=0), rec(0.5, 0.5, seed=1)]
        with pytest.raises(SelectionError):
            match_mismatch(records)

    def test_singleton_groups_rejected(self):
        # one record per group leaves no matched pair
        records = [rec(0.5, 0.5, locality="global", seed=0),
                   rec(0.5, 0.5, locality="local-adjacency", seed=1)]
        with pytest.raises(SelectionError):
            match_mismatch(records)


# --- cross_task -----------------------------------------------------------------


def _twin(task, model, locality, pv, pt, clf="linear-svm"):
    return rec(pv, pt, task=task, model=model, locality=locality, clf=clf)


class TestCrossTask:
    def test_cell_layout(self):
        cc = [_twin("CC", "KNN", "global", 0.9, 0.9)]
        lp = [_twin("LP", "KNN", "global", 0.9, 0.9)]
        table = cross_task(cc, lp)
        assert [(c.selector, c.evaluator) for c in table] == [
            ("CC", "CC"), ("CC", "LP"),
            ("LP", "CC"), ("LP", "LP"),
            ("AVG", "CC"), ("AVG", "LP"),
        ]
        assert all(not c.missing for c in table)
        assert all(c.delta_p1 == 0.0 for c in table)
        assert all(c.rank == 1.0 for c in table)

    def test_aligned_tasks_agree_everywhere(self):
        nets = [("KNN", "global", 0.9), ("TH", "local-adjacency", 0.5)]
        cc = [_twin("CC", m, l, p, p) for m, l, p in nets]
        lp = [_twin("LP", m, l, p, p) for m, l, p in nets]
        for cell in cross_task(cc, lp):
            assert cell.delta_p1 == 0.0
            assert cell.rank == 1.0

    def test_divergent_tasks_worked_example(self):
        # X is the CC winner and the LP loser; Y the reverse
        cc = [_twin("CC", "KNN", "global", 0.9, 0.9),
              _twin("CC", "TH", "local-adjacency", 0.2, 0.2)]
        lp = [_twin("LP", "KNN", "global", 0.1, 0.1),
              _twin("LP", "TH", "local-adjacency", 0.8, 0.8)]
        cells = {(c.selector, c.evaluator): c for c in cross_task(cc, lp)}
        assert cells[("CC", "CC")].delta_p1 == 0.0
        assert cells[("LP", "LP")].delta_p1 == 0.0
        assert cells[("CC", "LP")].delta_p1 == pytest.approx(-0.7)
        assert cells[("CC", "LP")].rank == 0.0
        assert cells[("LP", "CC")].delta_p1 == pytest.approx(-0.7)
        # mean validation ties at 0.5; the lexicographically smaller
        # CC key (KNN < TH) wins, so AVG tracks the CC winner
        assert cells[("AVG", "CC")].delta_p1 == 0.0
        assert cells[("AVG", "LP")].delta_p1 == pytest.approx(-0.7)

    def test_unmappable_network_is_missing(self):
        cc = [_twin("CC", "KNN", "global", 0.9, 0.9)]
        lp = [_twin("LP", "TH", "local-adjacency", 0.8, 0.8)]
        cells = {(c.selector, c.evaluator): c for c in cross_task(cc, lp)}
        assert cells[("CC", "LP")].missing is True
        assert cells[("CC", "LP")].evaluated_key is None
        assert cells[("CC", "LP")].delta_p1 is None
        assert cells[("LP", "CC")].missing is True
        # no shared network, so no AVG row
        assert ("AVG", "CC") not in cells

    def test_classifier_mapping_prefers_exact_match(self):
        cc = [_twin("CC", "KNN", "global", 0.9, 0.9, clf="random-forest")]
        lp = [
            _twin("LP", "KNN", "global", 0.8, 0.8, clf="linear-svm"),
            _twin("LP", "KNN", "global", 0.1, 0.1, clf="random-forest"),
        ]
        cells = {(c.selector, c.evaluator): c for c in cross_task(cc, lp)}
        assert cells[("CC", "LP")].evaluated_key == \
            mk_key(task="LP", clf="random-forest")

    def test_classifier_mapping_falls_back_to_best_validation(self):
        cc = [_twin("CC", "KNN", "global", 0.9, 0.9, clf="random-forest")]
        lp = [
            rec(0.3, 0.3, task="LP", clf="linear-svm", seed=0),
            rec(0.6, 0.6, task="LP", clf="linear-svm", seed=1),
        ]
        cells = {(c.selector, c.evaluator): c for c in cross_task(cc, lp)}
        assert cells[("CC", "LP")].evaluated_key == \
            mk_key(task="LP", clf="linear-svm", seed=1)

    def test_avg_matches_exhaustive_scan(self):
        rng = np.random.default_rng(31)
        models = ["KNN", "TH"]
        locs = ["global", "local-adjacency", "community"]
        clfs = ["linear-svm", "random-forest"]
        cc, lp = [], []
        for m in models:
            for l in locs:
                for c in clfs:
                    cc.append(_twin("CC", m, l,
                                    float(rng.random()),
                                    float(rng.random()), clf=c))
                    lp.append(_twin("LP", m, l,
                                    float(rng.random()),
                                    float(rng.random()), clf=c))
        cells = {(c.selector, c.evaluator): c for c in cross_task(cc, lp)}

        def net(r):
            f = r.fields()
            return (f["model"], f["measure"], f["density"],
                    f["locality"], f["clf"])

        lp_by_net = {net(r): r for r in lp}
        paired = [(0.5 * (r.precision_validation
                          + lp_by_net[net(r)].precision_validation),
                   r.config_key, r, lp_by_net[net(r)]) for r in cc]
        paired.sort(key=lambda t: (-t[0], t[1]))
        _, _, best_cc, best_lp = paired[0]
        assert cells[("AVG", "CC")].selected_key == best_cc.config_key
        assert cells[("AVG", "LP")].selected_key == best_lp.config_key
        by_t = sorted(cc, key=lambda r: (-r.precision_testing,
                                         r.config_key))
        pos = next(i for i, r in enumerate(by_t)
                   if r.config_key == best_cc.config_key)
        want_delta = by_t[pos].precision_testing \
            - by_t[0].precision_testing
        assert cells[("AVG", "CC")].delta_p1 == pytest.approx(want_delta)
        assert cells[("AVG", "CC")].rank == \
            pytest.approx(1.0 - pos / (len(cc) - 1))

    def test_empty_side_rejected(self):
        with pytest.raises(SelectionError):
            cross_task([], [rec(0.5, 0.5, task="LP")])
        with pytest.raises(SelectionError):
            cross_task([rec(0.5, 0.5)], [])


# --- node_difficulty -------------------------------------------------------------


class TestNodeDifficulty:
    def test_worked_example(self):
        k = mk_key()
        batches = [
            mk_batch(k, "validation", [7, 8], [1, 1], [1, 1]),
            mk_batch(k, "testing", [7, 8], [1, 0], [0, 0]),
        ]
        rows = node_difficulty(batches)
        assert [(r.node, r.n_records, r.precision) for r in rows] == [
            (7, 2, 0.5),   # right on validation, wrong on testing
            (8, 2, 1.0),   # 0 predicted, 0 actual counts as correct
        ]
        assert rows[0].task == "CC"
        assert rows[0].classifier == "linear-svm"

    def test_union_of_validation_and_testing_tops(self):
        # a wins on validation, b on testing, c on neither; with top=1
        # the union keeps a and b and drops c
        ka, kb, kc = mk_key(seed=0), mk_key(seed=1), mk_key(seed=2)
        batches = [
            mk_batch(ka, "validation", [0, 0], [1, 1], [1, 1]),
            mk_batch(ka, "testing", [0, 0], [1, 0], [1, 1]),
            mk_batch(kb, "validation", [0] * 4, [1, 0, 0, 0], [1] * 4),
            mk_batch(kb, "testing", [0] * 4, [1, 1, 1, 1], [1] * 4),
            mk_batch(kc, "validation", [0] * 8, [0] * 8, [1] * 8),
            mk_batch(kc, "testing", [0] * 8, [0] * 8, [1] * 8),
        ]
        (row,) = node_difficulty(batches, top=1)
        assert row.node == 0
        assert row.n_records == 12
        assert row.precision == pytest.approx(8 / 12)

    def test_cells_grouped_by_task_and_classifier(self):
        k1 = mk_key(seed=0)
        k2 = mk_key(clf="random-forest", seed=0)
        batches = [
            mk_batch(k1, "validation", [1], [1], [1]),
            mk_batch(k1, "testing", [1], [1], [1]),
            mk_batch(k2, "validation", [3], [1], [0]),
            mk_batch(k2, "testing", [3], [1], [0]),
        ]
        rows = node_difficulty(batches)
        assert [(r.task, r.classifier, r.node, r.precision)
                for r in rows] == [
            ("CC", "linear-svm", 1, 1.0),
            ("CC", "random-forest", 3, 0.0),
        ]
