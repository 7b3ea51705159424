"""Model-selection statistics over per-configuration precision.

Selection always happens on validation precision; every stability and
consistency statistic compares the validation ordering against the testing
ordering. All functions are pure and deterministic: ties resolve by
lexicographic config key, so reports are byte-identical across reruns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tasks import PredictionBatch, config_key_fields


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class EvaluationRecord:
    """Validation and testing precision for one configuration."""

    config_key: str
    precision_validation: float
    precision_testing: float
    n_validation: int = 0
    n_testing: int = 0
    fallback_validation: int = 0
    fallback_testing: int = 0
    degenerate_validation: bool = False
    degenerate_testing: bool = False
    ensemble_fallback: bool = False

    def fields(self) -> dict:
        return config_key_fields(self.config_key)


def records_from_batches(batches) -> list[EvaluationRecord]:
    """Pair each config's validation and testing batches into records,
    sorted by config key."""
    by_key: dict[str, dict] = {}
    for b in batches:
        slot = by_key.setdefault(b.config_key, {})
        if b.partition in slot:
            raise SelectionError(
                f"duplicate batch for {b.config_key} / {b.partition}")
        slot[b.partition] = b
    records = []
    for key in sorted(by_key):
        slot = by_key[key]
        if set(slot) != {"validation", "testing"}:
            raise SelectionError(
                f"config {key} is missing a partition batch")
        v, t = slot["validation"], slot["testing"]
        records.append(EvaluationRecord(
            config_key=key,
            precision_validation=v.precision,
            precision_testing=t.precision,
            n_validation=v.n_records,
            n_testing=t.n_records,
            fallback_validation=v.n_fallback,
            fallback_testing=t.n_fallback,
            degenerate_validation=v.degenerate,
            degenerate_testing=t.degenerate,
            ensemble_fallback=v.ensemble_fallback or t.ensemble_fallback,
        ))
    return records


def _by_validation(records) -> list[EvaluationRecord]:
    return sorted(records,
                  key=lambda r: (-r.precision_validation, r.config_key))


def _by_testing(records) -> list[EvaluationRecord]:
    return sorted(records,
                  key=lambda r: (-r.precision_testing, r.config_key))


def select_model(records) -> str:
    """Config with the best validation precision; ties go to the smaller
    key."""
    records = list(records)
    if not records:
        raise SelectionError("no records to select from")
    return _by_validation(records)[0].config_key


# --- rank correlation ---------------------------------------------------------

def _merge_count(y: np.ndarray) -> int:
    """Number of strict inversions (i < j with y[i] > y[j]) by merge
    sort."""
    a = list(y)
    tmp = [0.0] * len(a)

    def rec(lo: int, hi: int) -> int:
        if hi - lo <= 1:
            return 0
        mid = (lo + hi) // 2
        count = rec(lo, mid) + rec(mid, hi)
        i, j, k = lo, mid, lo
        while i < mid and j < hi:
            if a[j] < a[i]:
                count += mid - i
                tmp[k] = a[j]
                j += 1
            else:
                tmp[k] = a[i]
                i += 1
            k += 1
        tmp[k:hi] = a[i:mid] + a[j:hi]
        a[lo:hi] = tmp[lo:hi]
        return count

    return rec(0, len(a))


def _tie_stats(v: np.ndarray) -> tuple[int, int, int, int]:
    """(sum t(t-1)/2, sum t(t-1)(t-2), sum t(t-1)(2t+5), sum t(t-1)) over
    tie groups."""
    _, counts = np.unique(v, return_counts=True)
    t = counts[counts > 1].astype(np.int64)
    pairs = int((t * (t - 1) // 2).sum())
    trip = int((t * (t - 1) * (t - 2)).sum())
    var_t = int((t * (t - 1) * (2 * t + 5)).sum())
    lin = int((t * (t - 1)).sum())
    return pairs, trip, var_t, lin


def kendall_tau(x, y) -> tuple[float, float]:
    """Tie-corrected rank correlation (tau-b) with a normal-approximation
    two-sided p-value.

    A constant input makes the coefficient undefined; (0, 1) is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise SelectionError("inputs must have equal length")
    n = len(x)
    if n < 2:
        raise SelectionError("need at least two observations")
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    dis = _merge_count(ys)
    n0 = n * (n - 1) // 2
    xtie, xtrip, xvar, xlin = _tie_stats(x)
    ytie, ytrip, yvar, ylin = _tie_stats(y)
    both = np.column_stack([xs, ys])
    _, joint_counts = np.unique(both, axis=0, return_counts=True)
    jt = joint_counts[joint_counts > 1].astype(np.int64)
    xytie = int((jt * (jt - 1) // 2).sum())
    con_minus_dis = n0 - xtie - ytie + xytie - 2 * dis
    denom = math.sqrt(float(n0 - xtie) * float(n0 - ytie))
    if denom == 0:
        return 0.0, 1.0
    tau = con_minus_dis / denom
    # variance of (C - D) under independence, with tie correction
    v0 = n * (n - 1) * (2 * n + 5)
    var = (v0 - xvar - yvar) / 18.0
    var += xlin * ylin / (2.0 * n * (n - 1))
    if n > 2:
        var += xtrip * ytrip / (9.0 * n * (n - 1) * (n - 2))
    if var <= 0:
        return float(tau), 1.0
    z = con_minus_dis / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return float(tau), float(p)


# --- the selection battery ----------------------------------------------------

@dataclass(frozen=True)
class SelectionReport:
    n_configs: int
    mu: float
    mu_top10: float
    delta_mu: float
    p1: float
    selected_key: str
    selected_testing: float
    delta_p1: float
    rank: float
    tau: float
    tau_p: float
    tau10: float
    tau10_p: float
    intersection10: int
    k_eff: int
    flag_delta_p1: bool
    flag_rank: bool
    flag_intersection: bool
    flag_tau: bool


def topk_intersection(records, k: int = 10) -> int:
    """Configs shared by the validation top-k and testing top-k; with
    fewer than k records the whole list is used."""
    records = list(records)
    k_eff = min(k, len(records))
    top_v = {r.config_key for r in _by_validation(records)[:k_eff]}
    top_t = {r.config_key for r in _by_testing(records)[:k_eff]}
    return len(top_v & top_t)


def selection_stats(records, k: int = 10,
                    tau_p_bold: float = 1e-3) -> SelectionReport:
    """The full per-cell statistics battery.

    The two headline flags follow the magnitude reading of the stability
    rule (|Δp(1)| within a tenth of the spread between the best and the
    mean testing precision) and the normalized-rank threshold 0.9. The
    intersection flag asks for at least half the list to be shared (5 of
    10 at the default k).
    """
    records = list(records)
    if len(records) < 2:
        raise SelectionError("need at least two configs for rank "
                             "normalization")
    n = len(records)
    test = np.array([r.precision_testing for r in records])
    val = np.array([r.precision_validation for r in records])
    mu = float(test.mean())
    by_t = _by_testing(records)
    k_eff = min(k, n)
    mu_top10 = float(np.mean([r.precision_testing for r in by_t[:k_eff]]))
    delta_mu = float((val - test).mean())
    p1 = float(by_t[0].precision_testing)
    selected_key = select_model(records)
    position = next(i for i, r in enumerate(by_t)
                    if r.config_key == selected_key)
    selected = by_t[position]
    delta_p1 = float(selected.precision_testing - p1)
    rank = 1.0 - position / (n - 1)
    tau, tau_p = kendall_tau(val, test)
    by_v = _by_validation(records)[:k_eff]
    tau10, tau10_p = kendall_tau(
        [r.precision_validation for r in by_v],
        [r.precision_testing for r in by_v],
    )
    inter = topk_intersection(records, k)
    spread = p1 - mu
    return SelectionReport(
        n_configs=n,
        mu=mu,
        mu_top10=mu_top10,
        delta_mu=delta_mu,
        p1=p1,
        selected_key=selected_key,
        selected_testing=float(selected.precision_testing),
        delta_p1=delta_p1,
        rank=float(rank),
        tau=tau,
        tau_p=tau_p,
        tau10=tau10,
        tau10_p=tau10_p,
        intersection10=inter,
        k_eff=k_eff,
        flag_delta_p1=bool(abs(delta_p1) <= 0.1 * spread),
        flag_rank=bool(rank >= 0.9),
        flag_intersection=bool(2 * inter >= k_eff),
        flag_tau=bool(tau_p < tau_p_bold),
    )


def match_mismatch(records, group_by: str = "locality") -> float:
    """Median absolute testing-precision gap between same-group config
    pairs minus the median gap between cross-group pairs.

    Negative values mean configurations that differ in the grouped field
    also differ more in testing precision.
    """
    records = list(records)
    groups = [r.fields().get(group_by) for r in records]
    if len(set(groups)) < 2:
        raise SelectionError(
            f"need at least two distinct '{group_by}' groups")
    test = [r.precision_testing for r in records]
    matched = []
    mismatched = []
    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            gap = abs(test[i] - test[j])
            if groups[i] == groups[j]:
                matched.append(gap)
            else:
                mismatched.append(gap)
    if not matched or not mismatched:
        raise SelectionError("a pair class is empty; cannot compare "
                             "matched and mismatched gaps")
    return float(np.median(matched) - np.median(mismatched))


# --- cross-task selection ------------------------------------------------------

@dataclass(frozen=True)
class CrossTaskCell:
    selector: str
    evaluator: str
    selected_key: str
    evaluated_key: str | None
    delta_p1: float | None
    rank: float | None
    missing: bool = False


def _map_config(key: str, records_eval, task: str) -> str | None:
    """Rewrite a config key onto the evaluation task; exact match on the
    network and locality fields (and classifier when present), best
    validation precision otherwise."""
    want = config_key_fields(key)
    want["task"] = task
    exact = None
    partial = []
    for r in records_eval:
        have = r.fields()
        same_net = all(have.get(f) == want.get(f) for f in
                       ("model", "measure", "density", "locality"))
        if not same_net:
            continue
        if have.get("clf") == want.get("clf"):
            exact = r.config_key
            break
        partial.append(r)
    if exact is not None:
        return exact
    if partial:
        return _by_validation(partial)[0].config_key
    return None


def _eval_cell(selector: str, evaluator: str, selected_key: str,
               records_eval) -> CrossTaskCell:
    records_eval = list(records_eval)
    if selector == evaluator:
        mapped = selected_key
    else:
        mapped = _map_config(selected_key, records_eval, evaluator)
    if mapped is None:
        return CrossTaskCell(selector, evaluator, selected_key, None,
                             None, None, missing=True)
    by_t = _by_testing(records_eval)
    p1 = by_t[0].precision_testing
    position = next(i for i, r in enumerate(by_t)
                    if r.config_key == mapped)
    delta = by_t[position].precision_testing - p1
    rank = 1.0 - position / (len(records_eval) - 1) \
        if len(records_eval) > 1 else 1.0
    return CrossTaskCell(selector, evaluator, selected_key, mapped,
                         float(delta), float(rank))


def cross_task(records_cc, records_lp) -> list[CrossTaskCell]:
    """Select under each task (and under their average) and score the
    selected network under both tasks."""
    records_cc = list(records_cc)
    records_lp = list(records_lp)
    if not records_cc or not records_lp:
        raise SelectionError("both task record sets must be non-empty")
    table = []
    for selector, recs in (("CC", records_cc), ("LP", records_lp)):
        chosen = select_model(recs)
        table.append(_eval_cell(selector, "CC", chosen, records_cc))
        table.append(_eval_cell(selector, "LP", chosen, records_lp))

    # average-precision row: join the two tasks on the shared network and
    # locality fields, select on the mean validation precision
    lp_by_net: dict[tuple, EvaluationRecord] = {}
    for r in records_lp:
        f = r.fields()
        net = (f.get("model"), f.get("measure"), f.get("density"),
               f.get("locality"), f.get("clf"))
        if net not in lp_by_net:
            lp_by_net[net] = r
    paired = []
    for r in records_cc:
        f = r.fields()
        net = (f.get("model"), f.get("measure"), f.get("density"),
               f.get("locality"), f.get("clf"))
        mate = lp_by_net.get(net)
        if mate is not None:
            mean_val = 0.5 * (r.precision_validation
                              + mate.precision_validation)
            paired.append((mean_val, r.config_key, r, mate))
    if paired:
        paired.sort(key=lambda t: (-t[0], t[1]))
        _, _, best_cc, best_lp = paired[0]
        table.append(_eval_cell("AVG", "CC", best_cc.config_key,
                                records_cc))
        table.append(_eval_cell("AVG", "LP", best_lp.config_key,
                                records_lp))
    return table


# --- per-node difficulty --------------------------------------------------------

@dataclass(frozen=True)
class NodeDifficultyRow:
    task: str
    classifier: str
    node: int
    n_records: int
    precision: float


def node_difficulty(batches, top: int = 5) -> list[NodeDifficultyRow]:
    """Per-node precision over the union of the top validation-ranked and
    top testing-ranked configs, grouped by (task, classifier)."""
    batches = list(batches)
    records = records_from_batches(batches)
    by_key: dict[str, list[PredictionBatch]] = {}
    for b in batches:
        by_key.setdefault(b.config_key, []).append(b)
    cells: dict[tuple[str, str], list[EvaluationRecord]] = {}
    for r in records:
        f = r.fields()
        cells.setdefault((f.get("task", "?"), f.get("clf", "?")),
                         []).append(r)
    rows: list[NodeDifficultyRow] = []
    for (task, clf) in sorted(cells):
        recs = cells[(task, clf)]
        chosen = {r.config_key for r in _by_validation(recs)[:top]}
        chosen |= {r.config_key for r in _by_testing(recs)[:top]}
        correct: dict[int, int] = {}
        total: dict[int, int] = {}
        for key in sorted(chosen):
            for b in by_key[key]:
                for idx in range(b.n_records):
                    node = int(b.nodes[idx])
                    ok = int(b.predicted[idx]) == int(b.actual[idx])
                    correct[node] = correct.get(node, 0) + int(ok)
                    total[node] = total.get(node, 0) + 1
        for node in sorted(total):
            rows.append(NodeDifficultyRow(
                task=task,
                classifier=clf,
                node=node,
                n_records=total[node],
                precision=correct[node] / total[node],
            ))
    return rows
