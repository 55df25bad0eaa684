"""Pair-level evaluation of linkage results against simulator ground truth.

A predicted pair counts as correct iff the two sub-trajectories really are
consecutive observations of the same person. Terminals are excluded from
both sides. AUC of the P1 score over labeled pairs follows the rank-sum
formulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .matching import MatchResult
from .tracker import SubTrajectory


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f_measure: float
    n_pred: int = 0
    n_truth: int = 0
    n_correct: int = 0
    label: str = ""

    def __str__(self) -> str:
        tag = f"{self.label}: " if self.label else ""
        return (
            f"{tag}P={self.precision:.3f} R={self.recall:.3f} F={self.f_measure:.3f} "
            f"({self.n_correct}/{self.n_pred} predicted, {self.n_truth} true)"
        )


def f_measure(precision: float, recall: float) -> float:
    return 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def _as_pair_set(pred) -> set:
    if isinstance(pred, MatchResult):
        return {(u, v) for u, v, _ in pred.pairs}
    out = set()
    for item in pred:
        if isinstance(item, MatchResult):
            out |= {(u, v) for u, v, _ in item.pairs}
        else:
            u, v = item[0], item[1]
            out.add((u, v))
    return out


def evaluate(pred, truth_pairs, known_ids=None, label: str = "") -> EvalReport:
    """Precision/recall/F over predicted vs true consecutive pairs."""
    p = _as_pair_set(pred)
    t = {(u, v) for u, v in truth_pairs}
    if known_ids is not None:
        known = set(known_ids)
        stray = {x for pair in p | t for x in pair} - known
        if stray:
            raise ValueError(f"unknown sub-trajectory ids: {sorted(stray)[:5]}")
    correct = len(p & t)
    precision = correct / len(p) if p else 0.0
    recall = correct / len(t) if t else 0.0
    return EvalReport(
        precision=precision,
        recall=recall,
        f_measure=f_measure(precision, recall),
        n_pred=len(p),
        n_truth=len(t),
        n_correct=correct,
        label=label,
    )


def label_subtrajectories(trs, positions, max_dist: float = 0.75) -> dict:
    """Assign each sub-trajectory the person whose true track it follows.

    positions: person_id -> (T, 3) array of (t, x, y). Returns id -> person_id
    (or None when nothing plausible overlaps in time and space).
    """
    out = {}
    for tr in trs:
        ts = tr.samples[:, 0]
        best = (np.inf, None)
        for pid, track in positions.items():
            t0, t1 = track[0, 0], track[-1, 0]
            m = (ts >= t0) & (ts <= t1)
            if m.sum() < 2:
                continue
            x = np.interp(ts[m], track[:, 0], track[:, 1])
            y = np.interp(ts[m], track[:, 0], track[:, 2])
            d = float(np.mean(np.hypot(x - tr.samples[m, 1], y - tr.samples[m, 2])))
            if d < best[0]:
                best = (d, pid)
        out[tr.id] = best[1] if best[0] <= max_dist else None
    return out


def truth_pairs(trs, labels) -> set:
    """Consecutive same-person sub-trajectory pairs, the matcher's target."""
    by_person: dict = {}
    for tr in trs:
        pid = labels.get(tr.id)
        if pid is not None:
            by_person.setdefault(pid, []).append(tr)
    pairs = set()
    for seq in by_person.values():
        seq.sort(key=lambda tr: (tr.t_start, tr.t_end))
        for a, b in zip(seq[:-1], seq[1:]):
            pairs.add((a.id, b.id))
    return pairs


def auc_score(positive_scores, negative_scores) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic."""
    pos = np.asarray(list(positive_scores), dtype=np.float64)
    neg = np.asarray(list(negative_scores), dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need both positive and negative scores")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def affinity_split(result: MatchResult, truth) -> tuple[list, list]:
    """Affinities of correctly vs wrongly matched pairs (histogram input)."""
    t = set(map(tuple, truth))
    correct = [w for u, v, w in result.pairs if (u, v) in t]
    wrong = [w for u, v, w in result.pairs if (u, v) not in t]
    return correct, wrong
