"""Per-recipient send-time bin ranking and its evaluation reports.

A fitted model scores a hypothetical next message once per candidate
bin; sorting those hazard ratios gives the recipient's bin ranking.
Evaluation holds out each recipient's later messages and compares open
rates between the model's top-k bins and k uniformly sampled bins, plus
a decile table over the ranked bins.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .event_log import RecipientHistory
from .features import FeatureExtractor, average_features
from .rnn import RnnSurvival
from .virtual_time import bin_of, one_hot


@dataclass(frozen=True)
class BinRanking:
    """All bins exactly once, best predicted hazard ratio first."""

    recipient_id: str
    bins: np.ndarray  # bin indices, descending phi, ties by ascending bin
    phi: np.ndarray   # aligned with bins

    def __post_init__(self):
        if sorted(self.bins.tolist()) != list(range(self.bins.size)):
            raise ValueError("ranking must be a permutation of all bins")
        if np.any(self.phi <= 0):
            raise ValueError("hazard ratios must be positive")

    def top(self, k: int) -> set[int]:
        return set(self.bins[:k].tolist())

    def rank_of(self, bin_index: int) -> int:
        """1-based rank of a bin."""
        return int(np.nonzero(self.bins == bin_index)[0][0]) + 1


def rank_bins(model, history: RecipientHistory,
              extractor: FeatureExtractor) -> BinRanking:
    """Score all candidate bins for the recipient's next message."""
    n_bins = extractor.scheme.bin_count
    if isinstance(model, RnnSurvival):
        phi = model.score_next(history, extractor)
    else:
        obs = extractor.extract(history)
        # averaged history block is shared; only the appended one-hot varies
        rows = np.stack([average_features(obs, b, n_bins) for b in range(n_bins)])
        phi = np.asarray(model.ranking_scores(rows), dtype=np.float64)
    order = np.lexsort((np.arange(n_bins), -phi))
    return BinRanking(recipient_id=history.recipient_id,
                      bins=order.astype(np.int64), phi=phi[order])


def _opened_within(msg, window_hours: float) -> bool:
    if msg.open_time is None:
        return False
    return (msg.open_time - msg.send_time) <= window_hours * 3600


@dataclass
class TopKReport:
    k: int
    seed: int
    topk_sends: int = 0
    topk_opens: int = 0
    uniform_sends: int = 0
    uniform_opens: int = 0
    uniform_excl_sends: int = 0
    uniform_excl_opens: int = 0
    recipients_evaluated: int = 0
    recipients_skipped: int = 0

    @staticmethod
    def _rate(opens, sends):
        return 100.0 * opens / sends if sends else float("nan")

    @property
    def topk_open_rate(self) -> float:
        return self._rate(self.topk_opens, self.topk_sends)

    @property
    def uniform_open_rate(self) -> float:
        """k bins drawn per recipient from all bins."""
        return self._rate(self.uniform_opens, self.uniform_sends)

    @property
    def uniform_excl_open_rate(self) -> float:
        """k bins drawn per recipient from outside the top k."""
        return self._rate(self.uniform_excl_opens, self.uniform_excl_sends)

    def to_dict(self) -> dict:
        return {
            "k": self.k, "seed": self.seed,
            "topk": {"sends": self.topk_sends, "opens": self.topk_opens,
                     "open_rate_pct": self.topk_open_rate},
            "uniform": {"sends": self.uniform_sends, "opens": self.uniform_opens,
                        "open_rate_pct": self.uniform_open_rate},
            "uniform_excluding_topk": {
                "sends": self.uniform_excl_sends,
                "opens": self.uniform_excl_opens,
                "open_rate_pct": self.uniform_excl_open_rate},
            "recipients_evaluated": self.recipients_evaluated,
            "recipients_skipped": self.recipients_skipped,
        }


def evaluate_topk(rankings: dict[str, BinRanking],
                  holdout: dict[str, list], scheme, window_hours: float,
                  k: int = 10, seed: int = 0) -> TopKReport:
    """Open rates in the model's top-k bins vs uniformly sampled bins.

    The uniform draw is without replacement per recipient with a fixed
    seed; both the all-bins and excluding-top-k variants are reported.
    A recipient whose holdout messages land in neither set contributes
    to no numerator or denominator and is counted as skipped.
    """
    report = TopKReport(k=k, seed=seed)
    n_bins = scheme.bin_count
    for r_idx, rid in enumerate(sorted(rankings)):
        msgs = holdout.get(rid, [])
        if not msgs:
            report.recipients_skipped += 1
            continue
        ranking = rankings[rid]
        top = ranking.top(k)
        rng = np.random.default_rng([seed, r_idx])
        uniform = set(rng.choice(n_bins, size=k, replace=False).tolist())
        rest = np.array(sorted(set(range(n_bins)) - top))
        uniform_excl = set(rng.choice(rest, size=min(k, rest.size),
                                      replace=False).tolist())
        touched = False
        for msg in msgs:
            b = bin_of(msg.send_time, scheme)
            opened = _opened_within(msg, window_hours)
            if b in top:
                report.topk_sends += 1
                report.topk_opens += int(opened)
                touched = True
            if b in uniform:
                report.uniform_sends += 1
                report.uniform_opens += int(opened)
                touched = True
            if b in uniform_excl:
                report.uniform_excl_sends += 1
                report.uniform_excl_opens += int(opened)
        if touched:
            report.recipients_evaluated += 1
        else:
            report.recipients_skipped += 1
    return report


@dataclass
class DecileReport:
    """Open rate by decile of each recipient's own bin ranking."""

    sends: np.ndarray = field(default_factory=lambda: np.zeros(10, dtype=np.int64))
    opens: np.ndarray = field(default_factory=lambda: np.zeros(10, dtype=np.int64))

    @property
    def open_rates_pct(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.sends > 0, 100.0 * self.opens / self.sends,
                            np.nan)

    def to_dict(self) -> dict:
        return {"deciles": [
            {"decile": d + 1, "sends": int(self.sends[d]),
             "opens": int(self.opens[d]),
             "open_rate_pct": (float(self.open_rates_pct[d])
                               if self.sends[d] else None)}
            for d in range(10)]}


def decile_report(rankings: dict[str, BinRanking], holdout: dict[str, list],
                  scheme, window_hours: float) -> DecileReport:
    n_bins = scheme.bin_count
    if n_bins % 10 != 0:
        raise ValueError("decile report needs a bin count divisible by 10")
    per_decile = n_bins // 10
    report = DecileReport()
    for rid, ranking in rankings.items():
        for msg in holdout.get(rid, []):
            b = bin_of(msg.send_time, scheme)
            d = (ranking.rank_of(b) - 1) // per_decile
            report.sends[d] += 1
            report.opens[d] += int(_opened_within(msg, window_hours))
    return report


def write_rankings_csv(rankings: dict[str, BinRanking], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["recipient_id", "rank", "bin", "phi"])
        for rid in sorted(rankings):
            ranking = rankings[rid]
            for pos, (b, phi) in enumerate(zip(ranking.bins, ranking.phi), 1):
                w.writerow([rid, pos, int(b), repr(float(phi))])


def read_rankings_csv(path) -> dict[str, BinRanking]:
    rows: dict[str, list[tuple[int, int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["recipient_id", "rank", "bin", "phi"]:
            raise ValueError(f"{path}: not a rankings csv")
        for rid, rank, b, phi in reader:
            rows.setdefault(rid, []).append((int(rank), int(b), float(phi)))
    out = {}
    for rid, entries in rows.items():
        entries.sort()
        out[rid] = BinRanking(
            recipient_id=rid,
            bins=np.array([b for _, b, _ in entries], dtype=np.int64),
            phi=np.array([p for _, _, p in entries]))
    return out


def open_rate_matrix_csv(histories: dict[str, RecipientHistory], scheme,
                         window_hours: float, path) -> None:
    """Recipient x bin open-rate matrix; empty cells mean no sends there."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["recipient_id"] + [f"bin_{b}" for b in range(scheme.bin_count)])
        for rid in sorted(histories):
            sends = np.zeros(scheme.bin_count, dtype=np.int64)
            opens = np.zeros(scheme.bin_count, dtype=np.int64)
            for msg in histories[rid].messages:
                b = bin_of(msg.send_time, scheme)
                sends[b] += 1
                opens[b] += int(_opened_within(msg, window_hours))
            row = [rid] + [f"{opens[b] / sends[b]:.4f}" if sends[b] else ""
                           for b in range(scheme.bin_count)]
            w.writerow(row)
