"""Per-message feature extraction and sequence assembly.

Each message gets 8 dense features describing the recipient's state at
send time plus a one-hot send-time bin:

    0 last_opened            previous email was opened
    1 last_clicked           previous email was clicked
    2 last_mass_mailed       previous campaign reached >75% of recipients
    3 days_since_last_email  capped at 30, scaled to [0,1]
    4 days_since_last_purchase  capped at 30, scaled to [0,1]
    5 web_purchase_since_last
    6 offline_purchase_since_last
    7 direct_mail_since_last

Day counts keep their raw values on the observation for audit; the
model-facing vector carries min(days, 30)/30. The first message of a
recipient has no referent for any of these, so binaries are 0 and day
counts sit at the 30-day cap.

Everything here is causal: features of message j use only data stamped
before j's send time, plus j's own send bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .event_log import (SECONDS_PER_HOUR, CensoredOutcome, PurchaseRecord,
                        RawRecord, RecipientHistory, censor)
from .virtual_time import BinScheme, bin_of, one_hot

DENSE_DIM = 8
DAY_CAP = 30.0
MASS_MAIL_FRACTION = 0.75
_SECONDS_PER_DAY = 86400.0

DENSE_NAMES = [
    "last_opened", "last_clicked", "last_mass_mailed",
    "days_since_last_email", "days_since_last_purchase",
    "web_purchase_since_last", "offline_purchase_since_last",
    "direct_mail_since_last",
]


@dataclass(frozen=True)
class MessageFeatures:
    last_opened: int
    last_clicked: int
    last_mass_mailed: int
    days_since_last_email: float  # raw, uncapped
    days_since_last_purchase: float
    web_purchase_since_last: int
    offline_purchase_since_last: int
    direct_mail_since_last: int
    send_bin: int
    bin_count: int

    def dense(self) -> np.ndarray:
        """The 8 model-scaled dense features."""
        return np.array([
            self.last_opened,
            self.last_clicked,
            self.last_mass_mailed,
            min(self.days_since_last_email, DAY_CAP) / DAY_CAP,
            min(self.days_since_last_purchase, DAY_CAP) / DAY_CAP,
            self.web_purchase_since_last,
            self.offline_purchase_since_last,
            self.direct_mail_since_last,
        ])

    def vector(self) -> np.ndarray:
        """dense ++ one-hot send bin, the model input (108-dim by default)."""
        return np.concatenate([self.dense(), one_hot(self.send_bin, self.bin_count)])


@dataclass(frozen=True)
class MessageObservation:
    features: MessageFeatures
    outcome: CensoredOutcome
    recipient_id: str
    position: int


def dense_between(prev: RawRecord | None, send_time: int,
                  purchases: list[PurchaseRecord],
                  mass_threshold: float) -> np.ndarray:
    """Scaled dense features for a message sent at ``send_time``.

    ``prev`` is the recipient's immediately preceding message (None for
    a cold start); "since last" scans purchases in [prev send, now).
    Shared with the synthetic generator so generated hazards and
    extracted features agree exactly.
    """
    if prev is None:
        return np.array([0, 0, 0, 1.0, _days_since_purchase_scaled(purchases, send_time, None),
                         0, 0, 0])
    lo, hi = prev.send_time, send_time
    web = offline = dm = 0
    for p in purchases:
        if p.direct_mail_time is not None and lo <= p.direct_mail_time < hi:
            dm = 1
        if lo <= p.purchase_time < hi:
            if p.channel == "web":
                web = 1
            else:
                offline = 1
    days_email = (send_time - prev.send_time) / _SECONDS_PER_DAY
    # "opened/clicked" only counts interactions that precede this send
    opened = prev.open_time is not None and prev.open_time < send_time
    clicked = prev.click_time is not None and prev.click_time < send_time
    return np.array([
        1 if opened else 0,
        1 if clicked else 0,
        1 if prev.campaign_recipient_count > mass_threshold else 0,
        min(days_email, DAY_CAP) / DAY_CAP,
        _days_since_purchase_scaled(purchases, send_time, prev),
        web, offline, dm,
    ])


def _days_since_purchase_scaled(purchases, send_time, prev) -> float:
    if prev is None:
        return 1.0  # cold start sits at the cap
    last = None
    for p in purchases:
        if p.purchase_time < send_time:
            last = p.purchase_time if last is None else max(last, p.purchase_time)
    if last is None:
        return 1.0
    return min((send_time - last) / _SECONDS_PER_DAY, DAY_CAP) / DAY_CAP


class FeatureExtractor:
    """Turns filtered histories into per-message observations."""

    def __init__(self, scheme: BinScheme, window_hours: float,
                 total_recipients: int):
        self.scheme = scheme
        self.window_hours = window_hours
        self.mass_threshold = MASS_MAIL_FRACTION * total_recipients

    def extract(self, history: RecipientHistory) -> list[MessageObservation]:
        out = []
        prev: RawRecord | None = None
        for pos, msg in enumerate(history.messages):
            dense = dense_between(prev, msg.send_time, history.purchases,
                                  self.mass_threshold)
            if prev is None:
                days_email = DAY_CAP
                days_purchase = DAY_CAP
            else:
                days_email = (msg.send_time - prev.send_time) / _SECONDS_PER_DAY
                days_purchase = _raw_days_since_purchase(
                    history.purchases, msg.send_time)
            feats = MessageFeatures(
                last_opened=int(dense[0]),
                last_clicked=int(dense[1]),
                last_mass_mailed=int(dense[2]),
                days_since_last_email=days_email,
                days_since_last_purchase=days_purchase,
                web_purchase_since_last=int(dense[5]),
                offline_purchase_since_last=int(dense[6]),
                direct_mail_since_last=int(dense[7]),
                send_bin=bin_of(msg.send_time, self.scheme),
                bin_count=self.scheme.bin_count,
            )
            out.append(MessageObservation(
                features=feats,
                outcome=censor(msg, self.window_hours),
                recipient_id=history.recipient_id,
                position=pos,
            ))
            prev = msg
        return out


def _raw_days_since_purchase(purchases, send_time) -> float:
    last = None
    for p in purchases:
        if p.purchase_time < send_time:
            last = p.purchase_time if last is None else max(last, p.purchase_time)
    if last is None:
        return DAY_CAP
    return (send_time - last) / _SECONDS_PER_DAY


def cold_start_vector(bin_count: int) -> np.ndarray:
    """Averaged-part stand-in when a message has no history at all."""
    dense = np.array([0, 0, 0, 1.0, 1.0, 0, 0, 0])
    return np.concatenate([dense, np.zeros(bin_count)])


def average_features(prefix: list[MessageObservation],
                     current_bin: int, bin_count: int) -> np.ndarray:
    """Element-wise mean of the past messages' vectors ++ current bin one-hot.

    The averaged block keeps the historical bin distribution and, through
    the last_opened entries, the recipient's past open rate; the current
    send bin is appended separately because it is the decision variable.
    """
    if prefix:
        avg = np.mean([obs.features.vector() for obs in prefix], axis=0)
    else:
        avg = cold_start_vector(bin_count)
    return np.concatenate([avg, one_hot(current_bin, bin_count)])


def averaged_dim(bin_count: int) -> int:
    return DENSE_DIM + 2 * bin_count


def averaged_dataset(per_recipient: list[list[MessageObservation]],
                     last_n: int | None = None):
    """Design matrix for the baseline models.

    One row per message: averaged history vector ++ that message's bin.
    ``last_n`` restricts rows to each recipient's most recent messages
    (the averaging itself always sees the full prefix); durations come
    out in hours.
    """
    rows, durs, evs = [], [], []
    for obs_list in per_recipient:
        lo = 0 if last_n is None else max(0, len(obs_list) - last_n)
        for j in range(lo, len(obs_list)):
            obs = obs_list[j]
            rows.append(average_features(obs_list[:j], obs.features.send_bin,
                                         obs.features.bin_count))
            durs.append(obs.outcome.hours)
            evs.append(obs.outcome.event)
    return (np.array(rows), np.array(durs), np.array(evs, dtype=np.int64))


@dataclass(frozen=True)
class SequenceExample:
    """Fixed-length slice of one recipient's observations.

    Longer histories keep the most recent ``length`` messages; shorter
    ones are front-padded with zero features and a false mask. Loss and
    metrics must never consume masked-out slots.
    """

    recipient_id: str
    features: np.ndarray   # (L, DENSE_DIM + bin_count)
    mask: np.ndarray       # (L,) bool
    durations: np.ndarray  # (L,) hours, 0 where padded
    events: np.ndarray     # (L,) {0,1}, 0 where padded
    positions: np.ndarray  # (L,) original message index, -1 where padded

    @property
    def length(self) -> int:
        return self.mask.size


def make_sequences(per_recipient: list[list[MessageObservation]],
                   length: int) -> list[SequenceExample]:
    if length <= 0:
        raise ValueError("sequence length must be positive")
    out = []
    for obs_list in per_recipient:
        if not obs_list:
            continue
        tail = obs_list[-length:]
        pad = length - len(tail)
        dim = tail[0].features.vector().size
        feats = np.zeros((length, dim))
        mask = np.zeros(length, dtype=bool)
        durs = np.zeros(length)
        evs = np.zeros(length, dtype=np.int64)
        pos = np.full(length, -1, dtype=np.int64)
        for i, obs in enumerate(tail):
            feats[pad + i] = obs.features.vector()
            mask[pad + i] = True
            durs[pad + i] = obs.outcome.hours
            evs[pad + i] = obs.outcome.event
            pos[pad + i] = obs.position
        out.append(SequenceExample(
            recipient_id=obs_list[0].recipient_id,
            features=feats, mask=mask, durations=durs, events=evs,
            positions=pos,
        ))
    return out


def stack_sequences(sequences: list[SequenceExample]):
    """(B,L,D) features, (B,L) mask/durations/events for batch training."""
    return (np.stack([s.features for s in sequences]),
            np.stack([s.mask for s in sequences]),
            np.stack([s.durations for s in sequences]),
            np.stack([s.events for s in sequences]))
