"""Raw interaction logs -> per-recipient ordered message histories.

Input is two CSVs (emails, purchases) with integer Unix-second
timestamps. Ingestion assigns in-window rows to recipients, rejects
rows that violate basic ordering invariants (with diagnostics, never
silently), and sorts each history by send time. Filtering then applies
the bulk-size, open-count and regular-recipient rules. Histories
round-trip through a versioned JSON-lines snapshot.

All times are UTC seconds held as ints; durations leave this module in
seconds and are converted to hours at the model boundary.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

SECONDS_PER_HOUR = 3600
SPAN_SECONDS = 30 * 86400  # the "one message every 30 days" span


class SchemaError(ValueError):
    """Header or row structure does not match the documented CSV schema."""


class FilterError(ValueError):
    pass


@dataclass(frozen=True)
class RawRecord:
    recipient_id: str
    campaign_id: str
    send_time: int
    open_time: int | None
    click_time: int | None
    campaign_recipient_count: int
    open_count: int

    def validate(self) -> str | None:
        """Return a rejection reason, or None if the record is coherent."""
        if self.campaign_recipient_count <= 0:
            return "campaign_recipient_count must be positive"
        if self.open_count < 0:
            return "open_count must be non-negative"
        if self.open_time is not None and self.open_time < self.send_time:
            return "open_time precedes send_time"
        if self.click_time is not None:
            if self.open_time is None:
                return "click_time without open_time"
            if self.click_time < self.open_time:
                return "click_time precedes open_time"
        return None


@dataclass(frozen=True)
class PurchaseRecord:
    recipient_id: str
    purchase_time: int
    channel: str  # "web" | "offline"
    direct_mail_time: int | None

    def validate(self) -> str | None:
        if self.channel not in ("web", "offline"):
            return f"unknown channel {self.channel!r}"
        return None


@dataclass
class RecipientHistory:
    recipient_id: str
    messages: list[RawRecord] = field(default_factory=list)
    purchases: list[PurchaseRecord] = field(default_factory=list)

    def sort(self):
        # deterministic order: send time, then campaign id for exact ties
        self.messages.sort(key=lambda r: (r.send_time, r.campaign_id))
        self.purchases.sort(key=lambda p: p.purchase_time)


@dataclass(frozen=True)
class CensoredOutcome:
    """Time-to-open clipped at the censoring window.

    duration_s is in integer seconds; event == 0 forces duration_s to
    the window exactly, event == 1 means the first open fell inside it.
    """

    duration_s: int
    event: int

    @property
    def hours(self) -> float:
        return self.duration_s / SECONDS_PER_HOUR


def censor(record: RawRecord, window_hours: float) -> CensoredOutcome:
    """Clip time-to-first-open at the window; same-second opens count as 1s."""
    window_s = int(round(window_hours * SECONDS_PER_HOUR))
    if window_s <= 0:
        raise ValueError("window must be positive")
    if record.open_time is None:
        return CensoredOutcome(duration_s=window_s, event=0)
    delta = record.open_time - record.send_time
    if delta > window_s:
        return CensoredOutcome(duration_s=window_s, event=0)
    return CensoredOutcome(duration_s=max(delta, 1), event=1)


# ---------------------------------------------------------------------------
# ingestion

EMAIL_HEADER = ["recipient_id", "campaign_id", "send_ts", "open_ts",
                "click_ts", "campaign_size", "open_count"]
PURCHASE_HEADER = ["recipient_id", "purchase_ts", "channel", "direct_mail_ts"]


@dataclass
class IngestResult:
    histories: dict[str, RecipientHistory]
    rows_assigned: int = 0
    rows_rejected: int = 0
    rows_out_of_window: int = 0
    purchases_kept: int = 0
    purchases_dropped: int = 0
    diagnostics: list[str] = field(default_factory=list)


def _opt_int(text: str) -> int | None:
    return int(text) if text.strip() else None


def read_emails_csv(path) -> Iterator[RawRecord | str]:
    """Yield RawRecords; malformed rows come out as diagnostic strings."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EMAIL_HEADER:
            raise SchemaError(f"{path}: expected header {EMAIL_HEADER}, got {header}")
        for i, row in enumerate(reader, start=2):
            try:
                yield RawRecord(
                    recipient_id=row[0],
                    campaign_id=row[1],
                    send_time=int(row[2]),
                    open_time=_opt_int(row[3]),
                    click_time=_opt_int(row[4]),
                    campaign_recipient_count=int(row[5]),
                    open_count=int(row[6]),
                )
            except (ValueError, IndexError) as err:
                yield f"{path}:{i}: unparseable row ({err})"


def read_purchases_csv(path) -> Iterator[PurchaseRecord | str]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PURCHASE_HEADER:
            raise SchemaError(f"{path}: expected header {PURCHASE_HEADER}, got {header}")
        for i, row in enumerate(reader, start=2):
            try:
                yield PurchaseRecord(
                    recipient_id=row[0],
                    purchase_time=int(row[1]),
                    channel=row[2],
                    direct_mail_time=_opt_int(row[3]),
                )
            except (ValueError, IndexError) as err:
                yield f"{path}:{i}: unparseable row ({err})"


def ingest(records: Iterable[RawRecord | PurchaseRecord | str],
           window: tuple[int, int]) -> IngestResult:
    """Assemble per-recipient histories from a mixed record stream.

    Emails must be sent inside [window_start, window_end); purchases are
    kept when they happen before the window end (earlier history is
    legitimate context). Strings in the stream are parse diagnostics
    from the CSV readers and count as rejected rows.
    """
    start, end = window
    if start >= end:
        raise ValueError("window start must precede end")
    result = IngestResult(histories={})
    for rec in records:
        if isinstance(rec, str):
            result.rows_rejected += 1
            result.diagnostics.append(rec)
            continue
        if isinstance(rec, PurchaseRecord):
            reason = rec.validate()
            if reason is not None or rec.purchase_time >= end:
                result.purchases_dropped += 1
                if reason:
                    result.diagnostics.append(f"purchase rejected: {reason}")
                continue
            hist = result.histories.setdefault(
                rec.recipient_id, RecipientHistory(rec.recipient_id))
            hist.purchases.append(rec)
            result.purchases_kept += 1
            continue
        if not (start <= rec.send_time < end):
            result.rows_out_of_window += 1
            continue
        reason = rec.validate()
        if reason is not None:
            result.rows_rejected += 1
            result.diagnostics.append(
                f"row rejected ({rec.recipient_id}, {rec.campaign_id}): {reason}")
            continue
        hist = result.histories.setdefault(
            rec.recipient_id, RecipientHistory(rec.recipient_id))
        hist.messages.append(rec)
        result.rows_assigned += 1
    for hist in result.histories.values():
        hist.sort()
    return result


# ---------------------------------------------------------------------------
# filtering


@dataclass(frozen=True)
class FilterConfig:
    min_messages: int = 10
    min_rate_span_s: int = SPAN_SECONDS
    min_bulk_size: int = 400
    max_open_count: int = 10
    window: tuple[int, int] | None = None  # needed for the span rule


def _passes_span_rule(messages: list[RawRecord], window: tuple[int, int],
                      span_s: int) -> bool:
    """At least one message in every full 30-day span from window start."""
    start, end = window
    n_spans = (end - start) // span_s
    if n_spans == 0:
        return bool(messages)
    hits = set()
    for msg in messages:
        span = (msg.send_time - start) // span_s
        if 0 <= span < n_spans:
            hits.add(span)
    return len(hits) == n_spans


def filter_histories(histories: dict[str, RecipientHistory],
                     config: FilterConfig) -> dict[str, RecipientHistory]:
    """Keep regular recipients and drop one-off / bot-like records.

    Message-level rules run first (small campaigns out, absurd open
    counts out); the recipient then stays when it has at least
    min_messages left OR a message in every 30-day span of the window.
    """
    out: dict[str, RecipientHistory] = {}
    for rid, hist in histories.items():
        kept = [m for m in hist.messages
                if m.campaign_recipient_count >= config.min_bulk_size
                and m.open_count <= config.max_open_count]
        if not kept:
            continue
        enough = len(kept) >= config.min_messages
        regular = (config.window is not None
                   and _passes_span_rule(kept, config.window,
                                         config.min_rate_span_s))
        if enough or regular:
            out[rid] = RecipientHistory(rid, kept, list(hist.purchases))
    if not out:
        raise FilterError("no recipients survive filtering")
    return out


# ---------------------------------------------------------------------------
# snapshot format (JSON lines, one recipient per line)

SNAPSHOT_VERSION = 1


def save_histories(histories: dict[str, RecipientHistory], path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"snapshot_version": SNAPSHOT_VERSION}) + "\n")
        for rid in sorted(histories):
            hist = histories[rid]
            doc = {
                "recipient_id": rid,
                "messages": [[m.campaign_id, m.send_time, m.open_time,
                              m.click_time, m.campaign_recipient_count,
                              m.open_count] for m in hist.messages],
                "purchases": [[p.purchase_time, p.channel, p.direct_mail_time]
                              for p in hist.purchases],
            }
            fh.write(json.dumps(doc) + "\n")


def load_histories(path) -> dict[str, RecipientHistory]:
    path = Path(path)
    out: dict[str, RecipientHistory] = {}
    with open(path) as fh:
        head = json.loads(fh.readline())
        if head.get("snapshot_version") != SNAPSHOT_VERSION:
            raise SchemaError(
                f"{path}: unsupported snapshot version {head.get('snapshot_version')!r}")
        for line in fh:
            doc = json.loads(line)
            rid = doc["recipient_id"]
            hist = RecipientHistory(rid)
            for cid, send, open_, click, size, opens in doc["messages"]:
                hist.messages.append(RawRecord(rid, cid, send, open_, click,
                                               size, opens))
            for ts, channel, dm in doc["purchases"]:
                hist.purchases.append(PurchaseRecord(rid, ts, channel, dm))
            out[rid] = hist
    return out
