"""Synthetic recipient populations with known ground-truth hazards.

The generator plants a proportional-hazards structure the rest of the
package is supposed to recover:

    h(t) = lam0 * gamma0 * t**(gamma0-1)
           * exp(beta . x  +  bin_effect[b]  +  carryover * opened_prev)

where x are the live dense features of the message (computed with the
same code the feature pipeline uses), b is the message's send-time bin
and opened_prev flags whether the previous email was opened before this
send. A cure fraction never opens anything. Open delays come from the
inverse CDF of the implied Weibull survivor, so closed-form open
probabilities are available for every message.

Output is the pipeline's email/purchase CSV schema plus a ground-truth
JSON of every parameter and every message's true hazard ratio. Same
seed, same bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .features import dense_between
from .event_log import PurchaseRecord, RawRecord
from .survival import SurvivalBatch, c_index
from .virtual_time import WEEK_SECONDS, BinScheme, bin_of, fit_bins

# Monday 2013-12-02 00:00 UTC, a plausible campaign-log start
DEFAULT_START = 1385942400


@dataclass(frozen=True)
class GeneratorSpec:
    n_recipients: int = 1000
    messages_per_recipient: int = 20
    span_weeks: int = 22
    offset_distribution: str = "workweek"  # or "uniform"
    lambda0: float = 0.05   # per hour
    gamma0: float = 1.0
    beta: tuple[float, ...] = (0.0,) * 8  # on the 8 scaled dense features
    bin_effects: tuple[float, ...] = ()   # log-hazard offsets, len bin_count
    carryover: float = 0.0  # log-hazard bonus when the previous email was opened
    p_never: float = 0.0
    bin_count: int = 100
    seed: int = 0
    window_start: int = DEFAULT_START
    purchase_rate_per_week: float = 0.1
    direct_mail_prob: float = 0.3
    click_prob: float = 0.1
    mass_mail_prob: float = 0.2
    campaign_size_min: int = 500

    @property
    def window_end(self) -> int:
        return self.window_start + self.span_weeks * WEEK_SECONDS

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "GeneratorSpec":
        doc = json.loads(text)
        for key in ("beta", "bin_effects"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass
class GeneratedData:
    spec: GeneratorSpec
    scheme: BinScheme
    emails: list[RawRecord]
    purchases: list[PurchaseRecord]
    truth: list[dict]  # per message: recipient_id, send_ts, bin, phi, delay_s


def _draw_offsets(kind: str, rng: np.random.Generator, n: int) -> np.ndarray:
    """Week offsets in seconds. "workweek" piles sends into weekday daytime."""
    if kind == "uniform":
        return rng.integers(0, WEEK_SECONDS, size=n)
    if kind == "workweek":
        day = rng.choice(7, size=n, p=[0.2, 0.2, 0.18, 0.18, 0.14, 0.05, 0.05])
        # morning-heavy bimodal hours, clipped into the day
        hour = np.where(rng.random(n) < 0.6,
                        rng.normal(10, 2.2, size=n), rng.normal(18, 2.5, size=n))
        hour = np.clip(hour, 0, 23.99)
        sec = rng.integers(0, 3600, size=n)
        return (day * 86400 + (hour * 3600).astype(np.int64) + sec) % WEEK_SECONDS
    raise ValueError(f"unknown offset distribution {kind!r}")


def ph_delay_hours(rng: np.random.Generator, lam: float, gamma: float,
                   n: int | None = None):
    """Inverse-CDF draw from S(t) = exp(-lam * t**gamma)."""
    u = rng.random(n)
    return (-np.log(u) / lam) ** (1.0 / gamma)


def generate(spec: GeneratorSpec) -> GeneratedData:
    if not 0 <= spec.p_never < 1:
        raise ValueError("p_never must be in [0, 1)")
    if spec.lambda0 <= 0 or spec.gamma0 <= 0:
        raise ValueError("baseline hazard parameters must be positive")
    bin_effects = np.asarray(spec.bin_effects if spec.bin_effects
                             else np.zeros(spec.bin_count))
    if bin_effects.size != spec.bin_count:
        raise ValueError("bin_effects length must equal bin_count")
    beta = np.asarray(spec.beta)

    # pass 1: send times and purchases for everyone, then freeze the bins
    rid_width = len(str(spec.n_recipients - 1))
    all_sends: list[np.ndarray] = []
    all_purchases: list[list[PurchaseRecord]] = []
    span_s = spec.span_weeks * WEEK_SECONDS
    for i in range(spec.n_recipients):
        rng = np.random.default_rng([spec.seed, i])
        m = spec.messages_per_recipient
        weeks = (np.arange(m) * spec.span_weeks) // m
        offs = _draw_offsets(spec.offset_distribution, rng, m)
        ts = np.sort(spec.window_start + weeks * WEEK_SECONDS + offs)
        for j in range(1, m):
            if ts[j] <= ts[j - 1]:
                ts[j] = ts[j - 1] + 60
        all_sends.append(ts)

        rid = f"r{i:0{rid_width}d}"
        n_buy = rng.poisson(spec.purchase_rate_per_week * spec.span_weeks)
        p_ts = np.sort(rng.integers(spec.window_start - 30 * 86400,
                                    spec.window_start + span_s, size=n_buy))
        purchases = []
        for pt in p_ts:
            dm = (int(pt - rng.integers(0, 14 * 86400))
                  if rng.random() < spec.direct_mail_prob else None)
            purchases.append(PurchaseRecord(
                recipient_id=rid, purchase_time=int(pt),
                channel="web" if rng.random() < 0.5 else "offline",
                direct_mail_time=dm))
        all_purchases.append(purchases)

    scheme = fit_bins(np.concatenate(all_sends), spec.bin_count)

    # pass 2: walk each recipient chronologically, sampling opens
    mass_threshold = 0.75 * spec.n_recipients
    emails: list[RawRecord] = []
    purchases_out: list[PurchaseRecord] = []
    truth: list[dict] = []
    for i in range(spec.n_recipients):
        rng = np.random.default_rng([spec.seed, i, 1])
        rid = f"r{i:0{rid_width}d}"
        cured = bool(rng.random() < spec.p_never)
        prev: RawRecord | None = None
        for j, ts in enumerate(all_sends[i]):
            ts = int(ts)
            if rng.random() < spec.mass_mail_prob:
                size = int(0.9 * spec.n_recipients) + 1
            else:
                hi = max(int(0.6 * spec.n_recipients), spec.campaign_size_min + 1)
                size = int(rng.integers(spec.campaign_size_min, hi + 1))
            dense = dense_between(prev, ts, all_purchases[i], mass_threshold)
            b = bin_of(ts, scheme)
            log_phi = float(beta @ dense + bin_effects[b]
                            + spec.carryover * dense[0])
            phi = float(np.exp(log_phi))

            open_time = click_time = None
            delay_s = None
            if not cured:
                delay_h = float(ph_delay_hours(rng, spec.lambda0 * phi,
                                               spec.gamma0))
                delay_s = max(int(round(delay_h * 3600)), 1)
                open_time = ts + delay_s
                if rng.random() < spec.click_prob:
                    click_time = open_time + int(rng.integers(5, 600))
            rec = RawRecord(
                recipient_id=rid, campaign_id=f"c{i}_{j:03d}", send_time=ts,
                open_time=open_time, click_time=click_time,
                campaign_recipient_count=size,
                open_count=1 if open_time is not None else 0)
            emails.append(rec)
            truth.append({"recipient_id": rid, "campaign_id": rec.campaign_id,
                          "send_ts": ts, "bin": int(b), "phi": phi,
                          "delay_s": delay_s, "cured": cured})
            prev = rec
        purchases_out.extend(all_purchases[i])

    return GeneratedData(spec=spec, scheme=scheme, emails=emails,
                         purchases=purchases_out, truth=truth)


def write_dataset(data: GeneratedData, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emails_path = out / "emails.csv"
    with open(emails_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["recipient_id", "campaign_id", "send_ts", "open_ts",
                    "click_ts", "campaign_size", "open_count"])
        for r in data.emails:
            w.writerow([r.recipient_id, r.campaign_id, r.send_time,
                        r.open_time if r.open_time is not None else "",
                        r.click_time if r.click_time is not None else "",
                        r.campaign_recipient_count, r.open_count])
    purchases_path = out / "purchases.csv"
    with open(purchases_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["recipient_id", "purchase_ts", "channel", "direct_mail_ts"])
        for p in data.purchases:
            w.writerow([p.recipient_id, p.purchase_time, p.channel,
                        p.direct_mail_time if p.direct_mail_time is not None else ""])
    truth_path = out / "ground_truth.json"
    truth_path.write_text(json.dumps({
        "spec": asdict(data.spec),
        "scheme": json.loads(data.scheme.to_json()),
        "messages": data.truth,
    }))
    return {"emails": emails_path, "purchases": purchases_path,
            "ground_truth": truth_path}


def true_cindex_ceiling(truth: list[dict], window_hours: float) -> float:
    """C-index the true hazard ratios achieve at the given window.

    This is the oracle ceiling: no fitted model should beat it by more
    than noise, and good fits should approach it.
    """
    window_s = int(window_hours * 3600)
    phi, dur, ev = [], [], []
    for msg in truth:
        # cured recipients have zero hazard; floor keeps the score positive
        phi.append(1e-12 if msg["cured"] else msg["phi"])
        if msg["delay_s"] is not None and msg["delay_s"] <= window_s:
            dur.append(msg["delay_s"] / 3600.0)
            ev.append(1)
        else:
            dur.append(window_s / 3600.0)
            ev.append(0)
    return c_index(SurvivalBatch(phi=np.array(phi), durations=np.array(dur),
                                 events=np.array(ev)))
