"""Shared survival mathematics.

Hazard-ratio batches, the Efron-approximated negative log partial
likelihood of the Cox model (with analytic gradient), Harrell's
concordance index, and the Weibull survivor/hazard pair.

Conventions:
  * durations are positive reals (hours); ties are detected by exact
    equality, which is safe because upstream durations come from
    integer seconds divided by 3600
  * an event indicator of 1 means the email was opened inside the
    censoring window, 0 means censored at the window edge
  * all likelihood math runs in 64-bit with a max-shift so that risk
    sums over large batches of hazard ratios cannot overflow
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SurvivalError(ValueError):
    """Invalid batch or undefined survival quantity."""


@dataclass(frozen=True)
class SurvivalBatch:
    """One scored batch: hazard ratio, duration and event per observation."""

    phi: np.ndarray
    durations: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        dur = np.asarray(self.durations, dtype=np.float64)
        ev = np.asarray(self.events, dtype=np.int64)
        if not (phi.shape == dur.shape == ev.shape) or phi.ndim != 1:
            raise SurvivalError(
                f"batch arrays must be equal-length vectors, got shapes "
                f"{phi.shape}, {dur.shape}, {ev.shape}"
            )
        if phi.size == 0:
            raise SurvivalError("empty batch")
        if not np.all(np.isfinite(phi)) or np.any(phi <= 0):
            raise SurvivalError("hazard ratios must be positive and finite")
        if np.any(dur <= 0) or not np.all(np.isfinite(dur)):
            raise SurvivalError("durations must be positive and finite")
        if not np.all((ev == 0) | (ev == 1)):
            raise SurvivalError("events must be 0 or 1")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "durations", dur)
        object.__setattr__(self, "events", ev)

    def __len__(self) -> int:
        return self.phi.size

    @property
    def n_events(self) -> int:
        return int(self.events.sum())


@dataclass(frozen=True)
class PartialLikTerms:
    """Tie structure of a batch: unique event times with their tied sets.

    ``tied_sets[l]`` holds the observation indices that open exactly at
    ``event_times[l]``; the risk set at that time is every observation
    with duration >= ``event_times[l]`` (events and censored alike).
    """

    event_times: np.ndarray
    tied_sets: list[np.ndarray] = field(repr=False)
    tie_counts: np.ndarray
    durations: np.ndarray = field(repr=False)

    def risk_set(self, l: int) -> np.ndarray:
        return np.nonzero(self.durations >= self.event_times[l])[0]


def partial_lik_terms(durations, events) -> PartialLikTerms:
    """Group event observations by unique event time."""
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    ev_idx = np.nonzero(events == 1)[0]
    if ev_idx.size == 0:
        raise SurvivalError("no events in batch")
    times = durations[ev_idx]
    order = np.argsort(times, kind="stable")
    uniq, starts = np.unique(times[order], return_index=True)
    splits = np.split(ev_idx[order], starts[1:])
    return PartialLikTerms(
        event_times=uniq,
        tied_sets=splits,
        tie_counts=np.array([s.size for s in splits], dtype=np.int64),
        durations=durations,
    )


def _efron_eta(eta, durations, events):
    """NLL and gradient wrt eta = log(phi), Efron tie correction.

    For each unique event time t_l with tied set D_l (size d_l) and risk
    set R_l = {h : duration_h >= t_l}:

        nll = -sum_l [ sum_{h in D_l} eta_h
                       - sum_{m=1}^{d_l} log( sum_{R_l} e^eta
                                              - (m-1)/d_l * sum_{D_l} e^eta ) ]

    Work happens in the max-shifted space s = exp(eta - M); every
    denominator is positive there because the tied sum never exceeds the
    risk sum and (m-1)/d_l < 1.
    """
    eta = np.asarray(eta, dtype=np.float64)
    if not np.all(np.isfinite(eta)):
        raise SurvivalError("non-finite scores")
    terms = partial_lik_terms(durations, events)
    durations = terms.durations
    events = np.asarray(events, dtype=np.int64)

    shift = eta.max()
    s = np.exp(eta - shift)

    # risk sums via a right-to-left cumulative over duration-sorted scores
    order = np.argsort(durations, kind="stable")
    sorted_dur = durations[order]
    rev_cumsum = np.cumsum(s[order][::-1])[::-1]
    # first sorted position with duration >= t_l
    pos = np.searchsorted(sorted_dur, terms.event_times, side="left")
    risk_sums = rev_cumsum[pos]

    nll = 0.0
    u = np.zeros(terms.event_times.size)  # sum_m 1/A_{l,m}
    v = np.zeros(terms.event_times.size)  # sum_m ((m-1)/d_l)/A_{l,m}
    for l, tied in enumerate(terms.tied_sets):
        d = tied.size
        tie_sum = s[tied].sum()
        frac = np.arange(d) / d
        denoms = risk_sums[l] - frac * tie_sum
        if np.any(denoms <= 0):
            raise SurvivalError("degenerate risk sums (numerical underflow)")
        nll -= eta[tied].sum() - (np.log(denoms).sum() + d * shift)
        u[l] = (1.0 / denoms).sum()
        v[l] = (frac / denoms).sum()

    # grad_k = s_k * (sum_{l: t_l <= dur_k} u_l - I_k * v_{l(k)}) - I_k
    cum_u = np.concatenate([[0.0], np.cumsum(u)])
    n_le = np.searchsorted(terms.event_times, durations, side="right")
    grad = s * cum_u[n_le]
    ev_idx = np.nonzero(events == 1)[0]
    l_of_event = np.searchsorted(terms.event_times, durations[ev_idx])
    grad[ev_idx] -= s[ev_idx] * v[l_of_event]
    grad[ev_idx] -= 1.0
    return float(nll), grad


def efron_nll(batch: SurvivalBatch) -> float:
    """Negative log Cox partial likelihood with Efron's tie correction."""
    nll, _ = _efron_eta(np.log(batch.phi), batch.durations, batch.events)
    return nll


def efron_nll_gradient(batch: SurvivalBatch, wrt: str = "phi") -> np.ndarray:
    """Analytic gradient of the Efron NLL.

    ``wrt="phi"`` returns d(nll)/d(phi_h); ``wrt="log_phi"`` returns the
    gradient with respect to the log hazard ratio (the model's
    pre-exponential output), which is what gradient training consumes.
    """
    _, grad_eta = _efron_eta(np.log(batch.phi), batch.durations, batch.events)
    if wrt == "log_phi":
        return grad_eta
    if wrt == "phi":
        return grad_eta / batch.phi
    raise ValueError(f"wrt must be 'phi' or 'log_phi', got {wrt!r}")


def efron_nll_eta(eta, durations, events):
    """(nll, grad_eta) straight from log-scores; used as a loss node."""
    return _efron_eta(eta, durations, events)


def c_index(batch: SurvivalBatch) -> float:
    """Harrell's concordance index.

    A pair is admissible when it is not doubly censored and the smaller
    observed duration belongs to an event; on tied durations the pair is
    admissible only when exactly one observation is an event (the event
    counts as the earlier one). Concordant means the earlier opener got
    the higher hazard ratio; tied scores earn half credit.
    """
    phi, dur, ev = batch.phi, batch.durations, batch.events
    n = len(batch)
    ev_idx = np.nonzero(ev == 1)[0]
    pairs = 0
    credit = 0.0
    # pairs are enumerated once, from the side of the earlier event
    for i in ev_idx:
        later = (dur > dur[i]) | ((dur == dur[i]) & (ev == 0))
        m = int(later.sum())
        if m == 0:
            continue
        pairs += m
        credit += float((phi[i] > phi[later]).sum())
        credit += 0.5 * float((phi[i] == phi[later]).sum())
    if pairs == 0:
        raise SurvivalError("no admissible pairs")
    return credit / pairs


def weibull_survival(t, lam, gamma):
    """S(t) = exp(-lam * t**gamma), valid for t >= 0, lam > 0, gamma > 0."""
    _check_weibull_params(lam, gamma)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise SurvivalError("t must be non-negative")
    return np.exp(-lam * t**gamma)


def weibull_hazard(t, lam, gamma):
    """h(t) = lam * gamma * t**(gamma-1)."""
    _check_weibull_params(lam, gamma)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise SurvivalError("t must be non-negative")
    return lam * gamma * t ** (gamma - 1.0)


def _check_weibull_params(lam, gamma):
    if not (np.all(np.asarray(lam) > 0) and np.all(np.asarray(gamma) > 0)):
        raise SurvivalError("scale and shape must be positive")
