"""Classical survival baselines over averaged feature vectors.

Four models, all scoring a single flat vector per message:

  * WeibullPH    parametric Weibull with a log-linear scale link
  * CoxLinear    Cox proportional hazards, phi(x) = exp(beta . x)
  * CoxNonlinear Cox PH with a one-hidden-layer tanh network for log phi
  * CoxMixture   cure model: logistic incidence w(x) mixing a Weibull-PH
                 susceptible component with a never-opening mass

The convex fits (Weibull, CPH linear, mixture) run deterministic
full-batch gradient steps with backtracking line search on the mean
log-likelihood, stopping when the mean-gradient norm drops below 1e-6
or after max_iter steps (flagging non-convergence instead of raising).
The nonconvex CoxNonlinear trains with minibatch Adam; risk sets for
its partial likelihood live inside each minibatch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .survival import (SurvivalBatch, SurvivalError, efron_nll_eta,
                       weibull_hazard, weibull_survival)

GRAD_TOL = 1e-6
MAX_ITER = 5000
SEPARATION_LIMIT = 50.0


class FitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# generic ascent with backtracking line search


def _ascend(value_grad, x0: np.ndarray, max_iter: int = MAX_ITER,
            tol: float = GRAD_TOL):
    """Maximize f via steepest ascent + Armijo backtracking.

    value_grad(x) -> (f, grad). Returns (x, converged). The step starts
    from the last accepted size and is allowed to grow, which keeps the
    loop fast on well-scaled problems without a second-order method.
    """
    x = x0.astype(np.float64).copy()
    f, g = value_grad(x)
    step = 1.0
    for _ in range(max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm < tol:
            return x, True
        step = min(step * 2.0, 1e4)
        while True:
            cand = x + step * g
            f_new, g_new = value_grad(cand)
            if np.isfinite(f_new) and f_new >= f + 1e-4 * step * gnorm**2:
                break
            step *= 0.5
            if step < 1e-14:
                return x, False  # no ascent direction progress left
        x, f, g = cand, f_new, g_new
    return x, False


# ---------------------------------------------------------------------------
# Weibull with covariates through the scale


def weibull_log_likelihood(log_gamma: float, beta0: float, beta: np.ndarray,
                           X: np.ndarray, t: np.ndarray, e: np.ndarray):
    """Mean censored log-likelihood and its gradient.

    ll_i = e_i*(log lam_i + log gamma + (gamma-1) log t_i) - lam_i t_i^gamma
    with lam_i = exp(beta0 + beta . x_i).
    """
    gamma = np.exp(log_gamma)
    eta = beta0 + X @ beta
    lam = np.exp(eta)
    log_t = np.log(t)
    tg = t**gamma
    ll = np.sum(e * (eta + log_gamma + (gamma - 1.0) * log_t) - lam * tg)
    resid = e - lam * tg
    d_b0 = resid.sum()
    d_beta = X.T @ resid
    d_lg = np.sum(e * (1.0 + gamma * log_t) - gamma * lam * tg * log_t)
    n = t.size
    return ll / n, np.concatenate([[d_lg, d_b0], d_beta]) / n


@dataclass
class WeibullPH:
    gamma: float
    beta0: float
    beta: np.ndarray
    converged: bool = True

    def scale(self, X: np.ndarray) -> np.ndarray:
        return np.exp(self.beta0 + X @ self.beta)

    def hazard(self, t, X) -> np.ndarray:
        return weibull_hazard(t, self.scale(X), self.gamma)

    def survival(self, t, X) -> np.ndarray:
        return weibull_survival(t, self.scale(X), self.gamma)

    def ranking_scores(self, X: np.ndarray) -> np.ndarray:
        # with a shared shape, the per-subject scale is the hazard ratio
        return self.scale(X)


def fit_weibull(X: np.ndarray, durations: np.ndarray, events: np.ndarray,
                max_iter: int = MAX_ITER) -> WeibullPH:
    X, t, e = _check_data(X, durations, events)
    if e.sum() == 0:
        raise FitError("all observations censored; Weibull fit undefined")

    def vg(params):
        return weibull_log_likelihood(params[0], params[1], params[2:], X, t, e)

    # exponential-rate style start: gamma=1, rate = events per unit exposure
    x0 = np.concatenate([[0.0, np.log(e.sum() / t.sum())], np.zeros(X.shape[1])])
    sol, ok = _ascend(vg, x0, max_iter=max_iter)
    if not ok:
        warnings.warn("Weibull fit did not reach gradient tolerance")
    return WeibullPH(gamma=float(np.exp(sol[0])), beta0=float(sol[1]),
                     beta=sol[2:], converged=ok)


# ---------------------------------------------------------------------------
# Cox proportional hazards, linear link


@dataclass
class CoxLinear:
    beta: np.ndarray
    converged: bool = True
    diverged: bool = False

    def phi(self, X: np.ndarray) -> np.ndarray:
        return np.exp(X @ self.beta)

    ranking_scores = phi


def fit_cox_linear(X: np.ndarray, durations: np.ndarray, events: np.ndarray,
                   max_iter: int = 2000) -> CoxLinear:
    X, t, e = _check_data(X, durations, events)
    if e.sum() == 0:
        raise FitError("no events; partial likelihood undefined")
    n = t.size

    def vg(beta):
        nll, grad_eta = efron_nll_eta(X @ beta, t, e)
        return -nll / n, -(X.T @ grad_eta) / n

    sol, ok = _ascend(vg, np.zeros(X.shape[1]), max_iter=max_iter)
    diverged = bool(np.any(np.abs(sol) > SEPARATION_LIMIT))
    if diverged:
        warnings.warn("possible separation: a Cox coefficient exceeds 50")
    if not ok and not diverged:
        warnings.warn("Cox fit did not reach gradient tolerance")
    return CoxLinear(beta=sol, converged=ok, diverged=diverged)


# ---------------------------------------------------------------------------
# Cox proportional hazards, one-hidden-layer link


@dataclass
class CoxNonlinear:
    store: ad.ParamStore
    hidden: int
    converged: bool = True

    def log_phi(self, X: np.ndarray) -> np.ndarray:
        p = self.store
        h = np.tanh(X @ p["w1"] + p["b1"])
        return (h @ p["w2"] + p["b2"]).ravel()

    def phi(self, X: np.ndarray) -> np.ndarray:
        return np.exp(self.log_phi(X))

    ranking_scores = phi


def _cox_net_graph(inputs, params):
    X, dur, ev = inputs
    h = ad.tanh(ad.add(ad.matmul(ad.const(X), params["w1"]), params["b1"]))
    eta = ad.add(ad.matmul(h, params["w2"]), params["b2"])
    mask = np.ones(eta.shape, dtype=bool)
    return ad.efron_loss(eta, mask, dur, ev)


def fit_cox_nonlinear(X: np.ndarray, durations: np.ndarray,
                      events: np.ndarray, hidden: int = 32,
                      epochs: int = 20, batch_size: int = 32,
                      lr: float = 0.001, seed: int = 0) -> CoxNonlinear:
    X, t, e = _check_data(X, durations, events)
    if e.sum() == 0:
        raise FitError("no events; partial likelihood undefined")
    rng = np.random.default_rng(seed)
    d = X.shape[1]
    store = ad.ParamStore()
    store.add("w1", ad.init_uniform(rng, (d, hidden), d))
    store.add("b1", np.zeros((1, hidden)))
    store.add("w2", ad.init_uniform(rng, (hidden, 1), hidden))
    store.add("b2", np.zeros((1, 1)))

    n = t.size
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            if e[idx].sum() == 0:
                continue  # no events, partial likelihood empty
            _, grads = ad.forward_backward(
                _cox_net_graph, (X[idx], t[idx], e[idx]), store)
            ad.adam_step(store, grads, lr=lr)
    return CoxNonlinear(store=store, hidden=hidden)


# ---------------------------------------------------------------------------
# mixture cure model


def mixture_log_likelihood(params: np.ndarray, X: np.ndarray, t: np.ndarray,
                           e: np.ndarray):
    """Mean cure-model log-likelihood and gradient.

    params = [a0, a..., log_gamma, b0, b...]; opens contribute
    log(w_i f_i(t)), censored rows log(w_i S_i(t) + 1 - w_i) where w_i
    is the logistic probability of being susceptible at all.
    """
    d = X.shape[1]
    a0, a = params[0], params[1:1 + d]
    log_gamma, b0, b = params[1 + d], params[2 + d], params[3 + d:]
    gamma = np.exp(log_gamma)

    z = a0 + X @ a
    w = 1.0 / (1.0 + np.exp(-z))
    eta = b0 + X @ b
    lam = np.exp(eta)
    log_t = np.log(t)
    tg = t**gamma
    S = np.exp(-lam * tg)

    ev = e == 1
    cs = ~ev
    # guard against log(0) when w -> 0 on an event row
    ll = np.sum(np.log(np.maximum(w[ev], 1e-300))
                + eta[ev] + log_gamma + (gamma - 1.0) * log_t[ev]
                - lam[ev] * tg[ev])
    G = w[cs] * S[cs] + (1.0 - w[cs])
    ll += np.sum(np.log(G))

    grad = np.zeros_like(params)
    # incidence block
    dz = np.zeros(t.size)
    dz[ev] = 1.0 - w[ev]
    dz[cs] = w[cs] * (1.0 - w[cs]) * (S[cs] - 1.0) / G
    grad[0] = dz.sum()
    grad[1:1 + d] = X.T @ dz
    # susceptible block
    dl = np.zeros(t.size)  # d/d eta (through lam)
    dl[ev] = 1.0 - lam[ev] * tg[ev]
    dl[cs] = -w[cs] * lam[cs] * tg[cs] * S[cs] / G
    grad[2 + d] = dl.sum()
    grad[3 + d:] = X.T @ dl
    dg = np.zeros(t.size)  # d/d log gamma
    dg[ev] = e[ev] * (1.0 + gamma * log_t[ev]) - gamma * lam[ev] * tg[ev] * log_t[ev]
    dg[cs] = -w[cs] * gamma * lam[cs] * tg[cs] * log_t[cs] * S[cs] / G
    grad[1 + d] = dg.sum()
    n = t.size
    return ll / n, grad / n


@dataclass
class CoxMixture:
    incidence0: float
    incidence: np.ndarray
    susceptible: WeibullPH
    converged: bool = True

    def w(self, X: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-(self.incidence0 + X @ self.incidence)))

    def survival(self, t, X) -> np.ndarray:
        w = self.w(X)
        return w * self.susceptible.survival(t, X) + (1.0 - w)

    def hazard(self, t, X) -> np.ndarray:
        """Population hazard: w f(t) / S_mix(t)."""
        w = self.w(X)
        f = self.susceptible.hazard(t, X) * self.susceptible.survival(t, X)
        return w * f / self.survival(t, X)

    def ranking_scores(self, X: np.ndarray) -> np.ndarray:
        # incidence-weighted scale: monotone in short-horizon open chance
        return self.w(X) * self.susceptible.scale(X)


def fit_cox_mixture(X: np.ndarray, durations: np.ndarray, events: np.ndarray,
                    max_iter: int = MAX_ITER) -> CoxMixture:
    X, t, e = _check_data(X, durations, events)
    if e.sum() == 0:
        raise FitError("no events; mixture fit undefined")
    if e.sum() == e.size:
        raise FitError("mixture unidentified without censored observations")
    d = X.shape[1]

    def vg(params):
        return mixture_log_likelihood(params, X, t, e)

    ev_rate = np.clip(e.mean(), 0.05, 0.95)
    x0 = np.zeros(3 + 2 * d)
    x0[0] = np.log(ev_rate / (1 - ev_rate))
    x0[2 + d] = np.log(e.sum() / t[e == 1].sum())
    sol, ok = _ascend(vg, x0, max_iter=max_iter)
    if not ok:
        warnings.warn("mixture fit did not reach gradient tolerance")
    return CoxMixture(
        incidence0=float(sol[0]), incidence=sol[1:1 + d],
        susceptible=WeibullPH(gamma=float(np.exp(sol[1 + d])),
                              beta0=float(sol[2 + d]), beta=sol[3 + d:],
                              converged=ok),
        converged=ok,
    )


# ---------------------------------------------------------------------------
# shared plumbing


def _check_data(X, durations, events):
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(durations, dtype=np.float64)
    e = np.asarray(events, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != t.size or t.size != e.size:
        raise FitError(f"inconsistent data shapes: X {X.shape}, t {t.shape}, e {e.shape}")
    if np.any(t <= 0):
        raise FitError("durations must be positive")
    return X, t, e


def score_batch(model, X: np.ndarray, durations, events) -> SurvivalBatch:
    """Wrap a fitted model's ranking scores for C-index evaluation."""
    phi = np.asarray(model.ranking_scores(X), dtype=np.float64)
    if phi.shape[0] != X.shape[0]:
        raise SurvivalError("model returned wrong number of scores")
    return SurvivalBatch(phi=phi, durations=durations, events=events)


MODEL_KINDS = ("weibull", "cph_l", "cph_g", "cph_mm", "rnn_s")


def model_to_store(model) -> tuple[ad.ParamStore, str]:
    store = ad.ParamStore()
    if isinstance(model, WeibullPH):
        store.add("gamma", [model.gamma])
        store.add("beta0", [model.beta0])
        store.add("beta", model.beta)
        return store, "weibull"
    if isinstance(model, CoxLinear):
        store.add("beta", model.beta)
        return store, "cph_l"
    if isinstance(model, CoxNonlinear):
        for name in model.store.names():
            store.add(name, model.store[name])
        return store, "cph_g"
    if isinstance(model, CoxMixture):
        store.add("incidence0", [model.incidence0])
        store.add("incidence", model.incidence)
        store.add("gamma", [model.susceptible.gamma])
        store.add("beta0", [model.susceptible.beta0])
        store.add("beta", model.susceptible.beta)
        return store, "cph_mm"
    raise TypeError(f"unknown model {type(model).__name__}")


def model_from_store(store: ad.ParamStore, kind: str):
    if kind == "weibull":
        return WeibullPH(gamma=float(store["gamma"][0]),
                         beta0=float(store["beta0"][0]), beta=store["beta"])
    if kind == "cph_l":
        return CoxLinear(beta=store["beta"])
    if kind == "cph_g":
        return CoxNonlinear(store=store, hidden=store["w1"].shape[1])
    if kind == "cph_mm":
        return CoxMixture(
            incidence0=float(store["incidence0"][0]),
            incidence=store["incidence"],
            susceptible=WeibullPH(gamma=float(store["gamma"][0]),
                                  beta0=float(store["beta0"][0]),
                                  beta=store["beta"]))
    raise ValueError(f"unknown model kind {kind!r}")
