"""LSTM-over-message-sequences survival model.

One LSTM cell walks each recipient's message sequence (oldest first,
front-padded slots skipped via the mask); a single linear head on the
hidden state is exponentiated into a per-message hazard ratio, so the
score is always positive. Training minimizes the Efron-approximated Cox
partial likelihood over the valid slots of each minibatch, with risk
sets formed inside the minibatch, using Adam.

The cell is a stock LSTM: input/forget/output gates plus a tanh cell
candidate, forget-gate bias started at 1. Hidden state for a message
depends only on that recipient's earlier messages; sequences never
interact inside a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .event_log import RecipientHistory
from .features import SequenceExample, dense_between, stack_sequences
from .survival import SurvivalBatch, c_index
from .virtual_time import one_hot


@dataclass(frozen=True)
class RnnConfig:
    input_dim: int = 108
    hidden: int = 32
    lr: float = 0.001
    batch_size: int = 32
    seq_len: int = 16
    epochs: int = 30
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 5


@dataclass
class TrainResult:
    loss_curve: list[float] = field(default_factory=list)
    skipped_batches: int = 0
    best_epoch: int = -1
    val_cindex: list[float] = field(default_factory=list)


class RnnSurvival:
    """LSTM + exponential-head hazard-ratio model."""

    def __init__(self, config: RnnConfig, scheme_sha: str = ""):
        self.config = config
        self.scheme_sha = scheme_sha
        self.store = ad.ParamStore()
        rng = np.random.default_rng(config.seed)
        d, h = config.input_dim, config.hidden
        self.store.add("lstm_W", ad.init_uniform(rng, (d, 4 * h), d))
        self.store.add("lstm_U", ad.init_uniform(rng, (h, 4 * h), h))
        b = np.zeros((1, 4 * h))
        b[0, h:2 * h] = 1.0  # forget gate starts open
        self.store.add("lstm_b", b)
        self.store.add("head_w", ad.init_uniform(rng, (h, 1), h))
        self.store.add("head_b", np.zeros((1, 1)))

    # -- forward ----------------------------------------------------------

    def _steps(self, X: np.ndarray, mask: np.ndarray, params) -> ad.Var:
        """eta (B,L) Var; masked slots keep the previous state untouched."""
        B, L, _ = X.shape
        h_dim = self.config.hidden
        h = ad.const(np.zeros((B, h_dim)))
        c = ad.const(np.zeros((B, h_dim)))
        etas = []
        for t in range(L):
            x_t = ad.const(X[:, t, :])
            z = ad.add(ad.add(ad.matmul(x_t, params["lstm_W"]),
                              ad.matmul(h, params["lstm_U"])),
                       params["lstm_b"])
            gi = ad.sigmoid(ad.col_slice(z, 0, h_dim))
            gf = ad.sigmoid(ad.col_slice(z, h_dim, 2 * h_dim))
            gc = ad.tanh(ad.col_slice(z, 2 * h_dim, 3 * h_dim))
            go = ad.sigmoid(ad.col_slice(z, 3 * h_dim, 4 * h_dim))
            c_new = ad.add(ad.mul(gf, c), ad.mul(gi, gc))
            h_new = ad.mul(go, ad.tanh(c_new))
            m = ad.const(mask[:, t:t + 1].astype(np.float64))
            keep = ad.const(1.0 - mask[:, t:t + 1].astype(np.float64))
            c = ad.add(ad.mul(m, c_new), ad.mul(keep, c))
            h = ad.add(ad.mul(m, h_new), ad.mul(keep, h))
            etas.append(ad.add(ad.matmul(h, params["head_w"]), params["head_b"]))
        return ad.concat_cols(etas)

    def _graph(self, inputs, params) -> ad.Var:
        X, mask, dur, ev = inputs
        eta = self._steps(X, mask, params)
        return ad.efron_loss(eta, mask, dur[mask], ev[mask])

    def forward_eta(self, X: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Log hazard ratios, (B,L); pad slots are meaningless."""
        params = {n: ad.const(self.store[n]) for n in self.store.names()}
        return self._steps(X, mask, params).value

    def forward_phi(self, X: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return np.exp(self.forward_eta(X, mask))

    # -- training ---------------------------------------------------------

    def train(self, sequences: list[SequenceExample],
              epochs: int | None = None, seed: int | None = None,
              early_stop: bool | None = None) -> TrainResult:
        cfg = self.config
        epochs = cfg.epochs if epochs is None else epochs
        seed = cfg.seed if seed is None else seed
        if early_stop is None:
            early_stop = cfg.val_fraction > 0 and len(sequences) >= 20
        rng = np.random.default_rng(seed)

        idx = rng.permutation(len(sequences))
        n_val = int(len(sequences) * cfg.val_fraction) if early_stop else 0
        val = [sequences[i] for i in idx[:n_val]]
        train = [sequences[i] for i in idx[n_val:]]
        if not train:
            raise ValueError("no training sequences")
        X, mask, dur, ev = stack_sequences(train)

        result = TrainResult()
        best_val = -np.inf
        best_params = None
        stale = 0
        for epoch in range(epochs):
            order = rng.permutation(len(train))
            losses = []
            for lo in range(0, len(train), cfg.batch_size):
                sel = order[lo:lo + cfg.batch_size]
                bm = mask[sel]
                if ev[sel][bm].sum() == 0:
                    result.skipped_batches += 1
                    continue
                try:
                    loss, grads = ad.forward_backward(
                        self._graph, (X[sel], bm, dur[sel], ev[sel]), self.store)
                except ad.GraphError as err:
                    raise ad.GraphError(
                        f"training diverged at epoch {epoch}, batch {lo // cfg.batch_size}: {err}"
                    ) from err
                ad.adam_step(self.store, grads, lr=cfg.lr)
                losses.append(loss / bm.sum())
            result.loss_curve.append(float(np.mean(losses)) if losses else np.nan)

            if early_stop and val:
                score = c_index(self.score_sequences(val))
                result.val_cindex.append(score)
                if score > best_val:
                    best_val = score
                    best_params = {n: self.store[n].copy() for n in self.store.names()}
                    result.best_epoch = epoch
                    stale = 0
                else:
                    stale += 1
                    if stale > cfg.patience:
                        break
        if best_params is not None:
            for n, arr in best_params.items():
                self.store.params[n][...] = arr
        return result

    # -- scoring ----------------------------------------------------------

    def score_sequences(self, sequences: list[SequenceExample],
                        chunk: int = 256) -> SurvivalBatch:
        """Hazard ratio for every valid slot, as one survival batch."""
        phis, durs, evs = [], [], []
        for lo in range(0, len(sequences), chunk):
            part = sequences[lo:lo + chunk]
            X, mask, dur, ev = stack_sequences(part)
            phi = self.forward_phi(X, mask)
            phis.append(phi[mask])
            durs.append(dur[mask])
            evs.append(ev[mask])
        return SurvivalBatch(phi=np.concatenate(phis),
                             durations=np.concatenate(durs),
                             events=np.concatenate(evs))

    def score_next(self, history: RecipientHistory, extractor,
                   bins: int | list[int] | None = None,
                   next_send_ts: int | None = None) -> np.ndarray:
        """Hazard ratios for a hypothetical next message, one per bin.

        The dense features of the hypothetical step come from the real
        history at a reference send time (last send plus the recipient's
        mean gap unless given); only the send-bin one-hot varies across
        candidates, so the scores are directly comparable.
        """
        scheme = extractor.scheme
        if self.scheme_sha and scheme.sha256() != self.scheme_sha:
            raise ValueError("bin scheme does not match the one the model "
                             "was trained against")
        if bins is None:
            bins = list(range(scheme.bin_count))
        elif isinstance(bins, int):
            bins = [bins]
        for b in bins:
            if not 0 <= b < scheme.bin_count:
                raise ValueError(f"bin {b} out of range")

        obs = extractor.extract(history)
        if next_send_ts is None:
            next_send_ts = _reference_next_send(history)
        prev = history.messages[-1] if history.messages else None
        dense = dense_between(prev, next_send_ts, history.purchases,
                              extractor.mass_threshold)

        params = {n: ad.const(self.store[n]) for n in self.store.names()}
        h_dim = self.config.hidden
        if obs:
            P = len(obs)
            Xp = np.stack([o.features.vector() for o in obs])[None, :, :]
            mask_p = np.ones((1, P), dtype=bool)
            h_val, c_val = self._final_state(Xp, mask_p, params)
        else:
            h_val = np.zeros((1, h_dim))
            c_val = np.zeros((1, h_dim))

        n = len(bins)
        cand = np.stack([np.concatenate([dense, one_hot(b, scheme.bin_count)])
                         for b in bins])
        h = ad.const(np.repeat(h_val, n, axis=0))
        c = ad.const(np.repeat(c_val, n, axis=0))
        eta = self._one_step(ad.const(cand), h, c, params)[0]
        return np.exp(eta.value.ravel())

    def _one_step(self, x, h, c, params):
        h_dim = self.config.hidden
        z = ad.add(ad.add(ad.matmul(x, params["lstm_W"]),
                          ad.matmul(h, params["lstm_U"])), params["lstm_b"])
        gi = ad.sigmoid(ad.col_slice(z, 0, h_dim))
        gf = ad.sigmoid(ad.col_slice(z, h_dim, 2 * h_dim))
        gc = ad.tanh(ad.col_slice(z, 2 * h_dim, 3 * h_dim))
        go = ad.sigmoid(ad.col_slice(z, 3 * h_dim, 4 * h_dim))
        c_new = ad.add(ad.mul(gf, c), ad.mul(gi, gc))
        h_new = ad.mul(go, ad.tanh(c_new))
        eta = ad.add(ad.matmul(h_new, params["head_w"]), params["head_b"])
        return eta, h_new, c_new

    def _final_state(self, X, mask, params):
        B, L, _ = X.shape
        h_dim = self.config.hidden
        h = np.zeros((B, h_dim))
        c = np.zeros((B, h_dim))
        for t in range(L):
            _, h_new, c_new = self._one_step(ad.const(X[:, t, :]),
                                             ad.const(h), ad.const(c), params)
            m = mask[:, t:t + 1]
            h = np.where(m, h_new.value, h)
            c = np.where(m, c_new.value, c)
        return h, c

    # -- persistence ------------------------------------------------------

    def to_json(self) -> str:
        cfg = self.config
        meta = {"input_dim": cfg.input_dim, "hidden": cfg.hidden,
                "lr": cfg.lr, "batch_size": cfg.batch_size,
                "seq_len": cfg.seq_len, "seed": cfg.seed,
                "scheme_sha256": self.scheme_sha}
        return self.store.to_json("rnn_s", meta)

    @classmethod
    def from_store(cls, store: ad.ParamStore, meta: dict) -> "RnnSurvival":
        cfg = RnnConfig(input_dim=int(meta["input_dim"]),
                        hidden=int(meta["hidden"]),
                        lr=float(meta.get("lr", 0.001)),
                        batch_size=int(meta.get("batch_size", 32)),
                        seq_len=int(meta.get("seq_len", 16)),
                        seed=int(meta.get("seed", 0)))
        model = cls(cfg, scheme_sha=meta.get("scheme_sha256", ""))
        for name in store.names():
            model.store.params[name][...] = store[name]
        return model


def _reference_next_send(history: RecipientHistory) -> int:
    msgs = history.messages
    if len(msgs) >= 2:
        gap = (msgs[-1].send_time - msgs[0].send_time) // (len(msgs) - 1)
        gap = max(gap, 3600)
    else:
        gap = 7 * 86400
    base = msgs[-1].send_time if msgs else 0
    return base + gap
