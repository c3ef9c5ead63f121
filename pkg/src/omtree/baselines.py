"""Comparison estimators: 1-NN analogy (CBR), forward stepwise regression
on log-transformed variables (SWR), and a small from-scratch MLP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Dataset, TableEncoder


class DivergenceError(RuntimeError):
    """MLP training produced a non-finite loss."""


# ---------------------------------------------------------------------------
# Case-based reasoning: single nearest neighbour on normalized features.


class CbrModel:
    """Effort of the closest training project under Euclidean distance.

    Numeric features are min-max normalized with training bounds;
    categorical features contribute a 0/1 mismatch to the squared
    distance.  Distance ties resolve to the lowest training row index.
    """

    def __init__(self, train: Dataset):
        self.encoder = TableEncoder(train)
        x_num, x_cat = self.encoder.encode(train)
        self.lo = x_num.min(axis=0) if x_num.size else np.zeros(x_num.shape[1])
        self.hi = x_num.max(axis=0) if x_num.size else np.zeros(x_num.shape[1])
        self.x_num = self._normalize(x_num)
        self.x_cat = x_cat
        self.effort = train.effort.copy()

    def _normalize(self, x_num: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        out = np.zeros_like(x_num, dtype=float)
        nz = span > 0
        out[:, nz] = (x_num[:, nz] - self.lo[nz]) / span[nz]
        return out

    def _predict_encoded(self, q_num: np.ndarray, q_cat: np.ndarray) -> float:
        d2 = np.zeros(len(self.effort))
        if q_num.size:
            d2 += ((self.x_num - q_num) ** 2).sum(axis=1)
        if q_cat.size:
            d2 += (self.x_cat != q_cat).sum(axis=1)
        return float(self.effort[int(np.argmin(d2))])  # argmin: lowest index on ties

    def predict(self, record: dict) -> float:
        q_num, q_cat = self.encoder.encode_record(record)
        return self._predict_encoded(self._normalize(q_num[None, :])[0], q_cat)

    def predict_dataset(self, d: Dataset) -> np.ndarray:
        x_num, x_cat = self.encoder.encode(d)
        x_num = self._normalize(x_num)
        return np.array(
            [self._predict_encoded(x_num[i], x_cat[i]) for i in range(d.n_rows)]
        )


def cbr_fit_predict(train: Dataset, record: dict) -> float:
    return CbrModel(train).predict(record)


# ---------------------------------------------------------------------------
# Stepwise regression on ln(x+1)-transformed numeric variables.

ENTRY_P = 0.05
REMOVAL_P = 0.10


@dataclass(frozen=True)
class SwrModel:
    selected: tuple[str, ...]
    coefficients: np.ndarray  # on log scale, aligned with selected
    intercept: float
    encoder: TableEncoder
    entry_p: float = ENTRY_P
    removal_p: float = REMOVAL_P

    def _linear(self, x_log: np.ndarray) -> np.ndarray:
        cols = [self.encoder.numeric_names.index(n) for n in self.selected]
        z = x_log[:, cols] @ self.coefficients + self.intercept if cols else np.full(
            len(x_log), self.intercept
        )
        return z

    def predict_dataset(self, d: Dataset) -> np.ndarray:
        x_num, _ = self.encoder.encode(d)
        z = self._linear(np.log1p(x_num))
        return np.expm1(np.clip(z, None, 30.0))  # keep back-transform finite

    def predict(self, record: dict) -> float:
        q_num, _ = self.encoder.encode_record(record)
        z = self._linear(np.log1p(q_num[None, :]))
        return float(np.expm1(np.clip(z, None, 30.0))[0])


def _rss(x: np.ndarray, y: np.ndarray, cols: list[int]) -> tuple[float, np.ndarray]:
    a = np.column_stack([x[:, cols], np.ones(len(y))]) if cols else np.ones((len(y), 1))
    w, *_ = np.linalg.lstsq(a, y, rcond=None)
    r = y - a @ w
    return float(r @ r), w

def _partial_f_p(rss_small: float, rss_big: float, n: int, p_big: int) -> float:
    """p-value for adding one term: F = (drop in RSS) / (RSS_big / (n - p_big))."""
    dof = n - p_big
    if dof < 1 or rss_big <= 0:
        return 0.0 if rss_big < rss_small else 1.0
    f = (rss_small - rss_big) / (rss_big / dof)
    if f <= 0:
        return 1.0
    return float(stats.f.sf(f, 1, dof))


def swr_fit(train: Dataset) -> SwrModel:
    """Forward stepwise selection with backward checks, on the log scale.

    Adds the feature with the smallest partial-F p-value while it is below
    0.05, then removes any selected feature whose p-value has risen above
    0.10, and repeats to a fixed point.  Categorical features and
    zero-variance columns never enter.  If nothing enters, the model is
    intercept-only (a geometric-mean predictor on the raw scale).
    """
    encoder = TableEncoder(train)
    x_num, _ = encoder.encode(train)
    names = encoder.numeric_names
    x = np.log1p(x_num)
    y = np.log1p(train.effort)
    n = len(y)

    usable = [j for j in range(x.shape[1]) if np.ptp(x[:, j]) > 0]
    tss = float(((y - y.mean()) ** 2).sum())
    selected: list[int] = []
    for _ in range(2 * len(usable) + 1):
        changed = False
        # forward step; skip once the fit is already essentially perfect
        rss_cur, _ = _rss(x, y, selected)
        best = None
        for j in usable:
            if j in selected or rss_cur <= 1e-10 * max(tss, 1e-300):
                continue
            p_big = len(selected) + 2  # candidate features + new one + intercept
            if n - p_big < 2:
                continue
            rss_new, _ = _rss(x, y, selected + [j])
            p = _partial_f_p(rss_cur, rss_new, n, p_big)
            if p < ENTRY_P and (best is None or p < best[0]):
                best = (p, j)
        if best is not None:
            selected.append(best[1])
            changed = True
        # backward step
        while selected:
            worst = None
            rss_full, _ = _rss(x, y, selected)
            for j in selected:
                rss_wo, _ = _rss(x, y, [s for s in selected if s != j])
                p = _partial_f_p(rss_wo, rss_full, n, len(selected) + 1)
                if worst is None or p > worst[0]:
                    worst = (p, j)
            if worst is not None and worst[0] > REMOVAL_P:
                selected.remove(worst[1])
                changed = True
            else:
                break
        if not changed:
            break

    _, w = _rss(x, y, selected)
    return SwrModel(
        selected=tuple(names[j] for j in selected),
        coefficients=np.asarray(w[:-1], dtype=float),
        intercept=float(w[-1]),
        encoder=encoder,
    )


# ---------------------------------------------------------------------------
# Multilayer perceptron with batch gradient descent and momentum.


@dataclass(frozen=True)
class MlpConfig:
    hidden: int | None = None  # default max(2, ceil(inputs / 2))
    learning_rate: float = 0.1
    momentum: float = 0.8
    epochs: int = 2000


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


class MlpModel:
    """One-hidden-layer sigmoid network trained on [0,1]-normalized data.

    Categorical features are one-hot encoded; inputs and the target are
    min-max normalized with training bounds, and predictions are mapped
    back to the raw effort scale.
    """

    def __init__(self, train: Dataset, config: MlpConfig = MlpConfig(), seed: int = 0):
        self.config = config
        self.encoder = TableEncoder(train)
        x = self._inputs_raw(train)
        self.in_lo = x.min(axis=0)
        self.in_hi = x.max(axis=0)
        y = train.effort
        self.out_lo = float(y.min())
        self.out_hi = float(y.max())
        xn = self._norm_inputs(x)
        yn = self._norm_target(y)

        n_in = x.shape[1]
        n_hidden = config.hidden or max(2, math.ceil(n_in / 2))
        rng = np.random.default_rng(seed)
        self.w1 = rng.uniform(-0.5, 0.5, size=(n_in, n_hidden))
        self.b1 = rng.uniform(-0.5, 0.5, size=n_hidden)
        self.w2 = rng.uniform(-0.5, 0.5, size=(n_hidden, 1))
        self.b2 = rng.uniform(-0.5, 0.5, size=1)
        self._train(xn, yn[:, None])

    def _inputs_raw(self, d: Dataset) -> np.ndarray:
        x_num, x_cat = self.encoder.encode(d)
        pieces = [x_num]
        for j, name in enumerate(self.encoder.categorical_names):
            n_levels = len(self.encoder.level_codes[name])
            onehot = np.zeros((d.n_rows, n_levels))
            codes = x_cat[:, j]
            seen = codes >= 0
            onehot[np.flatnonzero(seen), codes[seen]] = 1.0
            pieces.append(onehot)
        return np.hstack(pieces)

    def _norm_inputs(self, x: np.ndarray) -> np.ndarray:
        span = self.in_hi - self.in_lo
        out = np.zeros_like(x, dtype=float)
        nz = span > 0
        out[:, nz] = (x[:, nz] - self.in_lo[nz]) / span[nz]
        return out

    def _norm_target(self, y: np.ndarray) -> np.ndarray:
        span = self.out_hi - self.out_lo
        return (y - self.out_lo) / span if span > 0 else np.zeros_like(y, dtype=float)

    def _forward(self, x: np.ndarray):
        hidden = _sigmoid(x @ self.w1 + self.b1)
        out = _sigmoid(hidden @ self.w2 + self.b2)
        return hidden, out

    def loss_and_gradients(self, x: np.ndarray, t: np.ndarray):
        """Mean squared error and its gradients for every weight array."""
        m = len(x)
        hidden, out = self._forward(x)
        err = out - t
        loss = float((err**2).mean())
        d_out = 2.0 * err * out * (1 - out) / m
        g_w2 = hidden.T @ d_out
        g_b2 = d_out.sum(axis=0)
        d_hidden = (d_out @ self.w2.T) * hidden * (1 - hidden)
        g_w1 = x.T @ d_hidden
        g_b1 = d_hidden.sum(axis=0)
        return loss, (g_w1, g_b1, g_w2, g_b2)

    def _train(self, x: np.ndarray, t: np.ndarray) -> None:
        cfg = self.config
        vel = [np.zeros_like(p) for p in (self.w1, self.b1, self.w2, self.b2)]
        for _ in range(cfg.epochs):
            loss, grads = self.loss_and_gradients(x, t)
            if not math.isfinite(loss):
                raise DivergenceError(f"training diverged (loss={loss})")
            params = (self.w1, self.b1, self.w2, self.b2)
            for p, v, g in zip(params, vel, grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                p += v

    def predict_dataset(self, d: Dataset) -> np.ndarray:
        xn = self._norm_inputs(self._inputs_raw(d))
        _, out = self._forward(xn)
        return out[:, 0] * (self.out_hi - self.out_lo) + self.out_lo

    def predict(self, record: dict) -> float:
        q_num, q_cat = self.encoder.encode_record(record)
        pieces = [q_num]
        for j, name in enumerate(self.encoder.categorical_names):
            onehot = np.zeros(len(self.encoder.level_codes[name]))
            if q_cat[j] >= 0:
                onehot[q_cat[j]] = 1.0
            pieces.append(onehot)
        xn = self._norm_inputs(np.concatenate(pieces)[None, :])
        _, out = self._forward(xn)
        return float(out[0, 0] * (self.out_hi - self.out_lo) + self.out_lo)


def mlp_fit(train: Dataset, config: MlpConfig = MlpConfig(), seed: int = 0) -> MlpModel:
    return MlpModel(train, config, seed)


def mlp_predict(model: MlpModel, record: dict) -> float:
    return model.predict(record)
