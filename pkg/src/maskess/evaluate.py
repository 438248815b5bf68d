"""Desk-scale stand-ins for FID, IS and CAS, plus exact divergences.

Absolute values are not comparable with numbers computed from a pretrained
FCN; only orderings across samplers on the same data mean anything.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from .tokens import UsageError

FEATURE_NAMES = ("mean", "std", "lag1_autocorr", "mean_crossing_rate", "low_band_energy")


def feature_vector(series) -> np.ndarray:
    """Five summary statistics of one series, in ``FEATURE_NAMES`` order."""
    x = np.asarray(series, dtype=float)
    mu, sd = x.mean(), x.std()
    centred = x - mu
    denom = np.dot(centred, centred)
    if len(x) < 2 or denom < 1e-24:
        return np.array([mu, sd, 0.0, 0.0, 0.0])
    acf = np.dot(centred[:-1], centred[1:]) / denom
    signs = np.sign(centred)
    signs = signs[signs != 0]
    crossings = np.count_nonzero(signs[1:] != signs[:-1]) / len(x)
    power = np.abs(np.fft.rfft(centred))[1:] ** 2
    low = power[: (len(power) + 1) // 2].sum() / power.sum() if power.sum() > 0 else 0.0
    return np.array([mu, sd, acf, crossings, low])


def features(series_list) -> np.ndarray:
    return np.array([feature_vector(x) for x in series_list]).reshape(-1, len(FEATURE_NAMES))


def tv_distance(P, Q) -> float:
    P, Q = np.asarray(P, dtype=float), np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise UsageError(f"distribution shapes differ: {P.shape} vs {Q.shape}")
    return float(0.5 * np.abs(P - Q).sum())


def kl_divergence(P, Q) -> float:
    """KL(P || Q); infinite when P puts mass where Q has none."""
    P, Q = np.asarray(P, dtype=float), np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise UsageError(f"distribution shapes differ: {P.shape} vs {Q.shape}")
    support = P > 0
    if np.any(Q[support] <= 0):
        return float("inf")
    return float(np.sum(P[support] * np.log(P[support] / Q[support])))


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((M + M.T) / 2)
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def frechet_feature_distance(A, B, eps: float = 1e-6) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`` between feature sets."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    A = A[:, None] if A.ndim == 1 else A
    B = B[:, None] if B.ndim == 1 else B
    if len(A) < 2 or len(B) < 2:
        raise UsageError("Frechet distance needs at least 2 vectors per set")
    if A.shape[1] != B.shape[1]:
        raise UsageError("feature dimensions differ")
    d = A.shape[1]
    reg = eps * np.eye(d)
    Sa = np.atleast_2d(np.cov(A, rowvar=False)) + reg
    Sb = np.atleast_2d(np.cov(B, rowvar=False)) + reg
    root_a = _psd_sqrt(Sa)
    # the symmetrised product S_a^(1/2) S_b S_a^(1/2) has the same trace-root as S_a S_b
    inner = np.linalg.eigvalsh(root_a @ Sb @ root_a)
    tr_root = np.sqrt(np.clip(inner, 0, None)).sum()
    diff = A.mean(axis=0) - B.mean(axis=0)
    value = diff @ diff + np.trace(Sa) + np.trace(Sb) - 2.0 * tr_root
    return float(max(value, 0.0))


class NotFittedError(RuntimeError):
    pass


class LogisticClassifier:
    """Multinomial logistic regression on standardised features, L2-penalised."""

    def __init__(self, l2: float = 1e-3, max_iter: int = 500):
        self.l2 = l2
        self.max_iter = max_iter
        self.classes_ = None

    def fit(self, X, y) -> "LogisticClassifier":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            self.classes_ = None
            raise UsageError("classifier needs at least two classes")
        self._mu = X.mean(axis=0)
        self._sd = np.where(X.std(axis=0) > 1e-12, X.std(axis=0), 1.0)
        Z = np.hstack([(X - self._mu) / self._sd, np.ones((len(X), 1))])
        C = len(self.classes_)
        onehot = np.eye(C)[yi]
        n = len(X)

        def loss(w):
            W = w.reshape(Z.shape[1], C)
            logp = log_softmax(Z @ W, axis=1)
            grad = Z.T @ (np.exp(logp) - onehot) / n + self.l2 * W
            return -np.sum(onehot * logp) / n + 0.5 * self.l2 * np.sum(W * W), grad.ravel()

        res = minimize(
            loss, np.zeros(Z.shape[1] * C), jac=True, method="L-BFGS-B",
            options={"maxiter": self.max_iter},
        )
        self._W = res.x.reshape(Z.shape[1], C)
        return self

    def predict_proba(self, X) -> np.ndarray:
        if self.classes_ is None:
            raise NotFittedError("classifier has not been fitted")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = np.hstack([(X - self._mu) / self._sd, np.ones((len(X), 1))])
        return softmax(Z @ self._W, axis=1)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def inception_score(probs) -> float:
    """``exp(E_x KL(p(y|x) || p(y)))`` from a matrix of class posteriors."""
    probs = np.asarray(probs, dtype=float)
    marginal = probs.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * (np.log(probs) - np.log(marginal)), 0.0)
    return float(np.exp(terms.sum(axis=1).mean()))


def is_analogue(gen, clf: LogisticClassifier) -> float:
    if getattr(clf, "classes_", None) is None:
        raise NotFittedError("IS analogue needs a classifier trained on real data")
    return inception_score(clf.predict_proba(features(gen)))


def cas_analogue(gen, real_test) -> float:
    """Train on generated ``(label, series)`` pairs, report accuracy on real ones."""
    gen_labels = np.array([lab for lab, _ in gen])
    if len(np.unique(gen_labels)) < 2:
        raise UsageError("CAS needs at least two classes in the generated set")
    clf = LogisticClassifier().fit(features([x for _, x in gen]), gen_labels)
    real_labels = np.array([lab for lab, _ in real_test])
    pred = clf.predict(features([x for _, x in real_test]))
    return float(np.mean(pred == real_labels))


@dataclass
class EvalReport:
    tv: float | None = None
    kl: float | None = None
    frechet: float | None = None
    is_score: float | None = None
    cas: float | None = None
    n_generated: int = 0
    n_real: int = 0

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, float) and not np.isfinite(v):
                out[k] = None
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def csv_header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def csv_row(self) -> list[str]:
        d = self.to_dict()
        return ["" if d[k] is None else repr(d[k]) for k in self.csv_header()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        w.writerow(self.csv_row())
        return buf.getvalue()


def evaluate_features(gen, real) -> EvalReport:
    """Feature-mode report; ``gen`` and ``real`` are lists of ``(label, series)``.

    The IS analogue uses a classifier trained on ``real``; CAS is reported only
    when the generated set carries at least two labels.
    """
    gen_x = [x for _, x in gen]
    real_x = [x for _, x in real]
    report = EvalReport(n_generated=len(gen), n_real=len(real))
    if len(gen_x) >= 2 and len(real_x) >= 2:
        report.frechet = frechet_feature_distance(features(gen_x), features(real_x))
    real_labels = [lab for lab, _ in real]
    if len(set(real_labels)) >= 2 and gen_x:
        clf = LogisticClassifier().fit(features(real_x), real_labels)
        report.is_score = is_analogue(gen_x, clf)
    if len({lab for lab, _ in gen}) >= 2:
        report.cas = cas_analogue(gen, real)
    return report


def evaluate_exact(gen_dist, truth_dist, n_generated: int) -> EvalReport:
    return EvalReport(
        tv=tv_distance(gen_dist, truth_dist),
        kl=kl_divergence(gen_dist, truth_dist),
        n_generated=n_generated,
        n_real=0,
    )
