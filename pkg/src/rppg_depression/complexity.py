"""Statistical, fractal and entropy features of 1-D signal windows.

Every kernel returns a finite value. Degenerate inputs (constant windows,
no template matches) produce a documented fallback with ``quality=False``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import signal

from .errors import TooShort

HIGUCHI_KMAX = 10
DFA_MIN_LENGTH = 64
# 2 s sub-windows at video frame rates are shorter than DFA_MIN_LENGTH
DFA_SUBWINDOW_MIN_LENGTH = 40
DFA_MIN_SCALES = 6
DFA_SCALE_CANDIDATES = 12
PERM_ORDER = 3
PERM_DELAY = 1
ENTROPY_M = 2
ENTROPY_R = 0.2
SPECTRAL_NPERSEG = 256
SUBWINDOW_S = 2.0

STATISTICAL_NAMES = ("sig_mean", "sig_min", "sig_max", "sig_std", "sig_range", "sig_p10", "sig_p25", "sig_p75", "sig_p90")
FRACTAL_NAMES = ("katz_fd", "higuchi_fd", "dfa_alpha", "katz_fd_sub2s", "higuchi_fd_sub2s", "dfa_alpha_sub2s")
ENTROPY_NAMES = ("perm_entropy", "spectral_entropy", "app_entropy", "sample_entropy",
                 "hjorth_mobility", "hjorth_complexity", "zero_crossings")


class Scalar(NamedTuple):
    value: float
    quality: bool


@dataclass(frozen=True, eq=False)
class FeatureBlock:
    names: tuple
    values: np.ndarray
    quality: bool = True

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if len(self.names) != len(self.values) or len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique and match the values")

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))

    @classmethod
    def concat(cls, blocks) -> "FeatureBlock":
        names = tuple(n for b in blocks for n in b.names)
        values = np.concatenate([b.values for b in blocks])
        return cls(names, values, all(b.quality for b in blocks))


def _series(x, min_len: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if len(x) < min_len:
        raise TooShort(f"{what} needs at least {min_len} samples, got {len(x)}")
    return x


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.ptp(x) == 0)


def statistical_features(x) -> FeatureBlock:
    x = _series(x, 2, "statistical_features")
    lo, hi = float(x.min()), float(x.max())
    p10, p25, p75, p90 = np.percentile(x, [10, 25, 75, 90])
    return FeatureBlock(STATISTICAL_NAMES, [x.mean(), lo, hi, x.std(), hi - lo, p10, p25, p75, p90])


def katz_fd(x) -> Scalar:
    x = _series(x, 3, "katz_fd")
    steps = np.abs(np.diff(x))
    length = steps.sum()
    if length == 0:
        return Scalar(1.0, False)
    n = len(steps)
    d = np.max(np.abs(x[1:] - x[0]))
    ln = math.log10(n)
    return Scalar(float(ln / (ln + math.log10(d / length))), True)


def _slope(u: np.ndarray, v: np.ndarray) -> float:
    """Least-squares slope of v against u."""
    uc = u - u.mean()
    return float(uc @ (v - v.mean()) / (uc @ uc))


@lru_cache(maxsize=32)
def _higuchi_plan(n: int, k_max: int):
    """Index pairs and per-(k, m) group weights for a series of length n."""
    lo, hi, grp, weight, owner = [], [], [], [], []
    base = 0
    for k in range(1, k_max + 1):
        j = np.arange(n - k)
        lo.append(j)
        hi.append(j + k)
        grp.append(base + j % k)
        count = (n - 1 - np.arange(k)) // k
        ok = count >= 1
        # curve length of offset m: sum * (n - 1) / (count * k) / k, then a mean over m
        w = np.zeros(k)
        w[ok] = (n - 1) / (count[ok] * k) / k / ok.sum()
        weight.append(w)
        owner.append(np.full(k, k - 1))
        base += k
    cat = np.concatenate
    return cat(lo), cat(hi), cat(grp), cat(weight), cat(owner), base


def higuchi_fd(x, k_max: int = HIGUCHI_KMAX) -> Scalar:
    x = _series(x, 4 * k_max, "higuchi_fd")
    if _is_constant(x):
        return Scalar(0.0, False)
    lo, hi, grp, weight, owner, n_groups = _higuchi_plan(len(x), k_max)
    # |x[j + k] - x[j]| summed per offset m = j mod k
    sums = np.bincount(grp, weights=np.abs(x[hi] - x[lo]), minlength=n_groups)
    lk = np.bincount(owner, weights=sums * weight, minlength=k_max)
    if np.any(lk <= 0):
        return Scalar(0.0, False)
    ks = np.arange(1, k_max + 1)
    return Scalar(-_slope(np.log(ks), np.log(lk)), True)


def dfa_scales(n: int) -> np.ndarray:
    top = n / 4.0
    if top < 4:
        return np.array([], dtype=int)
    cand = np.floor(np.logspace(np.log10(4), np.log10(top), DFA_SCALE_CANDIDATES) + 1e-9).astype(int)
    return np.unique(cand)


@lru_cache(maxsize=32)
def _dfa_plan(n: int) -> tuple:
    plan = []
    for s in dfa_scales(n):
        tc = np.arange(s, dtype=float) - (s - 1) / 2.0
        plan.append((int(s), n // s * s, tc, float(tc @ tc)))
    return tuple(plan)


def dfa_alpha(x, min_length: int = DFA_MIN_LENGTH) -> Scalar:
    """First-order DFA exponent over log-spaced box sizes 4..n/4."""
    x = _series(x, min_length, "dfa_alpha")
    scales = dfa_scales(len(x))
    if len(scales) < DFA_MIN_SCALES:
        raise TooShort(f"dfa_alpha needs {DFA_MIN_SCALES} box sizes, got {len(scales)}")
    if _is_constant(x):
        return Scalar(0.0, False)
    y = np.cumsum(x - x.mean())
    fluct = np.empty(len(scales))
    for i, (s, used, tc, tss) in enumerate(_dfa_plan(len(x))):
        boxes = y[:used].reshape(-1, s)
        bc = boxes - (boxes.sum(axis=1) / s)[:, None]
        # residual power after the per-box linear fit
        proj = bc @ tc
        rss = np.einsum("ij,ij->", bc, bc) - proj @ proj / tss
        fluct[i] = math.sqrt(max(rss, 0.0) / used)
    if np.any(fluct <= 0):
        return Scalar(0.0, False)
    return Scalar(_slope(np.log(scales), np.log(fluct)), True)


def fractal_block(x, fs: float) -> FeatureBlock:
    x = np.asarray(x, dtype=float).ravel()
    sub = int(round(SUBWINDOW_S * fs))
    if sub < 1 or len(x) // sub < 2:
        raise TooShort("fractal_block needs a window of at least two 2 s sub-windows")
    kernels = (
        (katz_fd, {}, 1.0),
        (higuchi_fd, {}, 0.0),
        (dfa_alpha, {}, 0.0),
    )
    quality = True
    full = []
    for fn, kw, _ in kernels:
        v = fn(x, **kw)
        full.append(v.value)
        quality &= v.quality
    means = []
    for fn, kw, fallback in kernels:
        if fn is dfa_alpha:
            kw = {"min_length": DFA_SUBWINDOW_MIN_LENGTH}
        vals = []
        for j in range(len(x) // sub):
            try:
                v = fn(x[j * sub:(j + 1) * sub], **kw)
            except TooShort:
                quality = False
                continue
            vals.append(v.value)
            quality &= v.quality
        means.append(float(np.mean(vals)) if vals else fallback)
    return FeatureBlock(FRACTAL_NAMES, full + means, quality)


def perm_entropy(x, order: int = PERM_ORDER, delay: int = PERM_DELAY) -> float:
    """Normalised permutation entropy in [0, 1]."""
    x = _series(x, (order - 1) * delay + 1, "perm_entropy")
    n = len(x) - (order - 1) * delay
    emb = np.stack([x[i * delay: i * delay + n] for i in range(order)], axis=1)
    ranks = np.argsort(emb, axis=1, kind="stable")
    codes = ranks @ (order ** np.arange(order))
    _, counts = np.unique(codes, return_counts=True)
    p = counts / counts.sum()
    h = -np.sum(p * np.log2(p))
    return float(abs(h) / math.log2(math.factorial(order)))


def spectral_entropy(x, fs: float) -> Scalar:
    x = _series(x, 2, "spectral_entropy")
    _, psd = signal.welch(x, fs=fs, nperseg=min(len(x), SPECTRAL_NPERSEG))
    total = psd.sum()
    if total <= 0 or len(psd) < 2:
        return Scalar(0.0, False)
    p = psd / total
    nz = p[p > 0]
    return Scalar(float(-np.sum(nz * np.log2(nz)) / math.log2(len(psd))), True)


def _match_counts(x: np.ndarray, m: int, r: float, block: int = 512) -> tuple:
    """Chebyshev match counts (self included) for templates of size m and m + 1.

    Returns ``(cm, cm_head, cm1)``: size-m counts over all ``n - m + 1``
    templates, size-m counts restricted to the first ``n - m`` templates,
    and size-(m + 1) counts over the ``n - m`` longer templates.
    """
    n = len(x)
    length, head = n - m + 1, n - m
    cm = np.zeros(length, dtype=np.int64)
    cm_head = np.zeros(head, dtype=np.int64)
    cm1 = np.zeros(head, dtype=np.int64)
    cols = [x[k: k + length] for k in range(m)]
    last = x[m: m + head]
    for start in range(0, length, block):
        stop = min(start + block, length)
        dist = np.zeros((stop - start, length))
        for col in cols:
            np.maximum(dist, np.abs(col[start:stop, None] - col[None, :]), out=dist)
        cm[start:stop] = np.count_nonzero(dist <= r, axis=1)
        rows = min(stop, head) - start
        if rows > 0:
            sub = dist[:rows, :head]
            cm_head[start:start + rows] = np.count_nonzero(sub <= r, axis=1)
            wide = np.maximum(sub, np.abs(last[start:start + rows, None] - last[None, :]))
            cm1[start:start + rows] = np.count_nonzero(wide <= r, axis=1)
    return cm, cm_head, cm1


def _entropy_counts(x, m: int, r_factor: float, name: str):
    x = _series(x, m + 2, name)
    sd = x.std()
    if sd == 0:
        return None
    return _match_counts(x, m, r_factor * sd)


def _apen(counts) -> Scalar:
    cm, _, cm1 = counts
    return Scalar(float(np.mean(np.log(cm / len(cm))) - np.mean(np.log(cm1 / len(cm1)))), True)


def _sampen(counts) -> Scalar:
    _, cm_head, cm1 = counts
    length = len(cm1)
    b = (cm_head.sum() - length) / 2
    a = (cm1.sum() - length) / 2
    if a == 0 or b == 0:
        return Scalar(0.0, False)
    return Scalar(float(-math.log(a / b)), True)


def app_entropy(x, m: int = ENTROPY_M, r_factor: float = ENTROPY_R) -> Scalar:
    counts = _entropy_counts(x, m, r_factor, "app_entropy")
    return Scalar(0.0, False) if counts is None else _apen(counts)


def sample_entropy(x, m: int = ENTROPY_M, r_factor: float = ENTROPY_R) -> Scalar:
    counts = _entropy_counts(x, m, r_factor, "sample_entropy")
    return Scalar(0.0, False) if counts is None else _sampen(counts)


def app_and_sample_entropy(x, m: int = ENTROPY_M, r_factor: float = ENTROPY_R) -> tuple:
    """Both entropies from one pass over the template distances."""
    counts = _entropy_counts(x, m, r_factor, "app_entropy")
    if counts is None:
        return Scalar(0.0, False), Scalar(0.0, False)
    return _apen(counts), _sampen(counts)


def hjorth(x) -> tuple:
    """(mobility, complexity, quality)."""
    x = _series(x, 3, "hjorth")
    dx = np.diff(x)
    ddx = np.diff(dx)
    vx, vdx, vddx = x.var(), dx.var(), ddx.var()
    if vx == 0 or vdx == 0:
        return 0.0, 0.0, False
    mobility = math.sqrt(vdx / vx)
    complexity = math.sqrt(vddx / vdx) / mobility
    return mobility, complexity, True


def zero_crossings(x) -> int:
    x = np.asarray(x, dtype=float)
    c = x - x.mean()
    return int(np.sum(c[:-1] * c[1:] < 0))


def entropy_features(x, fs: float) -> FeatureBlock:
    x = _series(x, 32, "entropy_features")
    quality = not _is_constant(x)
    pe = perm_entropy(x)
    se = spectral_entropy(x, fs)
    ap, sa = app_and_sample_entropy(x)
    mob, comp, hq = hjorth(x)
    quality = quality and se.quality and ap.quality and sa.quality and hq
    values = [pe, se.value, ap.value, sa.value, mob, comp, float(zero_crossings(x))]
    return FeatureBlock(ENTROPY_NAMES, values, quality)
