"""Screening (Morris), correlation and variance-based sensitivity statistics.

All functions take a :class:`ResultTable`, i.e. a sampling design plus one
finite output value per design row.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import CorruptDesignError, IncompleteTableError, ParamStudyError
from .space import ParameterSpace, SampleDesign


@dataclass
class ResultTable:
    design: SampleDesign
    y: np.ndarray

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=float)
        if self.y.shape != (len(self.design),):
            raise IncompleteTableError(
                f"table has {self.y.size} outputs for a design of {len(self.design)} points"
            )
        if not np.all(np.isfinite(self.y)):
            raise IncompleteTableError("outputs must be finite")

    @property
    def space(self) -> ParameterSpace:
        return self.design.space


@dataclass
class MoatResult:
    names: list[str]
    mu: np.ndarray
    mu_star: np.ndarray
    sigma: np.ndarray
    r: int
    effects: np.ndarray  # (r, k)
    flags: list[str] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [
            {"name": n, "mu": float(a), "mu_star": float(b), "sigma": float(c)}
            for n, a, b, c in zip(self.names, self.mu, self.mu_star, self.sigma)
        ]


@dataclass
class CorrelationResult:
    names: list[str]
    cc: np.ndarray
    pcc: np.ndarray
    rcc: np.ndarray
    prcc: np.ndarray
    flags: list[str] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [
            {"name": n, "cc": float(a), "pcc": float(b), "rcc": float(c), "prcc": float(d)}
            for n, a, b, c, d in zip(self.names, self.cc, self.pcc, self.rcc, self.prcc)
        ]


@dataclass
class SobolResult:
    names: list[str]
    s_i: np.ndarray
    s_ti: np.ndarray
    n: int
    variance_hat: float
    estimator: str = "main: Saltelli 2002 (centered f); total: Jansen"
    flags: list[str] = field(default_factory=list)

    @property
    def sum_s_i(self) -> float:
        return float(np.sum(self.s_i))

    def rows(self) -> list[dict]:
        return [
            {"name": n, "s_i": float(a), "s_ti": float(b)}
            for n, a, b in zip(self.names, self.s_i, self.s_ti)
        ]


def elementary_effects(table: ResultTable) -> np.ndarray:
    """Elementary effects as an ``(r, k)`` array, one row per trajectory."""
    design = table.design
    if design.kind != "morris":
        raise ParamStudyError(f"elementary effects need a morris design, got {design.kind!r}")
    moves = design.meta["moves"]
    k = design.space.k
    r = len(moves)
    if len(table.y) != r * (k + 1):
        raise IncompleteTableError(f"expected {r * (k + 1)} rows, got {len(table.y)}")
    ee = np.full((r, k), np.nan)
    y = table.y
    for t, traj in enumerate(moves):
        base = t * (k + 1)
        for s, (axis, delta) in enumerate(traj):
            if delta == 0:
                raise CorruptDesignError(f"trajectory {t} step {s} records a zero step")
            ee[t, axis] = (y[base + s + 1] - y[base + s]) / delta
    if np.isnan(ee).any():
        raise CorruptDesignError("some trajectory does not move every axis exactly once")
    return ee


def moat(table: ResultTable) -> MoatResult:
    ee = elementary_effects(table)
    r = ee.shape[0]
    flags = []
    if r < 2:
        warnings.warn("sigma is undefined for a single trajectory; reporting 0", stacklevel=2)
        flags.append("sigma-undefined-r1")
        sigma = np.zeros(ee.shape[1])
    else:
        sigma = ee.std(axis=0, ddof=1)
        # equal effects must give exactly zero
        sigma[np.all(ee == ee[0], axis=0)] = 0.0
    return MoatResult(
        names=table.space.names,
        mu=ee.mean(axis=0),
        mu_star=np.abs(ee).mean(axis=0),
        sigma=sigma,
        r=r,
        effects=ee,
        flags=flags,
    )


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    den = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    if den == 0:
        return float("nan")
    return float(np.clip(np.dot(xc, yc) / den, -1.0, 1.0))


def _residual_partial(cols: np.ndarray) -> np.ndarray:
    """Partial correlations from regression residuals (pseudo-inverse fits).

    Used when the joint correlation matrix is singular, e.g. an output that
    is an exact linear function of the inputs.
    """
    n, m = cols.shape
    y = cols[:, -1]
    out = np.empty(m - 1)
    for i in range(m - 1):
        Z = np.column_stack([np.ones(n), np.delete(cols[:, :-1], i, axis=1)])
        Zp = np.linalg.pinv(Z)
        rx = cols[:, i] - Z @ (Zp @ cols[:, i])
        ry = y - Z @ (Zp @ y)
        scale = np.sqrt(n) * 1e-12
        if np.linalg.norm(rx) <= scale * max(1.0, np.linalg.norm(cols[:, i])):
            out[i] = np.nan  # axis is collinear with the others
        elif np.linalg.norm(ry) <= scale * max(1.0, np.linalg.norm(y)):
            # y is fully explained by the others; sign follows the fitted slope
            out[i] = np.nan
        else:
            out[i] = pearson(rx, ry)
    return out


def _partial(cols: np.ndarray, flags: list[str], tag: str) -> np.ndarray:
    """Partial correlation of each column with the last one, all others fixed.

    PCC_iy = -P_iy / sqrt(P_ii * P_yy) with P the inverse correlation matrix.
    """
    C = np.corrcoef(cols, rowvar=False)
    if np.linalg.cond(C) > 1e12:
        flags.append(f"{tag}: singular correlation matrix, pseudo-inverse regression used")
        return np.clip(_residual_partial(cols), -1.0, 1.0)
    P = np.linalg.inv(C)
    yy = P[-1, -1]
    out = np.empty(cols.shape[1] - 1)
    for i in range(cols.shape[1] - 1):
        den = np.sqrt(P[i, i] * yy)
        out[i] = -P[i, -1] / den if den > 0 else np.nan
    return np.clip(out, -1.0, 1.0)


def correlations(table: ResultTable) -> CorrelationResult:
    """Pearson/Spearman simple and partial coefficients of each axis vs y.

    Axes are taken in unit scale; constant axes get NaN and are left out of
    the partial computation.  Ranks use average ranks for ties.
    """
    X = table.design.unit()
    y = table.y
    n, k = X.shape
    if n < 3:
        raise IncompleteTableError("correlations need at least 3 rows")
    flags: list[str] = []
    names = table.space.names
    varying = [j for j in range(k) if np.ptp(X[:, j]) > 0]
    for j in range(k):
        if j not in varying:
            flags.append(f"{names[j]}: constant column, coefficients undefined")
    y_const = np.ptp(y) == 0
    if y_const:
        flags.append("constant output, coefficients undefined")

    cc = np.full(k, np.nan)
    rcc = np.full(k, np.nan)
    pcc = np.full(k, np.nan)
    prcc = np.full(k, np.nan)
    if y_const or not varying:
        return CorrelationResult(names, cc, pcc, rcc, prcc, flags)

    R = np.column_stack([rankdata(X[:, j]) for j in range(k)])
    ry = rankdata(y)
    for j in varying:
        cc[j] = pearson(X[:, j], y)
        rcc[j] = pearson(R[:, j], ry)
    pcc[varying] = _partial(np.column_stack([X[:, varying], y]), flags, "pcc")
    prcc[varying] = _partial(np.column_stack([R[:, varying], ry]), flags, "prcc")
    return CorrelationResult(names, cc, pcc, rcc, prcc, flags)


def sobol(table: ResultTable) -> SobolResult:
    """First-order and total Sobol indices from a Saltelli design.

    S_i  = mean(f(B) * (f(A_B^i) - f(A))) / V
    S_Ti = mean((f(A) - f(A_B^i))**2) / (2 V)
    with V the sample variance of f over A and B together.  f is centered on
    its A and B mean first; this leaves S_i unbiased and cuts its variance.
    Estimates are reported unclamped, so small negative values can appear.
    """
    design = table.design
    if design.kind != "saltelli":
        raise ParamStudyError(f"sobol indices need a saltelli design, got {design.kind!r}")
    n = design.meta["n"]
    k = design.space.k
    if len(table.y) != n * (k + 2):
        raise IncompleteTableError(f"expected {n * (k + 2)} rows, got {len(table.y)}")
    Y = table.y.reshape(k + 2, n)
    fA, fB, fAB = Y[0], Y[1], Y[2:]
    V = float(np.var(np.concatenate([fA, fB]), ddof=1))
    flags = []
    if V == 0:
        flags.append("constant model: zero output variance, indices undefined")
        nan = np.full(k, np.nan)
        return SobolResult(design.space.names, nan, nan.copy(), n, V, flags=flags)
    f0 = float(np.mean(np.concatenate([fA, fB])))
    s_i = np.mean((fB - f0) * (fAB - fA), axis=1) / V
    s_ti = 0.5 * np.mean((fA - fAB) ** 2, axis=1) / V
    return SobolResult(design.space.names, s_i, s_ti, n, V, flags=flags)


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def report(result: MoatResult | CorrelationResult | SobolResult) -> dict:
    """JSON-ready summary, one entry per axis plus method-level fields."""
    def clean(v):
        return None if isinstance(v, float) and not np.isfinite(v) else v

    out: dict = {"parameters": [{k: clean(v) for k, v in row.items()} for row in result.rows()]}
    if isinstance(result, MoatResult):
        out.update(method="moat", r=result.r)
    elif isinstance(result, CorrelationResult):
        out.update(method="correlation")
    else:
        out.update(
            method="vbd",
            n=result.n,
            variance_hat=clean(result.variance_hat),
            sum_s_i=clean(result.sum_s_i),
            estimator=result.estimator,
        )
    out["flags"] = list(result.flags)
    return out


def dumps_report(result) -> str:
    return json.dumps(report(result), indent=2, sort_keys=True)
