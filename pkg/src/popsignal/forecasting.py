"""Statistical forecasters plus a ridge regressor over exogenous windows.

All univariate forecasters take a :class:`ForecastRequest` and return a
:class:`ForecastResult`. ``FORECASTERS`` maps the method names used on the
command line to these functions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .core import NumericError, Series, ValidationError

log = logging.getLogger(__name__)

_SSE_FLOOR = 1e-300


@dataclass(frozen=True)
class ForecastRequest:
    history: np.ndarray
    horizon: int = 1
    exogenous: tuple = ()

    def __init__(self, history, horizon: int = 1, exogenous: Sequence = ()):
        h = history.to_numpy() if isinstance(history, Series) else np.asarray(history, dtype=np.float64)
        if h.ndim != 1:
            raise ValidationError("history must be 1-D")
        if not np.all(np.isfinite(h)):
            raise ValidationError("history must be finite")
        if horizon < 1:
            raise ValidationError("horizon must be >= 1")
        object.__setattr__(self, "history", h)
        object.__setattr__(self, "horizon", int(horizon))
        object.__setattr__(self, "exogenous", tuple(exogenous))


@dataclass
class ForecastResult:
    values: np.ndarray
    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise NumericError(f"{self.method} produced non-finite forecasts")


def _need(req: ForecastRequest, n: int, method: str):
    if len(req.history) < n:
        raise ValidationError(f"{method} needs at least {n} observations, got {len(req.history)}")


def mean_forecast(req: ForecastRequest) -> ForecastResult:
    _need(req, 1, "mean")
    return ForecastResult(np.full(req.horizon, req.history.mean()), "mean")


def last_forecast(req: ForecastRequest) -> ForecastResult:
    _need(req, 1, "last")
    return ForecastResult(np.full(req.horizon, req.history[-1]), "last")


def drift_forecast(req: ForecastRequest) -> ForecastResult:
    """Extend the line through the first and last observation."""
    _need(req, 2, "drift")
    y = req.history
    slope = (y[-1] - y[0]) / (len(y) - 1)
    steps = np.arange(1, req.horizon + 1)
    return ForecastResult(y[-1] + steps * slope, "drift", {"slope": float(slope)})


ALPHA_GRID = np.arange(1, 101) / 100.0


def ses_forecast(req: ForecastRequest, alpha: float | None = None) -> ForecastResult:
    """Simple exponential smoothing, level started at the first observation.

    Without ``alpha`` the one-step-ahead SSE is minimised over 0.01..1.00;
    ties go to the smallest alpha.
    """
    _need(req, 1, "ses")
    y = req.history
    if alpha is None:
        best = None
        for a in ALPHA_GRID:
            sse, level = _kernels.ses_sse(y, float(a))
            if best is None or sse < best[0]:
                best = (sse, float(a), level)
        sse, alpha, level = best
    else:
        if not 0 < alpha <= 1:
            raise ValidationError("alpha must lie in (0, 1]")
        sse, level = _kernels.ses_sse(y, float(alpha))
    return ForecastResult(np.full(req.horizon, level), "ses", {"alpha": alpha, "sse": float(sse)})


def _lag_matrix(y: np.ndarray, p: int, start: int, const: bool = True) -> tuple[np.ndarray, np.ndarray]:
    rows = range(start, len(y))
    cols = [np.ones(len(rows))] if const else []
    cols += [y[[t - i for t in rows]] for i in range(1, p + 1)]
    X = np.column_stack(cols) if cols else np.empty((len(rows), 0))
    return X, y[start:]


def _ols(X: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float]:
    if X.shape[1] == 0:
        return np.empty(0), float(target @ target)
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    r = target - X @ beta
    return beta, float(r @ r)


def _aic(sse: float, n_eff: int, k: int) -> float:
    return n_eff * math.log(max(sse / n_eff, _SSE_FLOOR)) + 2 * k


def fit_ar(y: np.ndarray, p: int, start: int | None = None) -> tuple[float, np.ndarray, float]:
    """Least-squares AR(p) with intercept. Returns ``(intercept, phi, sse)``."""
    X, target = _lag_matrix(y, p, p if start is None else start)
    beta, sse = _ols(X, target)
    return float(beta[0]), beta[1:], sse


def _ar_path(y: np.ndarray, const: float, phi: np.ndarray, horizon: int) -> np.ndarray:
    buf = list(y[-len(phi):]) if len(phi) else []
    out = []
    for _ in range(horizon):
        nxt = const + sum(phi[i] * buf[-1 - i] for i in range(len(phi)))
        out.append(nxt)
        buf.append(nxt)
    return np.array(out)


def ar_forecast(req: ForecastRequest, p: int | None = None, p_max: int = 4) -> ForecastResult:
    """AR(p) with intercept; ``p`` chosen by AIC over 1..p_max when omitted.

    Candidate orders are compared on the common sample that starts at
    ``p_max``; the winner is refitted on its full sample.
    """
    y = req.history
    _need(req, 2, "ar")
    if p is None:
        if len(y) < 2 * p_max + 2:
            raise ValidationError(
                f"AR order selection needs >= {2 * p_max + 2} observations; pass an explicit p")
        n_eff = len(y) - p_max
        aics = {}
        for cand in range(1, p_max + 1):
            _, _, sse = fit_ar(y, cand, start=p_max)
            aics[cand] = _aic(sse, n_eff, cand + 1)
        p = min(aics, key=lambda c: (aics[c], c))
    if p < 1 or len(y) < p + 2:
        raise ValidationError(f"AR({p}) needs at least {p + 2} observations")
    const, phi, sse = fit_ar(y, p)
    return ForecastResult(_ar_path(y, const, phi, req.horizon), "ar",
                          {"p": p, "intercept": const, "phi": phi.tolist(), "sse": sse})


# --- ARIMA via conditional sum of squares ---------------------------------

def _max_root_modulus(coefs: np.ndarray) -> float:
    """Largest |eigenvalue| of the companion matrix of ``x^n - c1 x^(n-1) - ...``."""
    if len(coefs) == 0:
        return 0.0
    comp = np.zeros((len(coefs), len(coefs)))
    comp[0, :] = coefs
    comp[1:, :-1] = np.eye(len(coefs) - 1)
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def _css(w, const, phi, theta) -> float:
    e = _kernels.css_residuals(w, const, phi, theta)
    sse = float(e @ e)
    return sse if math.isfinite(sse) else math.inf


def _pattern_search(f, x0: np.ndarray, step: float = 0.1, min_step: float = 1e-8,
                    max_evals: int = 20000, bound: float = 2.0) -> tuple[np.ndarray, float]:
    """Gradient-free coordinate search: probe +-step per axis, halve when stuck."""
    x = x0.copy()
    fx = f(x)
    evals = 1
    while step > min_step and evals < max_evals:
        improved = False
        for i in range(len(x)):
            for sign in (1.0, -1.0):
                cand = x.copy()
                cand[i] += sign * step
                if abs(cand[i]) > bound:
                    continue
                fc = f(cand)
                evals += 1
                if fc < fx:
                    x, fx, improved = cand, fc, True
                    break
        if not improved:
            step /= 2
    return x, fx


@dataclass
class ArimaFit:
    order: tuple
    const: float
    phi: np.ndarray
    theta: np.ndarray
    sse: float
    n_eff: int
    aic: float
    residuals: np.ndarray


def fit_arima(y: np.ndarray, order: tuple, seed: int = 0) -> ArimaFit:
    """CSS estimate of ARIMA(p, d, q); a constant is included only when d == 0."""
    p, d, q = order
    w = np.diff(y, n=d) if d else np.asarray(y, dtype=np.float64)
    const_on = d == 0
    k = p + q + int(const_on)
    n_eff = len(w) - p
    if n_eff < max(k + 1, 2):
        raise ValidationError(f"ARIMA{order} needs more data ({len(y)} observations)")

    X, target = _lag_matrix(w, p, p, const=const_on)
    beta, _ = _ols(X, target)
    c0 = float(beta[0]) if const_on else 0.0
    phi0 = beta[1:] if const_on else beta
    if q == 0:
        const, phi, theta = c0, np.asarray(phi0, dtype=np.float64), np.empty(0)
    else:
        rng = np.random.default_rng(seed)
        x0 = np.concatenate([[c0] if const_on else [], phi0, rng.uniform(-0.1, 0.1, q)])

        def unpack(x):
            off = int(const_on)
            return (x[0] if const_on else 0.0), x[off:off + p], x[off + p:]

        x, _ = _pattern_search(lambda x: _css(w, *unpack(x)), x0)
        const, phi, theta = unpack(x)
        const = float(const)
    resid = _kernels.css_residuals(w, const, phi, theta)
    sse = float(resid @ resid)
    return ArimaFit((p, d, q), const, np.asarray(phi), np.asarray(theta), sse, n_eff,
                    _aic(sse, n_eff, k), resid)


def _admissible(fit: ArimaFit) -> str | None:
    if _max_root_modulus(fit.phi) > 1 + 1e-8:
        return "explosive AR part"
    if _max_root_modulus(-fit.theta) >= 1 - 1e-6:
        return "non-invertible MA part"
    return None


def _arima_path(y: np.ndarray, fit: ArimaFit, horizon: int) -> np.ndarray:
    p, d, q = fit.order
    w = list(np.diff(y, n=d) if d else y)
    e = [0.0] * (len(w) - len(fit.residuals)) + list(fit.residuals)
    out = []
    for _ in range(horizon):
        nxt = fit.const
        nxt += sum(fit.phi[i] * w[-1 - i] for i in range(p))
        nxt += sum(fit.theta[j] * e[-1 - j] for j in range(q) if j < len(e))
        w.append(nxt)
        e.append(0.0)
        out.append(nxt)
    out = np.array(out)
    for _ in range(d):
        out = y[-1] + np.cumsum(out)
    return out


ARIMA_ORDERS = [(p, d, q) for d in (0, 1) for p in (0, 1, 2) for q in (0, 1, 2)]


def arima_forecast(req: ForecastRequest, order: tuple | None = None, seed: int = 0) -> ForecastResult:
    """ARIMA fitted by conditional sum of squares.

    Without ``order`` every (p, d, q) with p, q in {0, 1, 2} and d in {0, 1}
    that the data can support is fitted and the lowest AIC wins. Explosive or
    non-invertible fits are discarded; if nothing admissible remains the
    forecast falls back to AR and the reason is stored under ``warning``.
    """
    y = req.history
    _need(req, 2, "arima")
    candidates = [tuple(order)] if order is not None else ARIMA_ORDERS
    best, rejected = None, []
    for cand in candidates:
        try:
            fit = fit_arima(y, cand, seed=seed)
        except ValidationError as exc:
            if order is not None:
                raise
            rejected.append(f"{cand}: {exc}")
            continue
        why = _admissible(fit)
        if why:
            rejected.append(f"{cand}: {why}")
            continue
        if best is None or fit.aic < best.aic:
            best = fit
    if best is None:
        msg = "no admissible ARIMA fit (" + "; ".join(rejected) + "); fell back to AR"
        log.warning(msg)
        p = 1 if len(y) < 10 else None
        res = ar_forecast(req, p=p)
        res.params["warning"] = msg
        res.params["fallback_from"] = "arima"
        return res
    return ForecastResult(_arima_path(y, best, req.horizon), "arima",
                          {"order": list(best.order), "const": best.const,
                           "phi": best.phi.tolist(), "theta": best.theta.tolist(),
                           "sse": best.sse, "aic": best.aic})


FORECASTERS = {
    "mean": mean_forecast,
    "last": last_forecast,
    "drift": drift_forecast,
    "ar": ar_forecast,
    "arima": arima_forecast,
    "ses": ses_forecast,
}


def forecast(method: str, history, horizon: int = 1, **kw) -> ForecastResult:
    try:
        fn = FORECASTERS[method]
    except KeyError:
        raise ValidationError(f"unknown forecaster {method!r}; choose from {sorted(FORECASTERS)}") from None
    return fn(ForecastRequest(history, horizon), **kw)


# --- exogenous ridge -------------------------------------------------------

def design_matrix(static: np.ndarray | None, exogenous: np.ndarray | None) -> np.ndarray:
    """Row-wise concat of static features and flattened exogenous windows.

    ``exogenous`` is ``(n, window)`` or ``(n, channels, window)``.
    """
    parts = []
    if static is not None:
        s = np.asarray(static, dtype=np.float64)
        parts.append(s.reshape(len(s), -1))
    if exogenous is not None:
        x = np.asarray(exogenous, dtype=np.float64)
        parts.append(x.reshape(len(x), -1))
    if not parts:
        raise ValidationError("need static features or exogenous windows")
    return np.hstack(parts)


@dataclass
class RidgeModel:
    coef: np.ndarray
    intercept: np.ndarray
    lam: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(X) @ self.coef + self.intercept


def fit_ridge(X: np.ndarray, Y: np.ndarray, lam: float, standardize: bool = True) -> RidgeModel:
    """Multi-output ridge with an unpenalised intercept, solved in closed form.

    With ``standardize`` every column is scaled to unit training variance
    before the penalty is applied (constant columns are left as they are);
    the returned coefficients act on the original units.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    xm, ym = X.mean(axis=0), Y.mean(axis=0)
    scale = X.std(axis=0) if standardize else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    Xc, Yc = (X - xm) / scale, Y - ym
    gram = Xc.T @ Xc + lam * np.eye(X.shape[1])
    if lam == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise NumericError("singular normal equations with lambda=0; use lambda > 0")
    coef = np.linalg.solve(gram, Xc.T @ Yc) / scale[:, None]
    return RidgeModel(coef, ym - xm @ coef, float(lam))


def exo_ridge_forecast(train_static, train_exo, train_sales, probe_static, probe_exo,
                       horizon: int, lam: float = 1.0) -> ForecastResult:
    """Predict the first ``horizon`` sales steps of new products.

    ``train_sales`` is ``(n, >= horizon)``; pass ``None`` for the exogenous
    arguments to fit on static features alone. ``probe_*`` may hold one
    product or a batch; the result has shape ``(batch, horizon)`` for batches.
    """
    Y = np.asarray(train_sales, dtype=np.float64)[:, :horizon]
    if Y.shape[1] < horizon:
        raise ValidationError("training sales curves are shorter than the horizon")
    model = fit_ridge(design_matrix(train_static, train_exo), Y, lam)
    single = probe_static is not None and np.ndim(probe_static) == 1 or (
        probe_static is None and np.ndim(probe_exo) == 1)
    ps = None if probe_static is None else np.atleast_2d(probe_static)
    px = None if probe_exo is None else (np.asarray(probe_exo)[None] if single else np.asarray(probe_exo))
    pred = model.predict(design_matrix(ps, px))
    return ForecastResult(pred[0] if single else pred, "exo_ridge",
                          {"lambda": lam, "n_features": int(model.coef.shape[0])})
