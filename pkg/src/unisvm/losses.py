"""Catalog of least-squares-type DC losses.

Every loss here is written as a function of the margin residual ``u``
(``u = 1 - y*f`` for classification, ``u = y - f`` for regression) and
admits the split

    psi(u) = A*u**2 - (A*u**2 - psi(u))

with the bracketed part convex whenever ``A >= lsdc_bound(kind, params)``.
That split is what lets the solver replace each DC iteration by a single
ridge-regularized linear solve.

Non-LS-DC losses (hinge, ramp, epsilon-insensitive, absolute) are not
provided; use their smoothed counterparts instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .errors import InputError

CLASSIFICATION = "classification"
REGRESSION = "regression"
TASKS = (CLASSIFICATION, REGRESSION)

_TASK_ALIASES = {
    "class": CLASSIFICATION,
    "classification": CLASSIFICATION,
    "clf": CLASSIFICATION,
    "reg": REGRESSION,
    "regression": REGRESSION,
}


def normalize_task(task: str) -> str:
    try:
        return _TASK_ALIASES[str(task).lower()]
    except KeyError:
        raise InputError(f"unknown task {task!r}; use 'class' or 'reg'") from None


def _softplus(x):
    # max(x, 0) + log1p(exp(-|x|)), exact to rounding for any finite x
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _pos(u):
    return np.maximum(u, 0.0)


# --- psi / dpsi pairs -------------------------------------------------------

def _ls(u):
    return u * u


def _d_ls(u):
    return 2.0 * u


def _trunc_ls(u, a):
    return np.minimum(u * u, a)


def _d_trunc_ls(u, a):
    return np.where(np.abs(u) < math.sqrt(a), 2.0 * u, 0.0)


def _sq_hinge(u):
    up = _pos(u)
    return up * up


def _d_sq_hinge(u):
    return 2.0 * _pos(u)


def _trunc_sq_hinge(u, a):
    up = _pos(u)
    return np.minimum(up * up, a)


def _d_trunc_sq_hinge(u, a):
    return np.where((u > 0.0) & (u < math.sqrt(a)), 2.0 * u, 0.0)


def _smooth_hinge(u, p):
    return _softplus(p * u) / p


def _d_smooth_hinge(u, p):
    return expit(p * u)


def _ramp1(u, a):
    inner = (2.0 / a) * _pos(u) ** 2
    outer = a - (2.0 / a) * _pos(a - u) ** 2
    return np.where(u <= 0.5 * a, inner, outer)


def _d_ramp1(u, a):
    return np.where(u <= 0.5 * a, (4.0 / a) * _pos(u), (4.0 / a) * _pos(a - u))


def _ramp2(u, a, p):
    return (_softplus(p * u) - _softplus(p * (u - a))) / p


def _d_ramp2(u, a, p):
    return expit(p * u) - expit(p * (u - a))


def _gen_scaled(u, b, c):
    up = _pos(u)
    with np.errstate(over="ignore"):
        return up, up ** c / b


def _gen_nonconvex(u, a, b, c):
    _, s = _gen_scaled(u, b, c)
    return -a * np.expm1(-s)


def _d_gen_nonconvex(u, a, b, c):
    up, s = _gen_scaled(u, b, c)
    with np.errstate(over="ignore", invalid="ignore"):
        d = (a * c / b) * up ** (c - 1.0) * np.exp(-s)
    # exp underflows to 0 long before up**(c-1) overflows, except at inf
    return np.where(s > 700.0, 0.0, d)


def _smooth_eps(u, p, eps):
    return (_softplus(-p * (u + eps)) + _softplus(p * (u - eps))) / p


def _d_smooth_eps(u, p, eps):
    return expit(p * (u - eps)) - expit(-p * (u + eps))


def _huber(u, delta):
    au = np.abs(u)
    return np.where(au < delta, u * u / (2.0 * delta), au - 0.5 * delta)


def _d_huber(u, delta):
    return np.where(np.abs(u) < delta, u / delta, np.sign(u))


def _smooth_abs(u, p):
    return _smooth_eps(u, p, 0.0)


def _d_smooth_abs(u, p):
    return _d_smooth_eps(u, p, 0.0)


def _trunc_huber(u, delta, a):
    return _huber(np.minimum(np.abs(u), a), delta)


def _d_trunc_huber(u, delta, a):
    return np.where(np.abs(u) >= a, 0.0, _d_huber(u, delta))


# --- LS-DC constants ---------------------------------------------------------

def h_of_c(c: float) -> float:
    """Location (in units of ``u**c / b``) of the curvature peak of gen_nonconvex."""
    return (3.0 * (c - 1.0) - math.sqrt(5.0 * c * c - 6.0 * c + 1.0)) / (2.0 * c)


def m_abc(a: float, b: float, c: float) -> float:
    """Maximum second derivative of ``a*(1 - exp(-u_+**c / b))``.

    For ``c == 2`` the closed form has a ``0**0`` factor, so the limit
    ``2*a/b`` is returned directly.
    """
    if not (a > 0 and b > 0):
        raise InputError("m_abc needs a > 0 and b > 0")
    if not c >= 2:
        raise InputError(f"m_abc needs c >= 2, got {c}")
    if c == 2:
        return 2.0 * a / b
    h = h_of_c(c)
    shape = (c - 1.0) * h ** (1.0 - 2.0 / c) - c * h ** (2.0 - 2.0 / c)
    return a * c / b ** (2.0 / c) * shape * math.exp(-h)


@dataclass(frozen=True)
class _LossDef:
    tasks: tuple
    params: tuple
    defaults: Mapping[str, float]
    psi: Callable
    dpsi: Callable
    bound: Callable[..., float]
    smooth: bool
    saturates: bool = False


_BOTH = (CLASSIFICATION, REGRESSION)

CATALOG: dict[str, _LossDef] = {
    "least_squares": _LossDef(_BOTH, (), {}, _ls, _d_ls, lambda: 1.0, True),
    "truncated_ls": _LossDef(
        _BOTH, ("a",), {"a": 2.0}, _trunc_ls, _d_trunc_ls, lambda a: 1.0, False, True
    ),
    "squared_hinge": _LossDef(
        (CLASSIFICATION,), (), {}, _sq_hinge, _d_sq_hinge, lambda: 1.0, True
    ),
    "truncated_sq_hinge": _LossDef(
        (CLASSIFICATION,), ("a",), {"a": 2.0},
        _trunc_sq_hinge, _d_trunc_sq_hinge, lambda a: 1.0, False, True,
    ),
    "smoothed_hinge": _LossDef(
        (CLASSIFICATION,), ("p",), {"p": 10.0},
        _smooth_hinge, _d_smooth_hinge, lambda p: p / 8.0, True,
    ),
    "smoothed_ramp1": _LossDef(
        (CLASSIFICATION,), ("a",), {"a": 2.0}, _ramp1, _d_ramp1, lambda a: 2.0 / a, True, True
    ),
    "smoothed_ramp2": _LossDef(
        (CLASSIFICATION,), ("a", "p"), {"a": 2.0, "p": 10.0},
        _ramp2, _d_ramp2, lambda a, p: p / 8.0, True, True,
    ),
    "gen_nonconvex": _LossDef(
        (CLASSIFICATION,), ("a", "b", "c"), {"a": 2.0, "b": 2.0, "c": 2.0},
        _gen_nonconvex, _d_gen_nonconvex, lambda a, b, c: 0.5 * m_abc(a, b, c), True, True,
    ),
    "smoothed_eps_insensitive": _LossDef(
        (REGRESSION,), ("p", "eps"), {"p": 100.0, "eps": 0.05},
        _smooth_eps, _d_smooth_eps, lambda p, eps: p / 4.0, True,
    ),
    "huber": _LossDef(
        (REGRESSION,), ("delta",), {"delta": 0.1},
        _huber, _d_huber, lambda delta: 1.0 / (2.0 * delta), True,
    ),
    "smoothed_absolute": _LossDef(
        (REGRESSION,), ("p",), {"p": 100.0},
        _smooth_abs, _d_smooth_abs, lambda p: p / 4.0, True,
    ),
    "truncated_huber": _LossDef(
        (REGRESSION,), ("delta", "a"), {"delta": 0.1, "a": 2.0},
        _trunc_huber, _d_trunc_huber, lambda delta, a: 1.0 / (2.0 * delta), False, True,
    ),
}

# Losses people ask for that have no finite LS-DC constant.
NOT_LSDC = {
    "hinge": "smoothed_hinge",
    "ramp": "smoothed_ramp1 or smoothed_ramp2",
    "eps_insensitive": "smoothed_eps_insensitive",
    "epsilon_insensitive": "smoothed_eps_insensitive",
    "absolute": "huber or smoothed_absolute",
    "truncated_absolute": "truncated_huber",
}


def available_losses(task: str | None = None) -> list[str]:
    if task is None:
        return sorted(CATALOG)
    task = normalize_task(task)
    return sorted(k for k, d in CATALOG.items() if task in d.tasks)


def _lookup(kind: str) -> _LossDef:
    if kind in CATALOG:
        return CATALOG[kind]
    if kind in NOT_LSDC:
        raise InputError(
            f"{kind!r} is not an LS-DC loss; use {NOT_LSDC[kind]} instead "
            f"(available: {', '.join(available_losses())})"
        )
    raise InputError(f"unknown loss {kind!r} (available: {', '.join(available_losses())})")


def _resolve_params(kind: str, params: Mapping[str, float]) -> dict[str, float]:
    ldef = _lookup(kind)
    unknown = set(params) - set(ldef.params)
    if unknown:
        allowed = ", ".join(ldef.params) or "none"
        raise InputError(f"loss {kind!r} got unknown parameter(s) {sorted(unknown)}; allowed: {allowed}")
    out = {}
    for name in ldef.params:
        try:
            value = float(params.get(name, ldef.defaults[name]))
        except (TypeError, ValueError):
            raise InputError(f"loss {kind!r}: parameter {name} must be a number") from None
        if not math.isfinite(value) or value <= 0:
            raise InputError(f"loss {kind!r}: parameter {name} must be positive, got {value}")
        out[name] = value
    if kind == "gen_nonconvex" and out["c"] < 2:
        raise InputError(f"gen_nonconvex needs c >= 2, got {out['c']}")
    return out


def lsdc_bound(kind: str, params: Mapping[str, float] | None = None) -> float:
    """Smallest ``A`` for which ``A*u**2 - psi(u)`` is convex."""
    resolved = _resolve_params(kind, params or {})
    return float(CATALOG[kind].bound(**resolved))


@dataclass(frozen=True)
class LossSpec:
    kind: str
    params: dict = field(default_factory=dict)
    A: float = 1.0
    task: str = CLASSIFICATION

    @property
    def name(self) -> str:
        """``kind:k=v,...`` form accepted by :func:`parse_loss`."""
        if not self.params:
            return self.kind
        body = ",".join(f"{k}={_fmt(v)}" for k, v in self.params.items())
        return f"{self.kind}:{body}"

    @property
    def smooth(self) -> bool:
        return CATALOG[self.kind].smooth

    def psi(self, u):
        return psi(self, u)

    def dpsi(self, u):
        return dpsi(self, u)


def _fmt(v: float) -> str:
    return repr(int(v)) if float(v).is_integer() else repr(float(v))


def make_loss(kind: str, task: str = CLASSIFICATION, A: float | None = None, **params) -> LossSpec:
    task = normalize_task(task)
    ldef = _lookup(kind)
    if task not in ldef.tasks:
        raise InputError(
            f"loss {kind!r} is not defined for {task}; "
            f"available: {', '.join(available_losses(task))}"
        )
    resolved = _resolve_params(kind, params)
    bound = float(ldef.bound(**resolved))
    if A is None:
        A = bound
    else:
        A = float(A)
        if not math.isfinite(A) or A < bound * (1.0 - 1e-12):
            raise InputError(f"A={A} is below the LS-DC bound {bound} of {kind!r}")
    return LossSpec(kind=kind, params=resolved, A=A, task=task)


def parse_loss(text: str, task: str = CLASSIFICATION, A: float | None = None,
               extra: str | None = None) -> LossSpec:
    """Parse ``name`` or ``name:k=v,k=v`` (``;`` also separates pairs).

    ``extra`` holds additional ``k=v`` pairs, e.g. from a separate flag.
    """
    kind, _, body = text.strip().partition(":")
    pairs = [s for s in body.replace(";", ",").split(",") if s.strip()]
    if extra:
        pairs += [s for s in extra.replace(";", ",").split(",") if s.strip()]
    params = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise InputError(f"bad loss parameter {pair!r}; expected key=value")
        params[key.strip()] = value.strip()
    return make_loss(kind.strip(), task, A=A, **params)


def _call(fn, loss: LossSpec, u):
    arr = np.asarray(u, dtype=float)
    out = fn(arr, **loss.params)
    return float(out) if np.ndim(out) == 0 else out


def psi(loss: LossSpec, u):
    return _call(CATALOG[loss.kind].psi, loss, u)


def dpsi(loss: LossSpec, u):
    """One element of the subdifferential of ``psi`` at ``u``."""
    return _call(CATALOG[loss.kind].dpsi, loss, u)


def _check_labels(task: str, y: np.ndarray) -> None:
    if task == CLASSIFICATION and not np.all((y == 1.0) | (y == -1.0)):
        raise InputError("classification labels must be -1 or +1")


def residual(task: str, y, xi) -> np.ndarray:
    """Margin residual: ``1 - y*xi`` (classification) or ``y - xi`` (regression)."""
    task = normalize_task(task)
    y = np.asarray(y, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if y.shape != xi.shape:
        raise InputError(f"label/fit length mismatch: {y.shape} vs {xi.shape}")
    _check_labels(task, y)
    if task == CLASSIFICATION:
        return 1.0 - y * xi
    return y - xi


def v_update(loss: LossSpec, y, xi) -> np.ndarray:
    """Working vector ``v = -y * dpsi(1 - y*xi)`` or ``v = -dpsi(y - xi)``.

    This is minus twice the linearization term of the concave part; the
    next iterate solves against ``xi - v / (2A)``.
    """
    u = residual(loss.task, y, xi)
    d = np.asarray(dpsi(loss, u), dtype=float)
    if loss.task == CLASSIFICATION:
        return -np.asarray(y, dtype=float) * d
    return -d
