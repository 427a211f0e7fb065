"""Mackey-Glass input generation, decimation and normalization."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SchemaError


@dataclass(frozen=True)
class MGParams:
    beta: float = 0.2
    gamma: float = 0.1
    n_exp: float = 10.0
    tau: float = 17.0
    dt_int: float = 0.1
    history_init: float = 1.2

    def __post_init__(self):
        if not (self.beta > 0 and self.gamma > 0):
            raise ConfigurationError("beta and gamma must be positive")
        if self.tau < 0:
            raise ConfigurationError("tau must be >= 0")
        if not self.dt_int > 0:
            raise ConfigurationError("dt_int must be positive")
        if abs(self.tau / self.dt_int - round(self.tau / self.dt_int)) > 1e-9:
            raise ConfigurationError(f"dt_int={self.dt_int} does not divide tau={self.tau}")

    @property
    def delay_steps(self) -> int:
        return int(round(self.tau / self.dt_int))


# Lagrange weights at the midpoint of the last interval of four equispaced nodes.
_LEFT = (0.0625, -0.3125, 0.9375, 0.3125)


def _rhs(x, x_tau, p: MGParams):
    return p.beta * x_tau / (1.0 + x_tau ** p.n_exp) - p.gamma * x


def generate(p: MGParams, n_steps: int, history=None) -> np.ndarray:
    """Integrate the delay equation with RK4; returns ``n_steps + 1`` samples from t=0.

    ``history`` may be an array of the ``delay_steps + 1`` values on the grid
    over ``[-tau, 0]``; otherwise the constant ``p.history_init`` is used.
    Delayed values between grid points (the RK4 half steps) use four-point
    cubic interpolation, which keeps the scheme fourth order.
    """
    h = p.dt_int
    d = p.delay_steps
    if history is None:
        hist = np.full(d + 1, float(p.history_init))
    else:
        hist = np.asarray(history, dtype=float)
        if hist.shape != (d + 1,):
            raise ConfigurationError(f"history must have {d + 1} samples")
    # buf[j] holds x at grid time (j - d) * h; preallocated as a flat record.
    buf = np.empty(d + 1 + n_steps)
    buf[:d + 1] = hist
    if d == 0:
        for i in range(n_steps):
            x = buf[i]
            k1 = _rhs(x, x, p)
            k2 = _rhs(x + 0.5 * h * k1, x + 0.5 * h * k1, p)
            k3 = _rhs(x + 0.5 * h * k2, x + 0.5 * h * k2, p)
            k4 = _rhs(x + h * k3, x + h * k3, p)
            buf[i + 1] = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return buf.copy()

    def at(j):
        # clamp to the earliest stored sample (constant extension of history)
        return buf[max(j, 0)]

    # The solution's 1st, 2nd and 3rd derivatives jump at t = 0, tau, 2 tau;
    # interpolation stencils must not straddle those grid points.
    breaks = {d, 2 * d, 3 * d}
    for i in range(n_steps):
        j = i + d  # index of current time t_i
        x = buf[j]
        lag0 = buf[i]          # x(t - tau)
        lag1 = buf[i + 1]      # x(t + h - tau)
        if d < 3:
            lag_half = 0.5 * (lag0 + lag1)
        elif i + 1 in breaks:
            lag_half = (_LEFT[0] * at(i - 2) + _LEFT[1] * at(i - 1)
                        + _LEFT[2] * lag0 + _LEFT[3] * lag1)
        elif i in breaks:
            lag_half = (_LEFT[3] * lag0 + _LEFT[2] * lag1
                        + _LEFT[1] * buf[i + 2] + _LEFT[0] * buf[i + 3])
        else:
            lag_half = (-at(i - 1) + 9.0 * lag0 + 9.0 * lag1 - buf[i + 2]) / 16.0
        k1 = _rhs(x, lag0, p)
        k2 = _rhs(x + 0.5 * h * k1, lag_half, p)
        k3 = _rhs(x + 0.5 * h * k2, lag_half, p)
        k4 = _rhs(x + h * k3, lag1, p)
        buf[j + 1] = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return buf[d:].copy()


def sample_and_normalize(raw, stride: int = 10, discard: int = 0,
                         out_range: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Drop ``discard`` leading samples, keep every ``stride``-th, rescale min/max to ``out_range``.

    A constant segment maps to the middle of the range.
    """
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    seg = np.asarray(raw, dtype=float)[discard::stride]
    if seg.size == 0:
        raise ConfigurationError("no samples left after transient discard")
    lo, hi = out_range
    span = seg.max() - seg.min()
    if span == 0:
        return np.full(seg.shape, 0.5 * (lo + hi))
    return lo + (hi - lo) * (seg - seg.min()) / span


def mackey_glass_inputs(n: int, p: MGParams | None = None, stride: int = 10,
                        transient_time: float = 1000.0,
                        out_range: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """``n`` normalized input samples, one per ``stride`` integration steps."""
    p = p or MGParams()
    if n < 1:
        raise ConfigurationError("need at least one input sample")
    discard = int(round(transient_time / p.dt_int))
    raw = generate(p, discard + stride * (n - 1))
    return sample_and_normalize(raw, stride, discard, out_range)


def write_sequence_csv(path, u) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u"])
        for v in u:
            w.writerow([repr(float(v))])


def read_sequence_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["u"]:
        raise SchemaError(f"{path}: expected single column with header 'u'")
    return np.array([float(r[0]) for r in rows[1:]])
