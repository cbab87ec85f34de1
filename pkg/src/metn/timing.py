"""Point-process time layers: Poisson, piecewise NHPP, and Hawkes kernels.

Every model exposes the same surface: conditional intensity, closed-form
compensator, log-likelihood, exact simulation, and a multiplicative
rescaling used when a profile is fitted to a part budget. Hawkes kernels
use the branching-ratio form, so ``eta`` is always the kernel mass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import optimize, stats

from . import _kernels
from .events import DataError

KINDS = ("poisson", "nhpp", "hawkes-exp", "hawkes-pl")


def _as_times(times) -> np.ndarray:
    t = np.ascontiguousarray(times, dtype=np.float64)
    if t.ndim != 1:
        raise ValueError("times must be one-dimensional")
    if t.size and (np.any(np.diff(t) < 0) or t[0] < 0):
        raise ValueError("times must be sorted and nonnegative")
    return t


def _check_history(history, t):
    h = _as_times(history)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if h.size and h[-1] > t:
        raise ValueError("history must precede t")
    return h


def _seed_from(rng) -> int:
    rng = np.random.default_rng(rng)
    return int(rng.integers(0, 2**31 - 1))


@dataclass(frozen=True)
class HomPoisson:
    rate: float
    kind = "poisson"

    def __post_init__(self):
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValueError("rate must be finite and nonnegative")

    @property
    def params(self) -> dict:
        return {"rate": self.rate}

    @property
    def mean_rate(self) -> float:
        return self.rate

    def intensity(self, t, history=()):
        _check_history(history, t)
        return self.rate

    def event_intensities(self, times):
        return np.full(_as_times(times).size, self.rate)

    def cumulative(self, times):
        return self.rate * _as_times(times)

    def integral(self, times, T):
        return self.rate * T

    def expected_count(self, T):
        return self.rate * T

    def scaled(self, g):
        return HomPoisson(self.rate * g)

    def on_window(self, T):
        return self

    def simulate(self, T, rng=None):
        rng = np.random.default_rng(rng)
        k = rng.poisson(self.rate * T)
        return np.sort(rng.uniform(0.0, T, size=k))


@dataclass(frozen=True)
class PiecewiseNHPP:
    """Rate ``rates[b]`` on ``[edges[b], edges[b+1])``; the last bin is closed."""

    edges: tuple
    rates: tuple
    kind = "nhpp"

    def __post_init__(self):
        e = np.asarray(self.edges, float)
        r = np.asarray(self.rates, float)
        object.__setattr__(self, "edges", tuple(e.tolist()))
        object.__setattr__(self, "rates", tuple(r.tolist()))
        if e.size != r.size + 1 or r.size == 0:
            raise ValueError("need len(edges) == len(rates) + 1 >= 2")
        if e[0] != 0 or np.any(np.diff(e) <= 0):
            raise ValueError("edges must start at 0 and increase strictly")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("rates must be finite and nonnegative")

    @property
    def params(self) -> dict:
        return {"edges": list(self.edges), "rates": list(self.rates)}

    @property
    def window(self) -> float:
        return self.edges[-1]

    @property
    def mean_rate(self) -> float:
        return self.expected_count(self.window) / self.window

    def _bin(self, t):
        e = np.asarray(self.edges)
        t = np.asarray(t, float)
        if np.any(t < 0) or np.any(t > e[-1] * (1 + 1e-12)):
            raise ValueError(f"time outside the profile window [0, {e[-1]}]")
        return np.clip(np.searchsorted(e, t, side="right") - 1, 0, len(self.rates) - 1)

    def intensity(self, t, history=()):
        _check_history(history, t)
        return self.rates[int(self._bin(t))]

    def event_intensities(self, times):
        t = _as_times(times)
        return np.asarray(self.rates)[self._bin(t)]

    def _cum(self, t):
        e = np.asarray(self.edges)
        r = np.asarray(self.rates)
        b = self._bin(t)
        full = np.concatenate([[0.0], np.cumsum(r * np.diff(e))])
        return full[b] + r[b] * (np.asarray(t) - e[b])

    def cumulative(self, times):
        return self._cum(_as_times(times))

    def integral(self, times, T):
        return float(self._cum(T))

    def expected_count(self, T):
        return float(self._cum(T))

    def scaled(self, g):
        return PiecewiseNHPP(self.edges, tuple(g * r for r in self.rates))

    def on_window(self, T):
        """Same profile stretched onto ``[0, T]`` (rates kept)."""
        if T == self.window:
            return self
        f = T / self.window
        return PiecewiseNHPP(tuple(e * f for e in self.edges), self.rates)

    def simulate(self, T=None, rng=None):
        rng = np.random.default_rng(rng)
        T = self.window if T is None else T
        model = self.on_window(T)
        e = np.asarray(model.edges)
        out = []
        for lo, hi, r in zip(e[:-1], e[1:], model.rates):
            k = rng.poisson(r * (hi - lo))
            out.append(rng.uniform(lo, hi, size=k))
        return np.sort(np.concatenate(out)) if out else np.empty(0)


def _rescaled(model, g):
    """Hawkes intensity multiplied by ``g``, skipping the subcritical check.

    ``g * lambda(t | history)`` is a valid conditional intensity on a finite
    window even when ``g * eta >= 1``; only user-built models must be stable.
    """
    new = object.__new__(type(model))
    for f in fields(model):
        v = getattr(model, f.name)
        object.__setattr__(new, f.name, v * g if f.name in ("mu", "eta") else v)
    return new


def _check_hawkes(mu, eta):
    if not (mu >= 0 and math.isfinite(mu)):
        raise ValueError("mu must be finite and nonnegative")
    if not 0 <= eta < 1:
        raise ValueError(f"branching ratio must lie in [0, 1), got {eta}")


@dataclass(frozen=True)
class HawkesExp:
    mu: float
    eta: float
    beta: float
    kind = "hawkes-exp"

    def __post_init__(self):
        _check_hawkes(self.mu, self.eta)
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def params(self) -> dict:
        return {"mu": self.mu, "eta": self.eta, "beta": self.beta}

    @property
    def mean_rate(self) -> float:
        return self.mu / (1.0 - self.eta)

    def kernel(self, lag):
        lag = np.asarray(lag, float)
        return self.eta * self.beta * np.exp(-self.beta * lag)

    def intensity(self, t, history=()):
        h = _check_history(history, t)
        return float(self.mu + self.kernel(t - h).sum())

    def event_intensities(self, times):
        t = _as_times(times)
        return self.mu + self.eta * self.beta * _kernels.exp_excitation(t, self.beta)

    def cumulative(self, times):
        t = _as_times(times)
        A = _kernels.exp_excitation(t, self.beta)
        return self.mu * t + self.eta * (np.arange(t.size) - A)

    def integral(self, times, T):
        t = _as_times(times)
        return float(self.mu * T + self.eta * np.sum(-np.expm1(-self.beta * (T - t))))

    def expected_count(self, T):
        k = self.beta * (1.0 - self.eta)
        base = self.mu * T / (1.0 - self.eta)
        return float(base - self.mu * self.eta / (self.beta * (1.0 - self.eta) ** 2) * -np.expm1(-k * T))

    def scaled(self, g):
        return _rescaled(self, g)

    def on_window(self, T):
        return self

    def simulate(self, T, rng=None):
        return _kernels.exp_thinning(self.mu, self.eta, self.beta, float(T), _seed_from(rng))

    def offspring_lags(self, size, rng):
        return rng.exponential(1.0 / self.beta, size=size)


@dataclass(frozen=True)
class HawkesPL:
    """Power-law kernel ``eta (gamma-1) c^(gamma-1) (lag + c)^-gamma``."""

    mu: float
    eta: float
    c: float
    gamma: float
    kind = "hawkes-pl"

    def __post_init__(self):
        _check_hawkes(self.mu, self.eta)
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")

    @property
    def params(self) -> dict:
        return {"mu": self.mu, "eta": self.eta, "c": self.c, "gamma": self.gamma}

    @property
    def mean_rate(self) -> float:
        return self.mu / (1.0 - self.eta)

    def kernel(self, lag):
        lag = np.asarray(lag, float)
        g = self.gamma
        return self.eta * (g - 1) * self.c ** (g - 1) * (lag + self.c) ** (-g)

    def _kernel_mass(self, lag):
        # integral of the kernel over [0, lag]
        lag = np.asarray(lag, float)
        return self.eta * (1.0 - (self.c / (lag + self.c)) ** (self.gamma - 1))

    def intensity(self, t, history=()):
        h = _check_history(history, t)
        return float(self.mu + self.kernel(t - h).sum())

    def event_intensities(self, times):
        t = _as_times(times)
        g = self.gamma
        kappa = self.eta * (g - 1) * self.c ** (g - 1)
        return self.mu + kappa * _kernels.pl_excitation(t, self.c, g)

    def cumulative(self, times):
        t = _as_times(times)
        return self.mu * t + self.eta * _kernels.pl_spent(t, self.c, self.gamma)

    def integral(self, times, T):
        t = _as_times(times)
        return float(self.mu * T + self._kernel_mass(T - t).sum())

    def expected_count(self, T, steps=2000):
        # mean intensity from an empty start solves m = mu + h * m; discretized
        # on a uniform grid with exact kernel mass per cell
        grid = np.linspace(0.0, T, steps + 1)
        dt = grid[1] - grid[0]
        cell = np.diff(self._kernel_mass(grid))  # mass of lags in [k dt, (k+1) dt]
        m = np.empty(steps)
        for i in range(steps):
            m[i] = self.mu + np.dot(m[:i][::-1], cell[:i]) if i else self.mu
        # cell i holds the mean rate on [grid[i], grid[i+1]]
        return float(m.sum() * dt)

    def scaled(self, g):
        return _rescaled(self, g)

    def on_window(self, T):
        return self

    def simulate(self, T, rng=None):
        return _kernels.pl_thinning(self.mu, self.eta, self.c, self.gamma, float(T), _seed_from(rng))

    def offspring_lags(self, size, rng):
        u = rng.uniform(size=size)
        return self.c * (u ** (-1.0 / (self.gamma - 1.0)) - 1.0)


TimeModel = HomPoisson | PiecewiseNHPP | HawkesExp | HawkesPL
_CLASSES = {cls.kind: cls for cls in (HomPoisson, PiecewiseNHPP, HawkesExp, HawkesPL)}


def model_to_dict(model) -> dict:
    return {"kind": model.kind, "params": model.params}


def model_from_dict(d: dict):
    try:
        cls = _CLASSES[d["kind"]]
    except KeyError:
        raise ValueError(f"unknown time model kind {d.get('kind')!r}") from None
    return cls(**d["params"])


def save_time_model(path, model, T: float, loglik: float | None = None, **extra) -> None:
    doc = {**model_to_dict(model), "T": float(T), "loglik": loglik, **extra}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_time_model(path):
    doc = json.loads(Path(path).read_text())
    return model_from_dict(doc), doc


# --- module-level operations -------------------------------------------------


def intensity(model, history, t: float) -> float:
    return model.intensity(t, history)


def log_likelihood(model, times, T: float) -> float:
    """Sum of log-intensities at events minus the compensator on ``[0, T]``.

    Returns ``-inf`` when the intensity vanishes at an event.
    """
    t = _as_times(times)
    if t.size and t[-1] > T:
        raise ValueError("events beyond the window")
    model = model.on_window(T)
    lam = model.event_intensities(t)
    comp = model.integral(t, T)
    if np.any(lam <= 0):
        return float("-inf")
    return float(np.log(lam).sum() - comp)


def compensator_transform(model, times) -> np.ndarray:
    """Increments of the compensator between consecutive events (from 0)."""
    lam_cum = model.cumulative(_as_times(times))
    return np.diff(np.concatenate([[0.0], lam_cum]))


def ks_exponential(gaps) -> float:
    """KS p-value of transformed gaps against unit exponential."""
    return float(stats.kstest(gaps, "expon").pvalue)


def simulate(model, T: float, seed=None) -> np.ndarray:
    return model.simulate(T, np.random.default_rng(seed))


def simulate_branching(model, T: float, rng=None) -> np.ndarray:
    """Cluster-representation sampler for Hawkes kinds.

    Immigrants arrive at rate ``mu``; every event has Poisson(eta) children
    at kernel-distributed lags. Equivalent in law to thinning, and linear in
    the number of events for either kernel.
    """
    rng = np.random.default_rng(rng)
    n0 = rng.poisson(model.mu * T)
    gen = rng.uniform(0.0, T, size=n0)
    out = [gen]
    while gen.size:
        kids = rng.poisson(model.eta, size=gen.size)
        parents = np.repeat(gen, kids)
        gen = parents + model.offspring_lags(parents.size, rng)
        gen = gen[gen <= T]
        out.append(gen)
    return np.sort(np.concatenate(out))


class FitResult(NamedTuple):
    model: object
    loglik: float
    iterations: int
    converged: bool


_PARAMS = {"hawkes-exp": ("mu", "eta", "beta"), "hawkes-pl": ("mu", "eta", "c", "gamma")}


def _unpack(kind, theta):
    th = np.clip(theta, -30.0, 30.0)
    mu = math.exp(th[0])
    eta = 1.0 / (1.0 + math.exp(-th[1]))
    if kind == "hawkes-exp":
        return (mu, eta, math.exp(th[2]))
    return (mu, eta, math.exp(th[2]), 1.0 + math.exp(th[3]))


def _pack(kind, p):
    mu, eta = p[0], p[1]
    head = [math.log(mu), math.log(eta / (1 - eta))]
    if kind == "hawkes-exp":
        return np.array(head + [math.log(p[2])])
    return np.array(head + [math.log(p[2]), math.log(p[3] - 1)])


def hawkes_loglik_grad(kind, times, T, p):
    """Log-likelihood and its gradient in natural parameters."""
    t = _as_times(times)
    if kind == "hawkes-exp":
        out = _kernels.exp_loglik_grad(t, float(T), *map(float, p))
    else:
        out = _kernels.pl_loglik_grad(t, float(T), *map(float, p))
    return out[0], np.array(out[1:])


def _objective(kind, t, T, scale):
    def f(theta):
        p = _unpack(kind, theta)
        ll, g = hawkes_loglik_grad(kind, t, T, p)
        if not np.isfinite(ll):
            return 1e300, np.zeros_like(theta)
        # chain rule into log / logit coordinates
        jac = np.array([p[0], p[1] * (1 - p[1])] + ([p[2]] if kind == "hawkes-exp" else [p[2], p[3] - 1]))
        return -ll / scale, -(g * jac) / scale
    return f


def _fit_hawkes(kind, t, T, restarts, seed, max_iter):
    K = t.size
    if K < 2:
        raise DataError("Hawkes fitting needs at least two events")
    if T <= 0:
        raise DataError("window must be positive")
    gap = float(np.mean(np.diff(t))) if np.any(np.diff(t) > 0) else T / K
    gap = max(gap, T * 1e-9)
    base = [0.5 * K / T, 0.5, 1.0 / gap] if kind == "hawkes-exp" else [0.5 * K / T, 0.5, gap, 2.0]
    rng = np.random.default_rng(seed)
    starts = [base]
    for _ in range(restarts):
        jit = np.exp(rng.normal(0.0, 0.5, size=len(base)))
        s = [base[0] * jit[0], rng.uniform(0.1, 0.9), base[2] * jit[2]]
        if kind == "hawkes-pl":
            s.append(1.0 + jit[3])
        starts.append(s)
    f = _objective(kind, t, T, K)
    best = None
    for s in starts:
        theta0 = _pack(kind, s)
        if f(theta0)[0] >= 1e300:
            continue
        res = optimize.minimize(f, theta0, jac=True, method="L-BFGS-B",
                                options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-9})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun) or best.fun >= 1e300:
        raise DataError("log-likelihood is not finite at any initialization")
    p = _unpack(kind, best.x)
    cls = HawkesExp if kind == "hawkes-exp" else HawkesPL
    model = cls(*p)
    return FitResult(model, log_likelihood(model, t, T), int(best.nit), bool(best.success))


def fit(kind: str, times, T: float, *, bins: int = 50, restarts: int = 3, seed=0,
        max_iter: int = 500) -> FitResult:
    """Maximum-likelihood fit of a time layer on ``[0, T]``."""
    t = _as_times(times)
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {KINDS}")
    if t.size == 0:
        raise DataError("cannot fit a time layer to an empty event set")
    if t[-1] > T:
        raise DataError("events beyond the window")
    if kind == "poisson":
        model = HomPoisson(t.size / T)
        return FitResult(model, log_likelihood(model, t, T), 0, True)
    if kind == "nhpp":
        edges = np.linspace(0.0, T, bins + 1)
        counts = np.bincount(np.clip(np.searchsorted(edges, t, side="right") - 1, 0, bins),
                             minlength=bins)
        model = PiecewiseNHPP(edges, counts / np.diff(edges))
        return FitResult(model, log_likelihood(model, t, T), 0, True)
    return _fit_hawkes(kind, t, T, restarts, seed, max_iter)


class GapMoments(NamedTuple):
    mean: float
    variance: float
    method: str  # "analytic" or "simulated"


def implied_gap_moments(model, n_events: int = 10**6, seed=0, burn_in: float = 0.1) -> GapMoments:
    """Stationary inter-event gap mean and variance implied by a time model.

    Poisson is closed form. For Hawkes the mean is ``(1 - eta) / mu`` and the
    variance comes from one long seeded cluster simulation after a burn-in.
    """
    if model.kind == "poisson":
        if model.rate <= 0:
            return GapMoments(float("inf"), float("inf"), "analytic")
        return GapMoments(1.0 / model.rate, 1.0 / model.rate**2, "analytic")
    rng = np.random.default_rng(seed)
    if model.kind == "nhpp":
        Lam = model.expected_count(model.window)
        reps = max(1, int(math.ceil(n_events / max(Lam, 1.0))))
        gaps = [np.diff(model.simulate(model.window, rng)) for _ in range(reps)]
        gaps = np.concatenate(gaps)
        return GapMoments(model.window / Lam, float(gaps.var(ddof=1)), "simulated")
    rate = model.mean_rate
    T = n_events / rate
    t = simulate_branching(model, T * (1 + burn_in), rng)
    gaps = np.diff(t[t >= T * burn_in])
    return GapMoments(1.0 / rate, float(gaps.var(ddof=1)), "simulated")
