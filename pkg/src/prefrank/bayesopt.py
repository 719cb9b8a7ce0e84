"""Gaussian-process Bayesian optimization over the actuator cube.

The surrogate is a squared-exponential GP with per-dimension (ARD)
lengthscales; proposals maximize expected improvement over a seeded Sobol
candidate set refined by coordinate ascent. Hyperparameters are re-tuned
periodically by bounded multi-start ascent of the log marginal likelihood.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize as sp_optimize
from scipy.linalg import cho_solve, cholesky
from scipy.special import ndtr
from scipy.stats import qmc
from sklearn.base import BaseEstimator

from . import dataset, face
from .errors import AbortedRun, IllConditioned, InvalidInput, IoError

LENGTHSCALE_BOUNDS = (0.05, 10.0)
SIGNAL_BOUNDS = (1e-3, 10.0)
NOISE_BOUNDS = (1e-8, 0.1)

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _norm_pdf(z):
    return np.exp(-0.5 * z * z) / _SQRT_2PI


def _sq_dists(xa: np.ndarray, xb: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = xa / lengthscales
    b = xb / lengthscales
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    return np.maximum(d2, 0.0)


class GaussianProcess(BaseEstimator):
    """Squared-exponential ARD Gaussian-process regressor.

    The target is centered internally, so the prior mean is the data mean.
    `predict` returns the posterior over the latent function (observation
    noise is not added back).
    """

    def __init__(self, lengthscales=0.5, signal_variance=1.0,
                 noise_variance=1e-6, jitter=1e-6):
        self.lengthscales = lengthscales
        self.signal_variance = signal_variance
        self.noise_variance = noise_variance
        self.jitter = jitter

    def _ell(self, dim: int) -> np.ndarray:
        ell = np.asarray(self.lengthscales, dtype=np.float64)
        if ell.ndim == 0:
            ell = np.full(dim, float(ell))
        if ell.shape != (dim,):
            raise InvalidInput(f"lengthscales must be scalar or length {dim}")
        return ell

    def _kernel(self, xa, xb, ell=None, sf2=None):
        ell = self._ell(xa.shape[1]) if ell is None else ell
        sf2 = self.signal_variance if sf2 is None else sf2
        return sf2 * np.exp(-0.5 * _sq_dists(xa, xb, ell))

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
            raise InvalidInput("X must be (n, d) with matching y")
        self.X_train_ = X
        self.y_mean_ = float(y.mean())
        self.y_train_ = y
        yc = y - self.y_mean_
        k = self._kernel(X, X)
        n = X.shape[0]
        # jitter is applied lazily: noise-free posteriors interpolate exactly
        # unless the factorization actually needs stabilizing
        noise = float(self.noise_variance)
        bumps = [0.0] + [max(float(self.jitter), 1e-12) * 10.0**i for i in range(7)]
        lower = None
        for bump in bumps:
            try:
                lower = cholesky(k + (noise + bump) * np.eye(n), lower=True)
                break
            except (np.linalg.LinAlgError, ValueError):
                continue
        if lower is None:
            raise IllConditioned("kernel matrix not positive definite after jitter escalation")
        self.L_ = lower
        self.alpha_ = cho_solve((lower, True), yc)
        self.K_inv_ = cho_solve((lower, True), np.eye(n))
        return self

    def _require_fitted(self):
        if not hasattr(self, "L_"):
            raise InvalidInput("GaussianProcess is not fitted")

    def predict(self, X, return_var: bool = False):
        self._require_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        k_star = self._kernel(X, self.X_train_)
        mean = self.y_mean_ + k_star @ self.alpha_
        if not return_var:
            return mean
        var = self.signal_variance - np.einsum(
            "ij,ij->i", k_star @ self.K_inv_, k_star)
        return mean, np.maximum(var, 0.0)

    # -- hyperparameter fitting -------------------------------------------

    def _lml_and_grad(self, theta: np.ndarray, X: np.ndarray, yc: np.ndarray):
        dim = X.shape[1]
        ell = np.exp(theta[:dim])
        sf2 = np.exp(theta[dim])
        sn2 = np.exp(theta[dim + 1])
        n = X.shape[0]
        scaled = X / ell
        sq = _sq_dists(X, X, ell)
        k_se = sf2 * np.exp(-0.5 * sq)
        k = k_se + (sn2 + self.jitter) * np.eye(n)
        try:
            lower = cholesky(k, lower=True)
        except np.linalg.LinAlgError:
            return -np.inf, np.zeros_like(theta)
        alpha = cho_solve((lower, True), yc)
        lml = (
            -0.5 * yc @ alpha
            - np.sum(np.log(np.diag(lower)))
            - 0.5 * n * np.log(2.0 * np.pi)
        )
        tmp = np.outer(alpha, alpha) - cho_solve((lower, True), np.eye(n))
        grad = np.empty_like(theta)
        for d in range(dim):
            diff = scaled[:, d][:, None] - scaled[:, d][None, :]
            dk = k_se * diff * diff  # d/d(log ell_d)
            grad[d] = 0.5 * np.sum(tmp * dk)
        grad[dim] = 0.5 * np.sum(tmp * k_se)
        grad[dim + 1] = 0.5 * sn2 * np.trace(tmp)
        return float(lml), grad

    def tune(self, X, y, seed: int = 0, n_starts: int = 2, maxiter: int = 40):
        """Multi-start bounded log-marginal-likelihood ascent, then refit."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        dim = X.shape[1]
        yc = y - y.mean()
        lo = np.concatenate([
            np.full(dim, np.log(LENGTHSCALE_BOUNDS[0])),
            [np.log(SIGNAL_BOUNDS[0]), np.log(NOISE_BOUNDS[0])],
        ])
        hi = np.concatenate([
            np.full(dim, np.log(LENGTHSCALE_BOUNDS[1])),
            [np.log(SIGNAL_BOUNDS[1]), np.log(NOISE_BOUNDS[1])],
        ])
        bounds = list(zip(lo, hi))
        current = np.concatenate([
            np.log(np.clip(self._ell(dim), *LENGTHSCALE_BOUNDS)),
            [np.log(np.clip(self.signal_variance, *SIGNAL_BOUNDS)),
             np.log(np.clip(self.noise_variance, *NOISE_BOUNDS))],
        ])
        rng = np.random.default_rng(seed)
        starts = [current]
        for _ in range(max(0, n_starts - 1)):
            starts.append(rng.uniform(lo, hi))

        def objective(theta):
            lml, grad = self._lml_and_grad(theta, X, yc)
            return -lml, -grad

        best_theta, best_val = current, np.inf
        for start in starts:
            res = sp_optimize.minimize(
                objective, start, jac=True, method="L-BFGS-B",
                bounds=bounds, options={"maxiter": maxiter})
            if res.fun < best_val:
                best_val, best_theta = res.fun, res.x
        self.lengthscales = np.exp(best_theta[:dim])
        self.signal_variance = float(np.exp(best_theta[dim]))
        self.noise_variance = float(np.exp(best_theta[dim + 1]))
        return self.fit(X, y)


def gp_posterior(gp: GaussianProcess, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mean, variance) at query points; variance clamped at 0."""
    return gp.predict(x, return_var=True)


def expected_improvement(mean, variance, best_so_far) -> np.ndarray:
    """EI for maximization; exactly max(mean - best, 0) where variance is 0."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.maximum(np.asarray(variance, dtype=np.float64), 0.0)
    sigma = np.sqrt(var)
    improve = mean - best_so_far
    ei = np.where(sigma > 0.0, 0.0, np.maximum(improve, 0.0))
    positive = sigma > 0.0
    if np.any(positive):
        z = improve[positive] / sigma[positive]
        ei = ei.copy()
        ei[positive] = improve[positive] * ndtr(z) + sigma[positive] * _norm_pdf(z)
    return np.maximum(ei, 0.0)


def sobol_samples(dim: int, count: int, seed: int) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return qmc.Sobol(d=dim, scramble=True, seed=seed).random(count)


def propose(gp: GaussianProcess, seed: int = 0, n_candidates: int = 2048,
            n_refine: int = 8, refine_passes: int = 2,
            refine_points: int = 5) -> np.ndarray:
    """EI-maximizing point in [0, 1]^d: Sobol screening + coordinate ascent."""
    gp._require_fitted()
    dim = gp.X_train_.shape[1]
    best = float(gp.y_train_.max())
    candidates = sobol_samples(dim, n_candidates, seed)
    mean, var = gp.predict(candidates, return_var=True)
    ei = expected_improvement(mean, var, best)
    order = np.argsort(-ei, kind="stable")[:max(1, n_refine)]
    points = candidates[order].copy()
    values = ei[order].copy()

    radius = 0.25
    for _ in range(refine_passes):
        for d in range(dim):
            grid = np.linspace(-radius, radius, refine_points)
            trial = np.repeat(points, refine_points, axis=0)
            trial[:, d] = np.clip(
                (points[:, d][:, None] + grid[None, :]).ravel(), 0.0, 1.0)
            t_mean, t_var = gp.predict(trial, return_var=True)
            t_ei = expected_improvement(t_mean, t_var, best).reshape(
                len(points), refine_points)
            best_col = np.argmax(t_ei, axis=1)
            better = t_ei[np.arange(len(points)), best_col] > values
            points[better, d] = trial[
                np.arange(len(points)) * refine_points + best_col, d][better]
            values[better] = t_ei[np.arange(len(points)), best_col][better]
        radius *= 0.4
    return points[int(np.argmax(values))].copy()


@dataclass
class BOIteration:
    index: int
    x: np.ndarray
    value: float
    incumbent: float


@dataclass
class BOTrace:
    iterations: list[BOIteration] = field(default_factory=list)

    def __len__(self):
        return len(self.iterations)

    def incumbents(self) -> np.ndarray:
        return np.array([it.incumbent for it in self.iterations])

    def values(self) -> np.ndarray:
        return np.array([it.value for it in self.iterations])


def optimize(objective, dim: int, budget: int = 300, init: int = 20,
             seed: int = 0, refit_every: int = 10,
             gp: GaussianProcess | None = None):
    """Maximize `objective` over [0, 1]^dim with `budget` total evaluations.

    The first `init` points come from a seeded Sobol sequence; each later
    point maximizes EI under the GP surrogate, whose hyperparameters are
    re-tuned every `refit_every` iterations. Returns (best_x, trace);
    setting budget == init degenerates to pure quasi-random search.
    """
    if init < 1 or budget < init:
        raise InvalidInput("need budget >= init >= 1")
    gp = gp or GaussianProcess()
    trace = BOTrace()
    xs: list[np.ndarray] = []
    ys: list[float] = []
    incumbent = -np.inf

    def observe(x):
        nonlocal incumbent
        value = float(objective(x))
        if not np.isfinite(value):
            raise AbortedRun(
                f"objective returned non-finite value at iteration {len(trace)}",
                trace=trace)
        xs.append(x)
        ys.append(value)
        incumbent = max(incumbent, value)
        trace.iterations.append(BOIteration(len(trace), x.copy(), value, incumbent))

    for x in sobol_samples(dim, init, seed):
        observe(x)
    for i in range(init, budget):
        x_arr = np.array(xs)
        y_arr = np.array(ys)
        if (i - init) % refit_every == 0:
            gp.tune(x_arr, y_arr, seed=seed * 1_000_003 + i)
        else:
            gp.fit(x_arr, y_arr)
        observe(propose(gp, seed=seed * 1_000_003 + i))
    best = int(np.argmax(ys))
    return xs[best].copy(), trace


def random_search(objective, dim: int, budget: int, seed: int = 0):
    """Uniform random search baseline; same return shape as `optimize`."""
    if budget < 1:
        raise InvalidInput("budget must be >= 1")
    rng = np.random.default_rng(seed)
    trace = BOTrace()
    best_x, incumbent = None, -np.inf
    for i in range(budget):
        x = rng.uniform(0.0, 1.0, dim)
        value = float(objective(x))
        if not np.isfinite(value):
            raise AbortedRun(
                f"objective returned non-finite value at iteration {i}", trace=trace)
        if value > incumbent:
            incumbent, best_x = value, x
        trace.iterations.append(BOIteration(i, x, value, incumbent))
    return best_x.copy(), trace


def latent_objective(emotion, dim: int = face.DEFAULT_DIM, seed: int = 0):
    """Objective evaluating the synthetic ground-truth intensity directly."""
    emotion = face.Emotion.parse(emotion)

    def objective(v):
        return face.latent_intensity(v, emotion, dim=dim, seed=seed)

    return objective


def preference_objective(model):
    """Objective scoring a rendered actuator vector with a trained model."""
    model._require_fitted()

    def objective(v):
        img = dataset.preprocess(face.render(v))[0].ravel()
        return float(model.target_scores(img[None])[0])

    return objective


def save_trace(trace: BOTrace, path, dim: int | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if dim is None:
        dim = len(trace.iterations[0].x) if trace.iterations else 0
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "objective", "incumbent"]
                        + [f"act{i}" for i in range(dim)])
        for it in trace.iterations:
            writer.writerow([it.index, repr(it.value), repr(it.incumbent)]
                            + [repr(float(v)) for v in it.x])


def load_trace(path) -> BOTrace:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"trace file not found: {path}")
    trace = BOTrace()
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["iter", "objective", "incumbent"]:
            raise IoError(f"unexpected trace header in {path}: {header}")
        for row in reader:
            trace.iterations.append(BOIteration(
                int(row[0]), np.array([float(v) for v in row[3:]]),
                float(row[1]), float(row[2])))
    return trace
