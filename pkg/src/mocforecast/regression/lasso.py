"""LASSO with an unpenalised intercept.

The penalty level is chosen by AIC over the knots of the LARS-lasso path and
the solution at that level is refined by coordinate descent. Both kernels run
on the Gram matrix of the standardised design, so several responses sharing
one design reuse a single factorisation of the features.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)

# relative slack on |X_j' r| <= n * lam for the exact active-set solve
KNOT_TIE_TOL = 1e-3


# reassociation lets LLVM vectorise the reductions; NaN/inf semantics stay
_FAST = {"reassoc", "contract"}


class RegressionError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, sweeps: int, gap: float):
        super().__init__(f"coordinate descent did not converge in {sweeps} sweeps (duality gap {gap:.3e})")
        self.sweeps = sweeps
        self.gap = gap


@njit(cache=True, nogil=True, fastmath=_FAST)
def _chol_append(L, k, G, active, j, eps):
    """Extend the Cholesky factor of ``G[active[:k]][:, active[:k]]`` by
    column ``j``; False when ``j`` is (numerically) in the span."""
    z = np.empty(k)
    for i in range(k):
        s = G[active[i], j]
        for m in range(i):
            s -= L[i, m] * z[m]
        z[i] = s / L[i, i]
    d = G[j, j]
    for i in range(k):
        d -= z[i] * z[i]
    if d <= eps * G[j, j]:
        return False
    for i in range(k):
        L[k, i] = z[i]
    L[k, k] = np.sqrt(d)
    return True


@njit(cache=True, nogil=True, fastmath=_FAST)
def _chol_delete(L, k, idx):
    """Remove row/column ``idx`` from a ``k x k`` Cholesky factor in place
    with Givens rotations on neighbouring columns."""
    for i in range(idx, k - 1):
        for m in range(i + 2):
            L[i, m] = L[i + 1, m]
    for m in range(k):
        L[k - 1, m] = 0.0
    for j in range(idx, k - 1):
        a = L[j, j]
        b = L[j, j + 1]
        r = np.hypot(a, b)
        c = a / r
        s = b / r
        for i in range(j, k - 1):
            x = L[i, j]
            y = L[i, j + 1]
            L[i, j] = c * x + s * y
            L[i, j + 1] = c * y - s * x
        L[j, j + 1] = 0.0


@njit(cache=True, nogil=True, fastmath=_FAST)
def _chol_solve(L, k, b):
    z = np.empty(k)
    for i in range(k):
        s = b[i]
        for m in range(i):
            s -= L[i, m] * z[m]
        z[i] = s / L[i, i]
    # back substitution by rows of L, so the inner loop is contiguous
    for i in range(k - 1, -1, -1):
        z[i] /= L[i, i]
        xi = z[i]
        for m in range(i):
            z[m] -= L[i, m] * xi
    return z


@njit(cache=True, nogil=True, fastmath=_FAST)
def _lars_lasso(G, c, n, max_steps):
    """Knots of the lasso path for Gram ``G`` and correlations ``c``.

    Returns ``(alphas, coefs, explained)`` with ``alphas`` non-increasing
    on the ``(1/2n)`` objective scale and ``explained = yy - rss`` at each
    knot, from ``b'Gb = b'c - b'(c - Gb)``.
    """
    p = c.shape[0]
    alphas = np.zeros(max_steps + 1)
    coefs = np.zeros((max_steps + 1, p))
    explained = np.zeros(max_steps + 1)
    beta = np.zeros(p)
    cov = c.copy()
    active = np.empty(p, np.int64)
    is_active = np.zeros(p, np.bool_)
    excluded = np.zeros(p, np.bool_)
    L = np.zeros((p, p))
    n_act = 0
    j = 0
    cmax = 0.0
    for i in range(p):
        if G[i, i] <= 0:
            excluded[i] = True
        elif abs(cov[i]) > cmax:
            cmax = abs(cov[i])
            j = i
    alphas[0] = cmax / n
    k = 1
    if cmax <= 1e-14 * max(1.0, np.abs(c).max()):
        return alphas[:1], coefs[:1], explained[:1]
    tiny = 1e-12 * cmax
    to_add = j
    add_next = True
    for _ in range(max_steps):
        if add_next:
            if n_act >= n - 1:
                break
            if _chol_append(L, n_act, G, active, to_add, 1e-10):
                active[n_act] = to_add
                is_active[to_add] = True
                n_act += 1
            else:
                excluded[to_add] = True
                if n_act == 0:
                    break
        s = np.empty(n_act)
        big = 0.0
        for i in range(n_act):
            v = cov[active[i]]
            s[i] = 1.0 if v >= 0 else -1.0
            big = max(big, abs(v))
        w = _chol_solve(L, n_act, s)
        aa = 0.0
        for i in range(n_act):
            aa += s[i] * w[i]
        aa = 1.0 / np.sqrt(aa)
        for i in range(n_act):
            w[i] *= aa
        a = np.zeros(p)
        for i in range(n_act):
            col = active[i]
            for m in range(p):
                a[m] += G[col, m] * w[i]
        gamma = big / aa
        to_add = -1
        for m in range(p):
            if is_active[m] or excluded[m]:
                continue
            den = aa - a[m]
            if den > 1e-14:
                g = (big - cov[m]) / den
                if tiny < g < gamma:
                    gamma = g
                    to_add = m
            den = aa + a[m]
            if den > 1e-14:
                g = (big + cov[m]) / den
                if tiny < g < gamma:
                    gamma = g
                    to_add = m
        drop = -1
        for i in range(n_act):
            if w[i] != 0.0:
                # any positive step to zero counts, however small
                g = -beta[active[i]] / w[i]
                if 0.0 < g < gamma:
                    gamma = g
                    drop = i
        for i in range(n_act):
            beta[active[i]] += gamma * w[i]
        for m in range(p):
            cov[m] -= gamma * a[m]
        level = big - gamma * aa
        if drop >= 0:
            gone = active[drop]
            beta[gone] = 0.0
            is_active[gone] = False
            for i in range(drop, n_act - 1):
                active[i] = active[i + 1]
            _chol_delete(L, n_act, drop)
            n_act -= 1
            add_next = False
        else:
            add_next = True
        alphas[k] = max(level, 0.0) / n
        coefs[k] = beta
        e = 0.0
        for i in range(n_act):
            col = active[i]
            e += beta[col] * (c[col] + cov[col])
        explained[k] = e
        k += 1
        if level <= tiny or k > max_steps:
            break
        if drop < 0 and to_add < 0:
            break
    return alphas[:k], coefs[:k], explained[:k]


@njit(cache=True, nogil=True)
def _objective(G, c, yy, n, lam, beta):
    rss = yy - 2.0 * np.dot(beta, c) + np.dot(beta, G @ beta)
    return 0.5 * max(rss, 0.0) / n + lam * np.abs(beta).sum()


@njit(cache=True, nogil=True)
def _cd_gram(G, c, yy, n, lam, beta, tol, max_sweeps, debug):
    """Cyclic coordinate descent in place on ``beta``.

    Stops once the largest coefficient change of a sweep falls below
    ``tol * max(1, max |beta|)``. Returns ``(sweeps, converged, monotone)``.
    """
    p = c.shape[0]
    r = c - G @ beta
    # a correlation equal to n * lam up to round-off stays at zero (knot ties)
    nl = n * lam * (1.0 + 1e-11)
    monotone = True
    prev = _objective(G, c, yy, n, lam, beta) if debug else 0.0
    for sweep in range(max_sweeps):
        maxd = 0.0
        wmax = 1.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0:
                continue
            old = beta[j]
            rho = r[j] + gjj * old
            if rho > nl:
                new = (rho - nl) / gjj
            elif rho < -nl:
                new = (rho + nl) / gjj
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                beta[j] = new
                for m in range(p):
                    r[m] -= G[j, m] * d
                if abs(d) > maxd:
                    maxd = abs(d)
            if abs(new) > wmax:
                wmax = abs(new)
        if debug:
            cur = _objective(G, c, yy, n, lam, beta)
            if cur > prev + 1e-12 * max(1.0, abs(prev)):
                monotone = False
            prev = cur
        if maxd < tol * wmax:
            return sweep + 1, True, monotone
    return max_sweeps, False, monotone


def _duality_gap(G, c, yy, n, lam, beta) -> float:
    rss = max(yy - 2 * beta @ c + beta @ G @ beta, 0.0)
    xr = c - G @ beta
    primal = 0.5 * rss / n + lam * np.abs(beta).sum()
    big = np.abs(xr).max() if xr.size else 0.0
    scale = 1.0 if big <= n * lam else n * lam / big
    ry = yy - beta @ c
    dual = scale * ry / n - 0.5 * scale**2 * rss / n
    return float(primal - dual)


@dataclass(frozen=True)
class Standardizer:
    """Column centring and scaling (population sd); constant columns keep
    scale 1 and are flagged so they never enter a model."""

    center: np.ndarray
    scale: np.ndarray
    constant: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        center = X.mean(axis=0)
        sd = X.std(axis=0)
        constant = sd <= 1e-12 * np.maximum(1.0, np.abs(center))
        return cls(center, np.where(constant, 1.0, sd), constant)

    def transform(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.center) / self.scale
        Z[..., self.constant] = 0.0
        return Z


@dataclass(frozen=True)
class LarsPath:
    alphas: np.ndarray  # (m,) penalty at each knot
    coefs: np.ndarray  # (m, p) standardised-scale coefficients
    rss: np.ndarray
    df: np.ndarray

    def aic(self, n: int) -> np.ndarray:
        return n * np.log(self.rss / n) + 2 * self.df


@dataclass(frozen=True, eq=False)
class LassoFit:
    """Coefficients on the original feature scale. ``coef`` is ``(p,)`` for
    one response and ``(p, m)`` for ``m`` responses."""

    coef: np.ndarray
    intercept: np.ndarray | float
    lam: np.ndarray | float
    standardizer: Standardizer
    sweeps: int = 0

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef + self.intercept

    @property
    def active(self) -> np.ndarray:
        return self.coef != 0


def _prepare(X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise RegressionError("design must be 2-D")
    Y = np.asarray(y, dtype=float)
    if Y.shape[0] != X.shape[0]:
        raise RegressionError(f"design has {X.shape[0]} rows, response {Y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise RegressionError("non-finite values in design or response")
    st = Standardizer.fit(X)
    Z = np.ascontiguousarray(st.transform(X))
    G = np.ascontiguousarray(Z.T @ Z)
    return X, Y, st, Z, G


def _path(G, c, yy, n, max_steps=None) -> LarsPath:
    p = c.size
    steps = max_steps or 8 * p + 50
    alphas, coefs, explained = _lars_lasso(G, np.ascontiguousarray(c), n, steps)
    rss = yy - explained
    floor = max(yy, 1.0) * 1e-12
    rss = np.maximum(rss, floor)
    df = np.count_nonzero(coefs, axis=1)
    return LarsPath(alphas, coefs, rss, df)


def lars_path(X, y) -> LarsPath:
    """LARS-lasso knots for one response on the standardised design."""
    X, y, _, Z, G = _prepare(X, y)
    yc = y - y.mean()
    return _path(G, Z.T @ yc, float(yc @ yc), X.shape[0])


def _select(path: LarsPath, n: int) -> int:
    """AIC-minimising knot among those leaving residual degrees of freedom
    (active set plus intercept below ``n``); ties go to the larger penalty."""
    aic = np.where(path.df + 1 < n, path.aic(n), np.inf)
    return int(np.argmin(aic))


def lars_lambda_by_aic(X, y) -> float:
    """Penalty of the AIC-minimising knot; ``inf`` for a constant response."""
    X, y, _, Z, G = _prepare(X, y)
    yc = y - y.mean()
    yy = float(yc @ yc)
    if yy <= 1e-24 * max(1.0, float(y @ y)):
        return float("inf")
    path = _path(G, Z.T @ yc, yy, X.shape[0])
    return float(path.alphas[_select(path, X.shape[0])])


def _active_set_solution(G, c, n, lam, support):
    """Exact lasso solution on a fixed support and sign pattern, or ``None``
    when signs flip or an inactive column breaks the optimality bound by
    more than ``KNOT_TIE_TOL``."""
    A = np.flatnonzero(support)
    s = np.sign(support[A])
    out = np.zeros(c.size)
    if A.size:
        try:
            bA = np.linalg.solve(G[np.ix_(A, A)], c[A] - n * lam * s)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.sign(bA) == s):
            return None
        out[A] = bA
    r = np.abs(c - G @ out)
    r[A] = 0.0
    if r.max(initial=0.0) > n * lam * (1.0 + KNOT_TIE_TOL):
        return None
    return out


def _solve(G, c, yy, n, lam, beta0, tol, max_sweeps, debug):
    beta = np.array(beta0, dtype=float, copy=True)
    if not np.isfinite(lam):
        return np.zeros_like(beta), 0
    sweeps, ok, monotone = _cd_gram(G, c, yy, n, float(lam), beta, tol, max_sweeps, debug)
    if debug and not monotone:
        raise AssertionError("coordinate-descent objective increased between sweeps")
    if not ok:
        # near-interpolating designs (p > n) at a path knot: a column tied at
        # the bound makes CD crawl; the warm start's support is then exact
        exact = _active_set_solution(G, c, n, float(lam), np.asarray(beta0, dtype=float))
        if exact is None:
            raise ConvergenceError(sweeps, _duality_gap(G, c, yy, n, lam, beta))
        logger.debug("CD stalled after %d sweeps; using the exact solution on the warm-start support", sweeps)
        return exact, sweeps
    # CD stops on small steps, which can leave slow directions short of the
    # optimum; finish with the exact solve on the support it found
    exact = _active_set_solution(G, c, n, float(lam), beta)
    if exact is not None and _objective(G, c, yy, n, lam, exact) <= _objective(G, c, yy, n, lam, beta):
        return exact, sweeps
    return beta, sweeps


def fit_lasso_cd(X, y, lam, *, warm_start=None, tol: float = 1e-8, max_sweeps: int = 100_000, debug: bool = False) -> LassoFit:
    """Minimise ``(1/2n)||y - b0 - Z b||^2 + lam ||b||_1`` on the standardised
    design ``Z``; ``warm_start`` is on the standardised scale."""
    if not lam >= 0:
        raise RegressionError(f"penalty must be non-negative, got {lam}")
    X, y, st, Z, G = _prepare(X, y)
    if y.ndim != 1:
        raise RegressionError("fit_lasso_cd takes one response; use fit_lasso_aic for several")
    n = X.shape[0]
    yc = y - y.mean()
    c = np.ascontiguousarray(Z.T @ yc)
    beta0 = np.zeros(X.shape[1]) if warm_start is None else warm_start
    beta, sweeps = _solve(G, c, float(yc @ yc), n, lam, beta0, tol, max_sweeps, debug)
    coef = beta / st.scale
    return LassoFit(coef, float(y.mean() - st.center @ coef), float(lam), st, sweeps)


def fit_lasso_aic(X, Y, *, tol: float = 1e-8, max_sweeps: int = 100_000, debug: bool = False) -> LassoFit:
    """AIC-tuned LASSO for each column of ``Y`` (or a single response),
    sharing the standardised design across responses."""
    X, Y, st, Z, G = _prepare(X, Y)
    single = Y.ndim == 1
    Y2 = Y[:, None] if single else Y
    n, p = X.shape
    m = Y2.shape[1]
    coef = np.zeros((p, m))
    lams = np.empty(m)
    sweeps = 0
    means = Y2.mean(axis=0)
    Yc = Y2 - means
    C = Z.T @ Yc
    for k in range(m):
        yy = float(Yc[:, k] @ Yc[:, k])
        if yy <= 1e-24 * max(1.0, float(Y2[:, k] @ Y2[:, k])):
            lams[k] = np.inf
            continue
        c = np.ascontiguousarray(C[:, k])
        path = _path(G, c, yy, n)
        i = _select(path, n)
        lams[k] = path.alphas[i]
        beta, s = _solve(G, c, yy, n, lams[k], path.coefs[i], tol, max_sweeps, debug)
        coef[:, k] = beta / st.scale
        sweeps += s
    intercept = means - st.center @ coef
    if single:
        return LassoFit(coef[:, 0], float(intercept[0]), float(lams[0]), st, sweeps)
    return LassoFit(coef, intercept, lams, st, sweeps)
