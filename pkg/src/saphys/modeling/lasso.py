"""L1-penalised least squares by cyclic coordinate descent."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

TOL = 1e-7
MAX_SWEEPS = 100_000
MAX_R2 = 0.999
DENSE_GRAM_MAX_P = 3000
SINGULAR = 1e-11  # eigenvalue ratio treated as rank deficiency


class LassoConvergenceError(RuntimeError):
    pass


@njit(cache=True)
def _soft(z, lam):
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


@njit(cache=True)
def _support(beta, ws, nws):
    na = 0
    for w in range(nws):
        if beta[ws[w]] != 0.0:
            na += 1
    A = np.empty(na, np.int64)
    k = 0
    for w in range(nws):
        if beta[ws[w]] != 0.0:
            A[k] = ws[w]
            k += 1
    A.sort()
    return A


@njit(cache=True)
def _gram(store, slot, A):
    na = len(A)
    G = np.empty((na, na))
    for a in range(na):
        for b in range(na):
            G[a, b] = store[slot[A[b]], A[a]]
    return G


@njit(cache=True)
def _rebuild(g, c, store, slot, beta, A):
    for k in range(len(g)):
        v = c[k]
        for a in range(len(A)):
            v -= store[slot[A[a]], k] * beta[A[a]]
        g[k] = v


@njit(cache=True)
def _reduce(beta, store, slot, A):
    """Shrink a rank-deficient support without changing the fit.

    Along a null vector of G_AA the fit is fixed and the L1 norm is linear,
    so moving in its non-increasing direction until a coefficient reaches
    zero never raises the objective. Repeats until G_AA is nonsingular.
    Returns the reduced support and its Gram matrix.
    """
    G = _gram(store, slot, A)
    while len(A) > 0:
        w, V = np.linalg.eigh(G)
        if w[0] > SINGULAR * max(w[-1], 1e-300):
            break
        d = V[:, 0].copy()
        slope = 0.0
        for a in range(len(A)):
            slope += np.sign(beta[A[a]]) * d[a]
        if slope > 0.0:
            d = -d
        step = np.inf
        hit = 0
        for a in range(len(A)):
            b0 = beta[A[a]]
            if d[a] != 0.0 and np.sign(d[a]) != np.sign(b0):
                t = -b0 / d[a]
                if t < step:
                    step = t
                    hit = a
        if not np.isfinite(step):
            break
        for a in range(len(A)):
            beta[A[a]] += step * d[a]
        beta[A[hit]] = 0.0
        keep = np.empty(len(A) - 1, np.int64)
        k = 0
        for a in range(len(A)):
            if a != hit and beta[A[a]] != 0.0:
                keep[k] = A[a]
                k += 1
        A = keep[:k]
        G = _gram(store, slot, A)
    return A, G


@njit(cache=True)
def _newton(beta, g, c, tss_n, store, slot, ws, nws, lam, cache_a, cache_na, cache_inv, refactor):
    """Jump to the exact solution for the current support and signs.

    Solves G_AA b = c_A - lam * s_A with a cached inverse of G_AA (reused
    while the support is unchanged, rebuilt only if ``refactor``). A
    rank-deficient support is first reduced along null directions. When a
    sign would flip, the step stops where the first coefficient reaches
    zero. Moves that fail to lower the objective are undone.
    Returns (moved, cache size, cached inverse).
    """
    A = _support(beta, ws, nws)
    na = len(A)
    if na == 0:
        return False, cache_na, cache_inv
    same = na == cache_na
    if same:
        for a in range(na):
            if A[a] != cache_a[a]:
                same = False
                break
    moved = False
    if not same:
        if not refactor:
            return False, cache_na, cache_inv
        A, G = _reduce(beta, store, slot, A)
        if len(A) < na:
            moved = True
            na = len(A)
            _rebuild(g, c, store, slot, beta, A)
            if na == 0:
                return True, cache_na, cache_inv
        try:
            inv = np.linalg.inv(G)
        except Exception:
            return moved, cache_na, cache_inv
        cache_inv = inv
        cache_na = na
        cache_a[:na] = A
    rhs = np.empty(na)
    for a in range(na):
        rhs[a] = c[A[a]] - lam * np.sign(beta[A[a]])
    sol = np.zeros(na)
    for a in range(na):
        for b in range(na):
            sol[a] += cache_inv[a, b] * rhs[b]
    # on a sign change, stop at the first zero crossing: within one sign
    # orthant the objective is a convex quadratic minimised at ``sol``
    step = 1.0
    hit = -1
    for a in range(na):
        if not np.isfinite(sol[a]):
            return moved, cache_na, cache_inv
        b0 = beta[A[a]]
        if np.sign(sol[a]) != np.sign(b0):
            t = b0 / (b0 - sol[a])
            if t < step:
                step = t
                hit = a
    if hit >= 0 and step <= 0.0:
        return moved, cache_na, cache_inv
    for a in range(na):
        b0 = beta[A[a]]
        sol[a] = b0 + step * (sol[a] - b0)
    if hit >= 0:
        sol[hit] = 0.0
    before = _objective(beta, g, c, tss_n, lam)
    old_beta = np.empty(na)
    for a in range(na):
        old_beta[a] = beta[A[a]]
        beta[A[a]] = sol[a]
    g_new = np.empty(len(g))
    _rebuild(g_new, c, store, slot, beta, A)
    if not _objective(beta, g_new, c, tss_n, lam) < before:
        # an ill-conditioned solve can miss; never accept an ascent
        for a in range(na):
            beta[A[a]] = old_beta[a]
        return moved, cache_na, cache_inv
    g[:] = g_new
    return True, cache_na, cache_inv


@njit(cache=True)
def _objective(beta, g, c, tss_n, lam):
    """(1/2n)||yc - Xc beta||^2 + lam ||beta||_1 from the kept gradient."""
    l1 = 0.0
    rss_n = tss_n
    for j in range(len(beta)):
        if beta[j] != 0.0:
            l1 += abs(beta[j])
            rss_n -= beta[j] * (c[j] + g[j])
    return 0.5 * rss_n + lam * l1


@njit(cache=True)
def _gap(beta, g, c, tss_n, lam, diag):
    """Duality gap with the dual point r/n scaled into the feasible set."""
    gmax = 0.0
    l1 = 0.0
    bc = 0.0
    bg = 0.0
    for j in range(len(beta)):
        if diag[j] > 0.0 and abs(g[j]) > gmax:
            gmax = abs(g[j])
        l1 += abs(beta[j])
        bc += beta[j] * c[j]
        bg += beta[j] * g[j]
    rss_n = tss_n - bc - bg
    s = 1.0 if gmax <= lam else lam / gmax
    primal = 0.5 * rss_n + lam * l1
    dual = s * (tss_n - bc) - 0.5 * s * s * rss_n
    return primal - dual


@njit(cache=True)
def _path_kernel(XcT, c, diag, tss_n, store, slot, lambdas, tol, max_sweeps, max_r2, betas):
    """Solve min (1/2n)||yc - Xc beta||^2 + lam ||beta||_1 along ``lambdas``.

    ``XcT`` is the centred design transposed, ``c = Xc'yc/n`` and ``diag``
    the column mean squares. Gram columns are rows of ``store`` (``slot[j]``
    is the row of feature j, -1 until computed). The gradient
    g = c - G beta is kept current, a strong-rule working set is swept and
    the KKT conditions of the remaining coordinates are checked before
    moving on. The path stops once R^2 reaches ``max_r2``.
    Returns (status, sweeps, index): status 0 means success and index is
    the number of penalties solved, otherwise index is the failing penalty.
    """
    p, n = XcT.shape
    gap_tol = 10.0 * tol * tol * max(tss_n, 1e-300)
    g = c.copy()
    beta = np.zeros(p)
    nslot = 0
    for j in range(p):
        if slot[j] >= 0:
            nslot += 1
    cap = store.shape[0]
    in_ws = np.zeros(p, np.bool_)
    ws = np.empty(p, np.int64)
    nws = 0
    sweeps = 0
    lam_prev = lambdas[0]
    cache_a = np.empty(p, np.int64)
    cache_na = -1
    cache_inv = np.empty((1, 1))
    for li in range(len(lambdas)):
        lam = lambdas[li]
        thr = 2.0 * lam - lam_prev
        for j in range(p):
            if not in_ws[j] and diag[j] > 0.0 and abs(g[j]) >= thr:
                in_ws[j] = True
                ws[nws] = j
                nws += 1
        local = 0
        prev = np.inf
        wait = 0
        if cache_na > 0:
            ok, cache_na, cache_inv = _newton(beta, g, c, tss_n, store, slot, ws, nws, lam,
                                              cache_a, cache_na, cache_inv, False)
        while True:
            while True:
                maxd = 0.0
                for w in range(nws):
                    j = ws[w]
                    d = diag[j]
                    old = beta[j]
                    new = _soft(g[j] + d * old, lam) / d
                    if new != old:
                        if slot[j] < 0:
                            if nslot == cap:
                                cap2 = min(p, 2 * cap)
                                grown = np.empty((cap2, p))
                                grown[:cap] = store
                                store = grown
                                cap = cap2
                            xj = XcT[j]
                            for k in range(p):
                                store[nslot, k] = np.dot(XcT[k], xj) / n
                            slot[j] = nslot
                            nslot += 1
                        delta = new - old
                        col = store[slot[j]]
                        for k in range(p):
                            g[k] -= col[k] * delta
                        beta[j] = new
                        if abs(delta) > maxd:
                            maxd = abs(delta)
                sweeps += 1
                local += 1
                if local % 8 == 0 and _gap(beta, g, c, tss_n, lam, diag) <= gap_tol:
                    # converged in objective: on a non-unique optimal face
                    # (support at the rank of X) coordinates may drift forever
                    break
                if maxd < tol:
                    # stationarity on the working set as a second guard
                    worst = 0.0
                    for w in range(nws):
                        j = ws[w]
                        if beta[j] > 0.0:
                            v = abs(g[j] - lam)
                        elif beta[j] < 0.0:
                            v = abs(g[j] + lam)
                        else:
                            v = abs(g[j]) - lam
                        if v > worst:
                            worst = v
                    if worst <= 0.1 * tol:
                        break
                if local >= max_sweeps:
                    return 1, sweeps, li
                # jump straight to the solution when the remaining sweeps,
                # extrapolated from the contraction rate, cost more than a solve
                rate = maxd / prev
                prev = maxd
                if wait > 0:
                    wait -= 1
                elif local >= 2 and maxd > 0.0:
                    left = 1e9 if rate >= 1.0 else np.log(tol / maxd) / np.log(rate)
                    if left * p > nws * nws / 3.0 + p:
                        ok, cache_na, cache_inv = _newton(beta, g, c, tss_n, store, slot, ws, nws, lam,
                                                          cache_a, cache_na, cache_inv, True)
                        if not ok:
                            wait = min(local, 20)
            viol = False
            for j in range(p):
                if not in_ws[j] and diag[j] > 0.0 and abs(g[j]) > lam:
                    in_ws[j] = True
                    ws[nws] = j
                    nws += 1
                    viol = True
            if not viol:
                break
        betas[li] = beta
        lam_prev = lam
        if max_r2 < 1.0 and tss_n > 0.0:
            # rss/n = yc'yc/n - 2 beta'c + beta'G beta, with G beta = c - g
            rss_n = tss_n - np.dot(beta, c) - np.dot(beta, g)
            if 1.0 - rss_n / tss_n >= max_r2:
                return 0, sweeps, li + 1
    return 0, sweeps, len(lambdas)


def lambda_max(X, y) -> float:
    """Smallest penalty with an all-zero solution: max_j |xc_j' yc| / n."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    Xc = X - X.mean(axis=0)
    return float(np.max(np.abs(Xc.T @ (y - y.mean()))) / len(y)) if X.shape[1] else 0.0


def lambda_grid(X, y, n_lambda: int = 100, decades: float = 4.0) -> np.ndarray:
    """Log-spaced penalties from lambda_max down ``decades`` orders of magnitude."""
    lm = lambda_max(X, y)
    if lm <= 0:
        return np.zeros(n_lambda)
    grid = np.logspace(np.log10(lm), np.log10(lm) - decades, n_lambda)
    grid[0] = lm  # log/exp round trip can land a hair below lambda_max
    return np.minimum(grid, lm)


@dataclass
class LassoPath:
    """Solutions along a penalty grid.

    Only the first ``n_solved`` penalties are solved; when the fit saturates
    earlier, later rows repeat the last solution.
    """

    lambdas: np.ndarray
    betas: np.ndarray  # (n_lambda, p)
    intercepts: np.ndarray
    sweeps: int
    n_solved: int

    def predict(self, X) -> np.ndarray:
        """Predictions, (rows, n_lambda)."""
        return np.asarray(X, dtype=float) @ self.betas.T + self.intercepts

    def support(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.betas[i] != 0.0)


def lasso_path(X, y, lambdas=None, *, tol: float = TOL, max_sweeps: int = MAX_SWEEPS,
               max_r2: float = MAX_R2) -> LassoPath:
    """Warm-started coordinate-descent solutions along a decreasing penalty grid.

    ``max_sweeps`` bounds the sweeps per penalty. The path is truncated once
    the training R^2 reaches ``max_r2`` (pass 1.0 to solve every penalty).
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ValueError("lasso_path: X must be (n, p) with n = len(y)")
    lambdas = lambda_grid(X, y) if lambdas is None else np.asarray(lambdas, dtype=float)
    if np.any(lambdas < 0):
        raise ValueError("lasso_path: penalties must be >= 0")
    if np.any(np.diff(lambdas) > 0):
        raise ValueError("lasso_path: penalties must be non-increasing")
    n, p = X.shape
    betas = np.zeros((len(lambdas), p))
    mu = X.mean(axis=0)
    Xc = X - mu
    ybar = y.mean()
    yc = y - ybar
    c = Xc.T @ yc / n
    diag = np.einsum("ij,ij->j", Xc, Xc) / n
    if p <= DENSE_GRAM_MAX_P:
        store = np.ascontiguousarray(Xc.T @ Xc / n)
        slot = np.arange(p, dtype=np.int64)
    else:
        store = np.empty((min(p, 64), p))
        slot = -np.ones(p, dtype=np.int64)
    status, sweeps, where = _path_kernel(np.ascontiguousarray(Xc.T), c, diag, float(yc @ yc) / n,
                                         store, slot, lambdas, tol, max_sweeps, max_r2, betas)
    if status:
        raise LassoConvergenceError(
            f"coordinate descent did not converge within {max_sweeps} sweeps "
            f"(lambda index {where}, lambda={lambdas[where]:.3g}, n={n}, p={p})")
    if 0 < where < len(lambdas):
        betas[where:] = betas[where - 1]
    icpt = ybar - betas @ mu
    return LassoPath(lambdas, betas, icpt, int(sweeps), int(where))


def lasso_fit(X, y, lam: float, **kw) -> tuple[np.ndarray, float]:
    """Coefficients and intercept at a single penalty."""
    kw.setdefault("max_r2", 1.0)
    path = lasso_path(X, y, np.array([float(lam)]), **kw)
    return path.betas[0], float(path.intercepts[0])


def kkt_residual(X, y, beta, intercept, lam) -> float:
    """Largest violation of the lasso optimality conditions."""
    X = np.asarray(X, dtype=float)
    r = np.asarray(y, dtype=float) - X @ beta - intercept
    g = X.T @ r / len(r)
    zero = beta == 0
    viol = np.where(zero, np.maximum(np.abs(g) - lam, 0.0), np.abs(g - lam * np.sign(beta)))
    return float(viol.max()) if len(viol) else 0.0


@dataclass
class CvLambdas:
    i_min: int
    i_1se: int
    lambda_min: float
    lambda_1se: float
    cv_mean: np.ndarray
    cv_se: float
    set_min: np.ndarray
    set_1se: np.ndarray


def lasso_cv_lambdas(X, y, rng: np.random.Generator, *, n_folds: int = 10,
                     path: LassoPath | None = None, tol: float = TOL) -> CvLambdas:
    """K-fold choice of the minimum-error and one-standard-error penalties.

    ``path`` (the full-data path) may be supplied to reuse it across runs;
    its grid is used for every fold. The fold split is the only random
    element and is drawn from ``rng``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < 2 * n_folds:
        raise ValueError(f"lasso_cv_lambdas: need n >= 2 * folds ({n} < {2 * n_folds})")
    if path is None:
        path = lasso_path(X, y, tol=tol)
    lambdas = path.lambdas
    empty = np.empty(0, dtype=np.int64)
    if not lambdas[0] > 0:
        z = np.zeros(len(lambdas))
        return CvLambdas(0, 0, 0.0, 0.0, z, 0.0, empty, empty)
    folds = np.array_split(rng.permutation(n), n_folds)
    errs = []
    for test in folds:
        train = np.setdiff1d(np.arange(n), test, assume_unique=True)
        if np.ptp(y[train]) == 0:
            warnings.warn("lasso_cv_lambdas: fold with constant labels skipped", RuntimeWarning)
            continue
        fp = lasso_path(X[train], y[train], lambdas, tol=tol)
        resid = y[test, None] - fp.predict(X[test])
        errs.append(np.mean(resid * resid, axis=0))
    if len(errs) < 2:
        raise ValueError("lasso_cv_lambdas: fewer than 2 usable folds")
    errs = np.asarray(errs)
    mean = errs.mean(axis=0)
    i_min = int(np.argmin(mean))
    se = float(errs[:, i_min].std(ddof=1) / np.sqrt(len(errs)))
    i_1se = int(np.flatnonzero(mean <= mean[i_min] + se)[0])
    return CvLambdas(i_min, i_1se, float(lambdas[i_min]), float(lambdas[i_1se]), mean, se,
                     path.support(i_min), path.support(i_1se))
