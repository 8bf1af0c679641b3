"""Per-bin complex ICA: RobustICA (kurtosis + exact line search) and FastICA.

Every routine broadcasts over leading axes so that all frequency bins are
processed in one vectorized pass; ``robustica_separate_bin`` and
``fastica_separate_bin`` are the single-bin views used by tests and callers
that want one bin at a time.

Conventions: a separating vector ``w`` extracts ``u = w^H z``; an unmixing
matrix ``W`` stacks the rows ``w_i^H`` so that ``u = W z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .exceptions import ConfigError, DataError
from .whitening import symmetric_orthogonalize, whiten_bins

__all__ = [
    "IcaConfig",
    "UnmixingSet",
    "activation",
    "kurtosis_contrast",
    "kurtosis_gradient",
    "line_search",
    "optimal_step",
    "stationary_polynomial",
    "robustica",
    "fastica",
    "robustica_separate_bin",
    "fastica_separate_bin",
    "separate_bins",
]

ENGINES = ("robustica", "fastica")
DEFAULT_ITERATIONS = {"robustica": 3, "fastica": 15}
_EPS = 1e-12


@dataclass
class IcaConfig:
    """Engine selection and iteration budget.

    ``target_distribution`` is only honoured when ``sign_targeted`` is set;
    by default the line search maximizes the absolute kurtosis.
    ``fastica_scaling`` picks the diagonal step matrix of the fixed-point
    update: ``"newton"`` uses ``1 / (alpha_i - E{1 / (2|u_i|)})``, ``"unit"``
    uses ``1 / (alpha_i - 1)``.
    """

    engine: str = "robustica"
    max_iterations: Optional[int] = None
    tolerance: float = 1e-5
    target_distribution: str = "super_gaussian"
    sign_targeted: bool = False
    prewhiten: bool = True
    fastica_scaling: str = "newton"

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"unknown ICA engine {self.engine!r}; expected one of {ENGINES}")
        if self.max_iterations is None:
            self.max_iterations = DEFAULT_ITERATIONS[self.engine]
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be > 0")
        if self.target_distribution not in ("super_gaussian", "sub_gaussian"):
            raise ConfigError(f"unknown target_distribution {self.target_distribution!r}")
        if self.fastica_scaling not in ("newton", "unit"):
            raise ConfigError(f"unknown fastica_scaling {self.fastica_scaling!r}")
        if not self.prewhiten:
            raise ConfigError("only prewhitened separation is supported")

    @property
    def criterion(self) -> str:
        if not self.sign_targeted:
            return "absolute"
        return "super" if self.target_distribution == "super_gaussian" else "sub"


@dataclass
class UnmixingSet:
    """Per-bin unmixing in the whitened domain plus the whiteners.

    ``W[f]`` is N x N (unitary when prewhitened), ``V[f]`` is N x M.
    """

    W: np.ndarray
    V: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.degenerate is None:
            self.degenerate = np.zeros(self.W.shape[0], dtype=bool)

    @property
    def n_bins(self) -> int:
        return self.W.shape[0]

    @property
    def total(self) -> np.ndarray:
        """Mixture-domain unmixing ``W_f V_f`` for every bin."""
        return self.W @ self.V


def activation(u):
    """``u / |u|``, the score of a circular Laplacian prior (0 maps to 0)."""
    u = np.asarray(u)
    mag = np.abs(u)
    return np.divide(u, mag, out=np.zeros_like(u, dtype=complex), where=mag > 0)


def _project(w, Z):
    return np.einsum("...n,...nt->...t", np.conj(w), Z)


def _expect(x, Z):
    """``E{x(t) z(t)}`` over frames, as an (..., N) vector."""
    return np.einsum("...t,...nt->...n", x, Z) / Z.shape[-1]


def _moments(u):
    p = u.real ** 2 + u.imag ** 2
    B = p.mean(axis=-1)
    if np.any(B <= _EPS * _EPS):
        raise DataError("zero-variance projection")
    return p, (p * p).mean(axis=-1), B, (u * u).mean(axis=-1)


def kurtosis_contrast(w, Z):
    """Generalized complex kurtosis of ``u = w^H z``.

    ``(E|u|^4 - 2 E^2|u|^2 - |E u^2|^2) / E^2|u|^2``, sample moments over
    the frame axis.  Broadcasts ``w[..., N]`` against ``Z[..., N, T]``.
    """
    _, A, B, C = _moments(_project(w, Z))
    return (A - 2 * B ** 2 - np.abs(C) ** 2) / B ** 2


def kurtosis_gradient(w, Z):
    """Gradient of :func:`kurtosis_contrast`, ``dK/dRe(w) + i dK/dIm(w)``.

    Equal to twice the conjugate Wirtinger derivative ``dK/dw*``.
    """
    return _gradient(_project(w, Z), Z, _expect)


def _gradient(u, Z, expect):
    p, A, B, C = _moments(u)
    uc = u.conj()
    dA = 2 * expect(p * uc, Z)
    dB = expect(uc, Z)
    dC2 = 2 * expect(u, Z) * np.conj(C)[..., np.newaxis]
    B_ = B[..., np.newaxis]
    num = (A - np.abs(C) ** 2)[..., np.newaxis]
    return 2 * ((dA - dC2) / B_ ** 2 - 2 * num * dB / B_ ** 3)


def _polymul(a, b):
    """Product of coefficient arrays (low order first) along the last axis."""
    out = np.zeros(a.shape[:-1] + (a.shape[-1] + b.shape[-1] - 1,), dtype=np.result_type(a, b))
    for i in range(a.shape[-1]):
        for j in range(b.shape[-1]):
            out[..., i + j] += a[..., i] * b[..., j]
    return out


def _polyval(c, x):
    out = np.zeros(np.broadcast_shapes(c.shape[:-1], x.shape), dtype=float)
    for k in range(c.shape[-1] - 1, -1, -1):
        out = out * x + c[..., k]
    return out


def _polyder(c):
    return c[..., 1:] * np.arange(1, c.shape[-1])


def contrast_polynomials(w, g, Z):
    """Numerator ``P`` and variance ``h`` polynomials of ``K(w + mu g)``.

    ``K(mu) = P(mu) / h(mu)^2 - 2`` for real ``mu``; coefficients are listed
    from the constant term up (``P`` quartic, ``h`` quadratic).
    """
    return _polynomials(_project(w, Z), _project(g, Z))


def _polynomials(a, b):
    p = np.abs(a) ** 2
    q = 2 * np.real(np.conj(a) * b)
    r = np.abs(b) ** 2
    E = lambda x: x.mean(axis=-1)
    h = np.stack([E(p), E(q), E(r)], axis=-1)
    fourth = np.stack(
        [E(p * p), 2 * E(p * q), E(q * q) + 2 * E(p * r), 2 * E(q * r), E(r * r)], axis=-1
    )
    c = np.stack([E(a * a), 2 * E(a * b), E(b * b)], axis=-1)
    return _numerator(fourth, c), h


def _numerator(fourth, c):
    return fourth - np.real(_polymul(c, np.conj(c)))


def _mean_product(x, y):
    return np.einsum("...t,...t->...", x, y) / x.shape[-1]


def _sweep_statistics(Z):
    """Per-bin covariance ``E{z z^H}`` and pseudo-covariance ``E{z z^T}``."""
    T = Z.shape[-1]
    return Z @ np.swapaxes(Z, -1, -2).conj() / T, Z @ np.swapaxes(Z, -1, -2) / T


def _batched_step(W_old, Z, R, Cz):
    """Gradient and line-search polynomials for every row of ``W_old[f]``.

    Same quantities as :func:`kurtosis_gradient` and
    :func:`contrast_polynomials`, but every second-order moment is a
    quadratic form in ``R`` or ``Cz``; only fourth-order terms touch the
    frames.
    """
    T = Z.shape[-1]
    w = W_old.conj()
    u = W_old @ Z
    p = np.abs(u) ** 2
    A = _mean_product(p, p)
    RwT = w @ np.swapaxes(R, -1, -2)                 # row i: (R w_i)^T
    B = np.real(np.sum(w.conj() * RwT, axis=-1))
    if np.any(B <= _EPS * _EPS):
        raise DataError("zero-variance projection")
    WCz = W_old @ Cz                                 # row i: w_i^H Cz
    C = np.sum(WCz * W_old, axis=-1)
    dA = 2 * (p * u.conj()) @ np.swapaxes(Z, -1, -2) / T
    B_ = B[..., np.newaxis]
    num = (A - np.abs(C) ** 2)[..., np.newaxis]
    g = 2 * ((dA - 2 * WCz * np.conj(C)[..., np.newaxis]) / B_ ** 2 - 2 * num * RwT / B_ ** 3)

    b = g.conj() @ Z
    q = 2 * np.real(np.conj(u) * b)
    r = np.abs(b) ** 2
    RgT = g @ np.swapaxes(R, -1, -2)
    h = np.stack([B, 2 * np.real(np.sum(g.conj() * RwT, axis=-1)),
                  np.real(np.sum(g.conj() * RgT, axis=-1))], axis=-1)
    gc = g.conj()
    c = np.stack([C, 2 * np.sum(WCz * gc, axis=-1), np.sum((gc @ Cz) * gc, axis=-1)], axis=-1)
    fourth = np.stack([A, 2 * _mean_product(p, q), _mean_product(q, q) + 2 * _mean_product(p, r),
                       2 * _mean_product(q, r), _mean_product(r, r)], axis=-1)
    return w, g, _numerator(fourth, c), h


def stationary_polynomial(P, h):
    """Coefficients (constant first, degree <= 4) whose real roots are the
    stationary points of ``P / h^2`` in ``mu``.

    ``d/dmu (P / h^2) = (P' h - 2 P h') / h^3``; the degree-5 terms cancel.
    """
    S = _polymul(_polyder(P), h) - 2 * _polymul(P, _polyder(h))
    return S[..., :5]


def _real_roots(S):
    """Real roots of each quartic in ``S[..., 5]`` as (..., 4), NaN padded."""
    lead_shape = S.shape[:-1]
    flat = S.reshape(-1, 5)
    flat = np.where(np.all(np.isfinite(flat), axis=1, keepdims=True), flat, 0.0)
    roots = np.full((flat.shape[0], 4), np.nan + 0j)
    scale = np.max(np.abs(flat), axis=1)
    regular = np.abs(flat[:, 4]) > 1e-10 * scale
    if np.any(regular):
        monic = flat[regular, :4] / flat[regular, 4:5]
        comp = np.zeros((monic.shape[0], 4, 4))
        comp[:, 0, :] = -monic[:, ::-1]
        comp[:, 1, 0] = comp[:, 2, 1] = comp[:, 3, 2] = 1.0
        roots[regular] = np.linalg.eigvals(comp)
    for k in np.flatnonzero(~regular):
        coeffs = flat[k, ::-1].copy()
        if scale[k] == 0:
            continue
        while coeffs.size and abs(coeffs[0]) <= 1e-10 * scale[k]:
            coeffs = coeffs[1:]
        if coeffs.size > 1:
            rk = np.roots(coeffs)
            roots[k, :rk.size] = rk
    is_real = np.abs(roots.imag) <= 1e-6 * (1.0 + np.abs(roots.real))
    out = np.where(is_real, roots.real, np.nan)
    return out.reshape(lead_shape + (4,))


def _score(K, criterion):
    if criterion == "absolute":
        return np.abs(K)
    if criterion == "super":
        return K
    if criterion == "sub":
        return -K
    raise ConfigError(f"unknown line-search criterion {criterion!r}")


@dataclass
class LineSearchResult:
    mu: np.ndarray
    roots: np.ndarray
    score_before: np.ndarray
    score_after: np.ndarray
    improved: np.ndarray


def line_search(w, g, Z, criterion="absolute"):
    """Exact line search of the kurtosis contrast along ``g``.

    Candidates are the real roots of the stationary polynomial plus ``mu = 0``
    (never moving is always allowed), so the returned step never lowers the
    criterion.  A vanishing ``g`` yields ``mu = 0`` and ``improved = False``.
    """
    return _line_search(w, g, *contrast_polynomials(w, g, Z), criterion)


def _line_search(w, g, P, h, criterion):
    roots = _real_roots(stationary_polynomial(P, h))

    def crit(mu):
        hv = _polyval(h, mu)
        with np.errstate(divide="ignore", invalid="ignore"):
            K = _polyval(P, mu) / hv ** 2 - 2
        return np.where(hv > 0, _score(K, criterion), -np.inf)

    zero = np.zeros(roots.shape[:-1])
    score0 = crit(zero)
    cand = np.where(np.isnan(roots), 0.0, roots)
    scores = np.stack([crit(cand[..., k]) for k in range(cand.shape[-1])], axis=-1)
    scores = np.where(np.isnan(roots), -np.inf, scores)
    best = np.argmax(scores, axis=-1)
    best_score = np.take_along_axis(scores, best[..., None], axis=-1)[..., 0]
    best_mu = np.take_along_axis(cand, best[..., None], axis=-1)[..., 0]

    g_norm = np.linalg.norm(g, axis=-1)
    w_norm = np.linalg.norm(w, axis=-1)
    moves = (best_score > score0) & (g_norm > 1e-12 * w_norm) & np.isfinite(best_score)
    mu = np.where(moves, best_mu, 0.0)
    return LineSearchResult(mu, roots, score0, np.where(moves, best_score, score0), moves)


def optimal_step(w, g, Z, criterion="absolute"):
    """Step ``mu`` maximizing ``|K(w + mu g)|`` (see :func:`line_search`)."""
    return line_search(w, g, Z, criterion).mu


def _restart_nonfinite(W, bin_ids, seed):
    """Replace non-finite rows of ``W[f]`` by seeded random unit rows."""
    bad = ~np.all(np.isfinite(W), axis=-1)
    if np.any(bad):
        fb, rb = np.nonzero(bad)
        for f, r in zip(fb, rb):
            rng = np.random.default_rng([seed, int(bin_ids[f]), int(r)])
            v = rng.standard_normal(W.shape[-1]) + 1j * rng.standard_normal(W.shape[-1])
            W[f, r] = v / np.linalg.norm(v)
    return W


def _row_change(W_new, W_old):
    overlap = np.abs(np.sum(W_new * W_old.conj(), axis=-1))
    return np.max(1.0 - overlap, axis=-1)


def _prepare(Z, W0):
    Z = np.asarray(Z)
    single = Z.ndim == 2
    if single:
        Z = Z[np.newaxis]
    F, N, T = Z.shape
    if W0 is None:
        W = np.broadcast_to(np.eye(N, dtype=complex), (F, N, N)).copy()
    else:
        W = np.array(np.broadcast_to(W0, (F, N, N)), dtype=complex)
    return Z, W, single


def _initial(Z, W0, seed, bin_ids):
    Z, W, single = _prepare(Z, W0)
    bin_ids = np.arange(Z.shape[0]) if bin_ids is None else np.asarray(bin_ids)
    return Z, _restart_nonfinite(W, bin_ids, seed), single, bin_ids


def robustica(Z, cfg: IcaConfig, W0=None, seed: int = 0, bin_ids=None,
              monitor: Optional[List] = None):
    """RobustICA on whitened bins ``Z[bin, channel, frame]``.

    Each sweep updates all rows with a kurtosis-gradient step of optimal
    size, renormalizes them, then symmetrically orthogonalizes the matrix.
    A bin stops once ``max_i (1 - |w_i_new^H w_i_old|) < tolerance``.

    ``monitor``, when a list, receives ``(score_before, score_after)`` for
    every row update.

    Returns ``(W, converged, iterations)``.
    """
    Z, W, single, bin_ids = _initial(Z, W0, seed, bin_ids)
    F, N, T = Z.shape
    if T < 4:
        raise DataError("RobustICA needs at least 4 frames")
    converged = np.zeros(F, dtype=bool)
    iterations = np.zeros(F, dtype=int)
    criterion = cfg.criterion
    R, Cz = _sweep_statistics(Z)

    for _ in range(cfg.max_iterations):
        active = np.flatnonzero(~converged)
        if active.size == 0:
            break
        W_old = W[active]
        w, g, P, h = _batched_step(W_old, Z[active], R[active], Cz[active])
        ls = _line_search(w, g, P, h, criterion)
        if monitor is not None:
            monitor.append((ls.score_before, ls.score_after))
        w_new = w + ls.mu[..., np.newaxis] * g
        w_new /= np.linalg.norm(w_new, axis=-1, keepdims=True)
        W_new = _restart_nonfinite(w_new.conj(), bin_ids[active], seed)
        W_new = symmetric_orthogonalize(W_new)
        W[active] = W_new
        iterations[active] += 1
        converged[active] = _row_change(W_new, W_old) < cfg.tolerance

    if single:
        return W[0], bool(converged[0]), int(iterations[0])
    return W, converged, iterations


def fastica(Z, cfg: IcaConfig, W0=None, seed: int = 0, bin_ids=None,
            monitor: Optional[List] = None):
    """Symmetric complex fixed-point ICA with the ``u / |u|`` activation.

    Update: ``dW = D [diag(-alpha_i) + E{phi(u) u^H}] W`` with
    ``alpha_i = E{phi(u_i) u_i^*}`` and ``D = diag(1 / (alpha_i - c_i))``,
    followed by symmetric orthogonalization.  ``monitor`` receives
    ``||dW||_F`` per bin and iteration.
    """
    Z, W, single, bin_ids = _initial(Z, W0, seed, bin_ids)
    F, N, T = Z.shape
    converged = np.zeros(F, dtype=bool)
    iterations = np.zeros(F, dtype=int)
    eye = np.eye(N)

    for _ in range(cfg.max_iterations):
        active = np.flatnonzero(~converged)
        if active.size == 0:
            break
        Za = Z[active]
        W_old = W[active]
        U = W_old @ Za
        mag = np.maximum(np.abs(U), _EPS)
        phi = U / mag
        alpha = mag.mean(axis=-1)
        corr = phi @ np.swapaxes(U, -1, -2).conj() / T
        if cfg.fastica_scaling == "newton":
            c = (0.5 / mag).mean(axis=-1)
        else:
            c = np.ones_like(alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            D = 1.0 / (alpha - c)
        dW = D[..., np.newaxis] * ((corr - alpha[..., np.newaxis] * eye) @ W_old)
        if monitor is not None:
            monitor.append(np.linalg.norm(dW, axis=(-2, -1)))
        W_new = _restart_nonfinite(W_old + dW, bin_ids[active], seed)
        W_new = symmetric_orthogonalize(W_new)
        W[active] = W_new
        iterations[active] += 1
        converged[active] = _row_change(W_new, W_old) < cfg.tolerance

    if single:
        return W[0], bool(converged[0]), int(iterations[0])
    return W, converged, iterations


def robustica_separate_bin(Z, cfg: Optional[IcaConfig] = None, W0=None, seed: int = 0):
    """RobustICA on one whitened bin; returns ``(W, converged, iterations)``."""
    cfg = cfg or IcaConfig(engine="robustica")
    W, conv, its = robustica(np.asarray(Z)[np.newaxis], cfg, W0=W0, seed=seed)
    return W[0], bool(conv[0]), int(its[0])


def fastica_separate_bin(Z, cfg: Optional[IcaConfig] = None, W0=None, seed: int = 0):
    """FastICA on one whitened bin; returns ``(W, converged, iterations)``."""
    cfg = cfg or IcaConfig(engine="fastica")
    W, conv, its = fastica(np.asarray(Z)[np.newaxis], cfg, W0=W0, seed=seed)
    return W[0], bool(conv[0]), int(its[0])


def separate_bins(X, cfg: IcaConfig, seed: int = 0, n_jobs: int = 1) -> UnmixingSet:
    """Whiten then separate every bin of ``X[bin, channel, frame]``.

    Degenerate bins keep identity unmixing and are flagged.  With
    ``n_jobs > 1`` contiguous bin chunks run in a thread pool; each bin's
    result does not depend on the chunking.
    """
    X = np.asarray(X)
    F, M, T = X.shape
    Z, V, degenerate = whiten_bins(X)
    engine = robustica if cfg.engine == "robustica" else fastica
    W = np.broadcast_to(np.eye(M, dtype=complex), (F, M, M)).copy()
    converged = np.ones(F, dtype=bool)
    iterations = np.zeros(F, dtype=int)
    good = np.flatnonzero(~degenerate)

    def run(ids):
        return ids, engine(Z[ids], cfg, seed=seed, bin_ids=ids)

    if n_jobs > 1 and good.size > 1:
        from concurrent.futures import ThreadPoolExecutor

        chunks = np.array_split(good, min(n_jobs, good.size))
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(good)] if good.size else []
    for ids, (Wc, cc, ic) in results:
        W[ids], converged[ids], iterations[ids] = Wc, cc, ic
    return UnmixingSet(W, V, converged, iterations, degenerate)
