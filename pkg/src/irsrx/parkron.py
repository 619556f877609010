"""Stage 1: pilot-based estimation of the static channel geometry.

Pipeline for one realization:

1. :func:`estimate_combined` - per-frame LS estimate ``R_i`` of the
   combined channel ``H_{i,1}^T kr G_i``.
2. :func:`assemble_R_tensor` - stack the ``R_i`` into an
   ``M x Q x N x I`` tensor.
3. :func:`constrained_cp_als` - constrained PARAFAC with the BS steering
   matrix known, giving ``A_tx``, ``P_B`` and ``F``.
4. :func:`krf_factorize` / :func:`kron_factorize` - split ``P_B`` into the
   IRS steering matrices and each row of ``F`` into ``beta (x) alpha``.
5. :func:`configure_irs` - phase-align the IRS to the dominant right
   singular vector of the rebuilt frame-1 combined channel.

Path pairs ``(l1, l2)`` are indexed by ``p = l2 * L1 + l1`` (0-based),
matching ``f_i = beta_i (x) alpha_i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import crandn
from .config import ConfigError
from .tensor import (
    PINV_RTOL,
    dominant_singular_triplet,
    cp_tensor,
    khatri_rao,
    pinv,
    unfold,
    unvec,
    vec,
)

log = logging.getLogger(__name__)

__all__ = [
    "EstimationError",
    "NumericalError",
    "CombinedChannelEstimate",
    "ALSResult",
    "Stage1Estimate",
    "selection_matrices",
    "estimate_combined",
    "assemble_R_tensor",
    "constrained_cp_model",
    "constrained_cp_als",
    "krf_factorize",
    "kron_factorize",
    "rebuild_combined",
    "configure_irs",
    "RefinementResult",
    "refine_structured",
    "run_stage1",
]


class EstimationError(ValueError):
    """Input to an estimator is degenerate (rank deficiency, zero data)."""


class NumericalError(ArithmeticError):
    """An iterative solver produced non-finite values."""


@dataclass
class CombinedChannelEstimate:
    u_hat: np.ndarray  # (M*Q*N,)
    R: np.ndarray      # (M*Q, N)


def estimate_combined(y, design, config):
    """LS estimate of one frame's combined channel from Stage-1 samples.

    Solves ``min ||y - ((S kr Z)^T (x) I_M) u||`` without forming the
    ``M*T0 x M*Q*N`` system matrix: reshaping ``y`` to ``M x T0`` turns the
    Kronecker structure into a right multiplication.

    Raises
    ------
    EstimationError
        If ``S kr Z`` does not have full rank ``Q*N``.
    """
    M, Q, N, T0 = config.M, config.Q, config.N, config.T0
    if T0 < Q * N:
        raise EstimationError("T0 >= Q*N is required")
    x_pinv, rank = pinv(design.kr.T, return_rank=True)
    if rank < Q * N:
        raise EstimationError(f"S kr Z has rank {rank} < Q*N = {Q * N}")
    Y = unvec(y, M, T0)
    u_hat = vec(Y @ x_pinv.T)
    return CombinedChannelEstimate(u_hat=u_hat, R=unvec(u_hat, M * Q, N))


def assemble_R_tensor(R_list, M, Q):
    """Stack per-frame ``MQ x N`` estimates into an ``M x Q x N x I`` tensor.

    Entry ``(m, q, n, i)`` is ``R_i[q*M + m, n]``.
    """
    R_list = [np.asarray(r) for r in R_list]
    shape = R_list[0].shape
    if shape[0] != M * Q:
        raise ValueError(f"expected {M * Q} rows, got {shape[0]}")
    for r in R_list[1:]:
        if r.shape != shape:
            raise ValueError("all R_i must share one shape")
    return np.stack([r.reshape(M, Q, shape[1], order="F") for r in R_list], axis=3)


def selection_matrices(L1, L2):
    """Replication matrices mapping per-path columns onto path pairs.

    ``A_rx @ phi1`` repeats column ``l1`` at every ``p`` with that ``l1``;
    ``A_tx.conj() @ phi2`` does the same for ``l2``.
    """
    phi1 = np.kron(np.ones((1, L2)), np.eye(L1))
    phi2 = np.kron(np.eye(L2), np.ones((1, L1)))
    return phi1, phi2


def constrained_cp_model(A_rx, A_tx, P_B, F):
    """Dense ``M x Q x N x I`` tensor of the constrained PARAFAC model.

    ``P_B`` is the ``L1*L2 x N`` matrix ``B_rx^T kr B_tx^H``.
    """
    L1, L2 = A_rx.shape[1], A_tx.shape[1]
    phi1, phi2 = selection_matrices(L1, L2)
    return cp_tensor([A_rx @ phi1, A_tx.conj() @ phi2, np.asarray(P_B).T, F])


@dataclass
class ALSResult:
    A_tx: np.ndarray   # (Q, L2), columns normalized to first entry 1
    P_B: np.ndarray    # (L1*L2, N), columns n=0 normalized to ones
    F: np.ndarray      # (I, L1*L2)
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)
    restart: int = 0
    restart_residuals: list = field(default_factory=list)

    @property
    def final_residual(self):
        return self.residuals[-1]


def _check_uniqueness(M, Q, N, I, R):
    conds = {"Q*N*I": Q * N * I, "Q*M*I": Q * M * I, "Q*M*N": Q * M * N}
    for name, value in conds.items():
        if value < R:
            raise ConfigError(f"{name} = {value} < L1*L2 = {R}; the factorization is not unique")


def _algebraic_init(T, A_rx, L2):
    """Closed-form starting point, exact for noiseless data.

    Projecting out the known ``A_rx`` leaves, for every ``l1``, a
    ``Q x N x I`` CP tensor of rank ``L2`` whose mode-1 factor is
    ``A_tx^*``; two compressed frame slices give it by a generalized
    eigendecomposition. ``P`` and ``F`` then follow from an LS step and a
    rank-one split per path pair. Returns ``None`` when the dimensions do
    not support this (``M < L1``, ``Q < L2``, ``I < 2``).
    """
    M, Q, N, I = T.shape
    L1 = A_rx.shape[1]
    R = L1 * L2
    if M < L1 or Q < L2 or I < 2 or N < L2 or M * Q < R:
        return None
    proj = np.einsum("lm,mqni->lqni", pinv(A_rx), T)
    l1 = int(np.argmax(np.linalg.norm(proj.reshape(L1, -1), axis=1)))
    X = proj[l1]  # (Q, N, I)
    w = np.linalg.svd(unfold(X, 2), full_matrices=False)[0][:, :2].conj()
    Xa = X @ w[:, 0]
    Xb = X @ w[:, 1]
    U, _, Vh = np.linalg.svd(Xb, full_matrices=False)
    U, V = U[:, :L2], Vh[:L2].conj().T
    Ca, Cb = U.conj().T @ Xa @ V, U.conj().T @ Xb @ V
    try:
        _, vecs = np.linalg.eig(Ca @ np.linalg.inv(Cb))
    except np.linalg.LinAlgError:
        return None
    A2c = U @ vecs
    if not np.all(np.isfinite(A2c)):
        return None

    phi1, phi2 = selection_matrices(L1, L2)
    slices = T.reshape(M * Q, N, I, order="F")
    K = np.einsum("rk,kni->rin", pinv(khatri_rao(A2c @ phi2, A_rx @ phi1)), slices)
    P = np.empty((N, R), dtype=complex)
    F = np.empty((I, R), dtype=complex)
    for p in range(R):
        u, s, vh = np.linalg.svd(K[p], full_matrices=False)
        F[:, p] = u[:, 0] * s[0]
        P[:, p] = vh[0]
    return A2c, P, F


def _als_single(T, U0, phi2, init, tol, max_iter, Rnorm):
    """One ALS run from ``init = (A2c, P, F)``; returns factors and residuals."""
    A2c, P, F = init
    unf1, unf2, unf3 = unfold(T, 1), unfold(T, 2), unfold(T, 3)
    residuals = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        W = khatri_rao(F, P, U0) @ phi2.T
        A2c = unf1 @ pinv(W.T)
        U1 = A2c @ phi2
        P = unf2 @ pinv(khatri_rao(F, U1, U0).T)
        F = unf3 @ pinv(khatri_rao(P, U1, U0).T)

        fit = U0 @ khatri_rao(F, P, U1).T
        res = np.linalg.norm(unfold(T, 0) - fit) / Rnorm
        if not np.isfinite(res):
            raise NumericalError("ALS diverged (non-finite residual)")
        residuals.append(float(res))
        if res < 1e-14:
            converged = True
            break
        if it > 1:
            prev = residuals[-2]
            if abs(prev - res) <= tol * prev:
                converged = True
                break
    return A2c, P, F, residuals, converged, it


def constrained_cp_als(
    R_tensor, A_rx, L2, rng, tol=1e-6, max_iter=100, restarts=3, algebraic_init=True
):
    """Fit ``A_tx``, ``P_B`` and ``F`` with the mode-1 factor fixed.

    Every update is the exact LS solution for its block, so the residual
    never increases within a run. The mode-2 factor is constrained to
    ``A_tx^* phi2``; its LS problem is solved directly in the ``L2``
    free columns. Starts are the closed-form point of
    :func:`_algebraic_init` (when available and ``algebraic_init``) plus
    ``restarts`` random ``CN(0, 1)`` draws; the lowest final residual wins.

    The returned factors have the scaling ambiguity removed: columns of
    ``A_tx`` and the ``n = 0`` column of ``P_B`` are scaled to one, with
    the compensating factors absorbed into ``F``.

    Raises
    ------
    ConfigError
        If a uniqueness condition fails.
    NumericalError
        If every restart diverges.
    """
    T = np.asarray(R_tensor)
    M, Q, N, I = T.shape
    L1 = A_rx.shape[1]
    R = L1 * L2
    _check_uniqueness(M, Q, N, I, R)
    phi1, phi2 = selection_matrices(L1, L2)
    U0 = A_rx @ phi1
    Rnorm = np.linalg.norm(T)
    if Rnorm == 0:
        raise EstimationError("combined-channel tensor is zero")

    starts = []
    if algebraic_init:
        start = _algebraic_init(T, A_rx, L2)
        if start is not None:
            starts.append(start)
    for _ in range(restarts):
        starts.append((crandn(rng, Q, L2), crandn(rng, N, R), crandn(rng, I, R)))
    if not starts:
        raise ValueError("no ALS starting point: enable algebraic_init or restarts")

    best = None
    all_final = []
    for r, init in enumerate(starts):
        try:
            out = _als_single(T, U0, phi2, init, tol, max_iter, Rnorm)
        except NumericalError:
            log.warning("ALS restart %d diverged", r)
            all_final.append(np.inf)
            continue
        all_final.append(out[3][-1])
        if best is None or out[3][-1] < best[0][3][-1]:
            best = (out, r)
    if best is None:
        raise NumericalError("all ALS restarts diverged")
    (A2c, P, F, residuals, converged, iters), r = best
    if not converged:
        log.info("ALS reached max_iter=%d without meeting tol", max_iter)

    # Vandermonde normalization: first entries of the steering columns are 1.
    c = A2c[0].copy()
    A2c = A2c / c
    A2c[0] = 1.0
    F = F * (phi2.T @ c)
    d = P[0].copy()
    P = P / d
    P[0] = 1.0
    F = F * d
    return ALSResult(
        A_tx=A2c.conj(),
        P_B=P.T,
        F=F,
        iterations=iters,
        converged=converged,
        residuals=residuals,
        restart=r,
        restart_residuals=all_final,
    )


def krf_factorize(P_B, L1, L2, normalize=True):
    """Split ``P_B = B_rx^T kr B_tx^H`` into ``(B_rx, B_tx)``.

    Column ``n`` of ``P_B``, reshaped to ``L1 x L2``, is the rank-one
    matrix ``conj(B_tx[n]) B_rx[n]^T``; its dominant singular pair gives
    both rows. Magnitudes are split so the rows have the norms of
    unit-modulus steering rows. With ``normalize`` each steering column is
    then divided by its first entry; this rescales the product by the
    inverse of column 0 of ``P_B``, which the fading factors absorb. A unit-modulus factor per row ``n`` shared by ``B_rx`` and
    ``B_tx`` is not identifiable; it cancels in ``B_rx^T kr B_tx^H`` and in
    ``B_tx^H D(s) B_rx``.

    Raises
    ------
    EstimationError
        If a column of ``P_B`` is zero.
    """
    P_B = np.asarray(P_B)
    N = P_B.shape[1]
    b_rx = np.empty((N, L2), dtype=complex)
    b_tx = np.empty((N, L1), dtype=complex)
    split = np.sqrt(np.sqrt(L1 / L2))
    for n in range(N):
        block = unvec(P_B[:, n], L1, L2)
        if not np.any(block):
            raise EstimationError(f"column {n} of P_B is zero")
        u, s, v = dominant_singular_triplet(block)
        root = np.sqrt(s)
        t = u * root * split
        b_rx[n] = v.conj() * root / split
        b_tx[n] = t.conj()
    # Vandermonde normalization of the steering columns.
    c_rx = b_rx[0].copy()
    c_tx = b_tx[0].copy()
    if not normalize or np.any(c_rx == 0) or np.any(c_tx == 0):
        return b_rx, b_tx
    b_rx, b_tx = b_rx / c_rx, b_tx / c_tx
    b_rx[0] = 1.0
    b_tx[0] = 1.0
    return b_rx, b_tx


def kron_factorize(f, L1, L2):
    """Best rank-one split of ``f ~ beta (x) alpha``.

    Returns ``(beta, alpha)`` with ``alpha[0]`` real and non-negative and
    ``||beta|| == 1``.
    """
    f = np.asarray(f)
    if not np.any(f):
        raise EstimationError("cannot Kronecker-factorize a zero vector")
    u, s, v = dominant_singular_triplet(unvec(f, L1, L2))
    alpha = s * u
    beta = v.conj()
    if alpha[0] != 0:
        ph = alpha[0] / abs(alpha[0])
        alpha = alpha / ph
        alpha[0] = abs(alpha[0])
        beta = beta * ph
    return beta, alpha


def rebuild_combined(A_rx, A_tx, P_B, f):
    """``(A_tx^* (x) A_rx) D(f) P_B`` for one frame (``MQ x N``)."""
    return (np.kron(A_tx.conj(), A_rx) * f) @ P_B


@dataclass
class RefinementResult:
    A_tx: np.ndarray     # (Q, L2)
    B_rx: np.ndarray     # (N, L2)
    B_tx: np.ndarray     # (N, L1)
    alpha: np.ndarray    # (I, L1)
    beta: np.ndarray     # (I, L2)
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)

    @property
    def P_B(self):
        return khatri_rao(self.B_rx.T, self.B_tx.conj().T)

    @property
    def F(self):
        return np.array([np.kron(b, a) for a, b in zip(self.alpha, self.beta)])


def _rowwise_ls(Y, sel, other, W):
    # Row n solves Y[n] ~ x_n @ sel @ D(other[n]) @ W; all rows in one batch.
    systems = (sel[None, :, :] * other[:, None, :]) @ W
    return np.einsum("nt,ntk->nk", Y, np.linalg.pinv(systems, rcond=PINV_RTOL))


def refine_structured(R_tensor, A_rx, A_tx, B_rx, B_tx, alpha, beta, tol=1e-6, max_iter=100):
    """ALS on the fully structured model, started from split ALS factors.

    The mode-3 factor is kept as ``B_rx^T kr B_tx^H`` and every row of the
    mode-4 factor as ``beta_i (x) alpha_i``, so the fit has fewer free
    parameters than the unconstrained ``P_B`` / ``F`` model. Each block
    (``A_tx``, ``B_rx``, ``B_tx``, ``beta``, ``alpha``) is updated by exact
    LS, hence the residual is non-increasing. The output is rescaled so
    the first entries of the steering columns are one and ``alpha[:, 0]``
    is real and non-negative.

    Raises
    ------
    NumericalError
        If an iterate becomes non-finite.
    """
    T = np.asarray(R_tensor)
    L1, L2 = A_rx.shape[1], A_tx.shape[1]
    phi1, phi2 = selection_matrices(L1, L2)
    U0 = A_rx @ phi1
    u0, u1, u2, u3 = (unfold(T, m) for m in range(4))
    norm = np.linalg.norm(T)
    A2c = np.array(A_tx, dtype=complex).conj()
    Brx = np.array(B_rx, dtype=complex)
    Bc = np.array(B_tx, dtype=complex).conj()
    Fb = np.array(beta, dtype=complex)
    Fa = np.array(alpha, dtype=complex)

    residuals = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        U2 = (Brx @ phi2) * (Bc @ phi1)
        U3 = (Fb @ phi2) * (Fa @ phi1)
        A2c = u1 @ pinv((khatri_rao(U3, U2, U0) @ phi2.T).T)
        U1 = A2c @ phi2
        W = khatri_rao(U3, U1, U0).T
        Brx = _rowwise_ls(u2, phi2, Bc @ phi1, W)
        Bc = _rowwise_ls(u2, phi1, Brx @ phi2, W)
        U2 = (Brx @ phi2) * (Bc @ phi1)
        W = khatri_rao(U2, U1, U0).T
        Fb = _rowwise_ls(u3, phi2, Fa @ phi1, W)
        Fa = _rowwise_ls(u3, phi1, Fb @ phi2, W)
        U3 = (Fb @ phi2) * (Fa @ phi1)
        res = float(np.linalg.norm(u0 - U0 @ khatri_rao(U3, U2, U1).T) / norm)
        if not np.isfinite(res):
            raise NumericalError("structured refinement diverged (non-finite residual)")
        residuals.append(res)
        if res < 1e-14 or (it > 1 and abs(residuals[-2] - res) <= tol * residuals[-2]):
            converged = True
            break

    # Move scales into the fading factors.
    for mat, comp in ((A2c, Fb), (Brx, Fb), (Bc, Fa)):
        c = mat[0].copy()
        if np.all(c != 0):
            mat /= c
            mat[0] = 1.0
            comp *= c
    ph = np.ones(Fa.shape[0], dtype=complex)
    nz = Fa[:, 0] != 0
    ph[nz] = Fa[nz, 0] / np.abs(Fa[nz, 0])
    Fa /= ph[:, None]
    Fb *= ph[:, None]
    return RefinementResult(
        A_tx=A2c.conj(), B_rx=Brx, B_tx=Bc.conj(), alpha=Fa, beta=Fb,
        iterations=it, converged=converged, residuals=residuals,
    )


def configure_irs(R1):
    """Unit-modulus IRS vector co-phased with the dominant right singular vector.

    Raises
    ------
    ValueError
        If ``R1`` is zero.
    """
    _, _, v = dominant_singular_triplet(R1)
    return np.exp(1j * np.angle(v))


@dataclass
class Stage1Estimate:
    A_tx: np.ndarray
    P_B: np.ndarray        # ALS estimate (L1*L2 x N)
    F: np.ndarray          # ALS estimate (I x L1*L2)
    B_rx: np.ndarray
    B_tx: np.ndarray
    alpha: np.ndarray      # (I, L1)
    beta: np.ndarray       # (I, L2)
    R_ls: list             # per-frame LS estimates
    R_hat: list            # per-frame rebuilt combined channels
    s_opt: np.ndarray
    als: ALSResult
    refinement: RefinementResult | None = None
    A_rx: np.ndarray | None = None

    @property
    def als_iterations(self):
        return self.als.iterations

    @property
    def final_residual(self):
        return self.als.final_residual

    @property
    def P_B_krf(self):
        return khatri_rao(self.B_rx.T, self.B_tx.conj().T)

    @property
    def R_als(self):
        """Per-frame combined channels of the unconstrained ALS model."""
        return [rebuild_combined(self.A_rx, self.als.A_tx, self.als.P_B, f) for f in self.als.F]


def run_stage1(y_frames, design, config, A_rx, rng, refine=True):
    """Stage 1 on the first block of every frame.

    ``y_frames`` holds one stacked Stage-1 observation per frame. The ALS
    factors are split by KRF/KF; with ``refine`` the split factors seed
    :func:`refine_structured`. The rebuilt channels and the IRS vector use
    the final structured factors.
    """
    L1, L2 = config.L1, config.L2
    R_ls = [estimate_combined(y, design, config).R for y in y_frames]
    T = assemble_R_tensor(R_ls, config.M, config.Q)
    als = constrained_cp_als(
        T, A_rx, L2, rng,
        tol=config.als_tol, max_iter=config.als_max_iter, restarts=config.als_restarts,
    )
    B_rx, B_tx = krf_factorize(als.P_B, L1, L2)
    split = [kron_factorize(f, L1, L2) for f in als.F]
    beta = np.array([b for b, _ in split])
    alpha = np.array([a for _, a in split])
    A_tx = als.A_tx
    ref = None
    if refine:
        ref = refine_structured(
            T, A_rx, A_tx, B_rx, B_tx, alpha, beta,
            tol=config.als_tol, max_iter=config.als_max_iter,
        )
        A_tx, B_rx, B_tx, alpha, beta = ref.A_tx, ref.B_rx, ref.B_tx, ref.alpha, ref.beta
    P_B = khatri_rao(B_rx.T, B_tx.conj().T)
    R_hat = [rebuild_combined(A_rx, A_tx, P_B, np.kron(b, a)) for a, b in zip(alpha, beta)]
    s_opt = configure_irs(R_hat[0])
    return Stage1Estimate(
        A_tx=A_tx,
        P_B=als.P_B,
        F=als.F,
        B_rx=B_rx,
        B_tx=B_tx,
        alpha=alpha,
        beta=beta,
        R_ls=R_ls,
        R_hat=R_hat,
        s_opt=s_opt,
        als=als,
        refinement=ref,
        A_rx=A_rx,
    )
