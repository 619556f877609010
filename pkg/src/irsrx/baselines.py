"""Reference estimators: plain LS and a static per-column KRF.

The KRF baseline splits every column of the LS estimate into one column
of ``G`` and one row of ``H`` and holds the resulting effective channel
fixed over all blocks of a frame, so it cannot follow channel aging.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .parkron import EstimationError, estimate_combined
from .tensor import dominant_singular_triplet, pinv, unvec

__all__ = ["BaselineEstimate", "ls_baseline", "krf_split", "krf_static_baseline", "zf_detect"]


@dataclass
class BaselineEstimate:
    method: str
    R_hat: list
    G_hat: list = field(default_factory=list)   # (M, N) per frame
    H_hat: list = field(default_factory=list)   # (N, Q) per frame
    W_hat: list = field(default_factory=list)   # (M, Q) per frame, fixed over blocks


def ls_baseline(y_frames, design, config):
    """Per-frame LS estimates of the combined channel."""
    R = [estimate_combined(y, design, config).R for y in y_frames]
    return BaselineEstimate(method="ls", R_hat=R)


def krf_split(R, M, Q):
    """Per-column rank-one split ``R ~ H^T kr G``.

    Column ``n`` reshaped to ``M x Q`` is approximated by
    ``G[:, n] H[n, :]``; ``H[n, 0]`` is scaled to one.

    Raises
    ------
    EstimationError
        If a column of ``R`` is zero or has ``H[n, 0] == 0``.
    """
    R = np.asarray(R)
    N = R.shape[1]
    G = np.empty((M, N), dtype=complex)
    H = np.empty((N, Q), dtype=complex)
    for n in range(N):
        block = unvec(R[:, n], M, Q)
        if not np.any(block):
            raise EstimationError(f"column {n} of R is zero")
        u, s, v = dominant_singular_triplet(block)
        h = v.conj()
        if h[0] == 0:
            raise EstimationError(f"cannot normalize row {n} of H")
        G[:, n] = u * s * h[0]
        H[n] = h / h[0]
        H[n, 0] = 1.0
    return G, H


def krf_static_baseline(R_frames, s_opt, M, Q):
    """KRF factors per frame and the static ``W = G D(s_opt) H``."""
    est = BaselineEstimate(method="krf", R_hat=[])
    for R in R_frames:
        G, H = krf_split(R, M, Q)
        est.G_hat.append(G)
        est.H_hat.append(H)
        est.R_hat.append(np.stack([np.kron(H[n], G[:, n]) for n in range(H.shape[0])], axis=1))
        est.W_hat.append((G * s_opt) @ H)
    return est


def zf_detect(W_hat, blocks):
    """Zero-forcing symbols ``pinv(W) Y`` for each block, shape ``(K, Q, T)``."""
    Winv = pinv(W_hat)
    return np.stack([Winv @ Y for Y in np.asarray(blocks)])
