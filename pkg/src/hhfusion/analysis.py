"""Post-hoc audits of trained value matrices and parameter budgets."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from .errors import ShapeError
from .nn import Module


@dataclass
class SvdParts:
    U: np.ndarray
    Sigma: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.Sigma) @ self.V.T


@dataclass
class AblatedValue:
    kind: str  # "Wuv" or "Wsigma"
    matrix: np.ndarray


def _round_robin(n: int):
    """Rounds of disjoint column pairs covering every pair once (n even)."""
    players = list(range(n))
    for _ in range(n - 1):
        yield np.array(players[: n // 2]), np.array(players[n // 2 :][::-1])
        players = [players[0], players[-1]] + players[1:-1]


def _complete_basis(U: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns of ``U`` where ``good`` is False with an orthonormal completion."""
    n = U.shape[0]
    basis = [U[:, j] for j in range(U.shape[1]) if good[j]]
    out = U.copy()
    candidates = iter(np.eye(n))
    for j in np.flatnonzero(~good):
        while True:
            e = next(candidates)
            for _ in range(2):
                for b in basis:
                    e = e - (b @ e) * b
            norm = np.linalg.norm(e)
            if norm > 1e-8:
                e = e / norm
                break
        basis.append(e)
        out[:, j] = e
    return out


def jacobi_svd(W: np.ndarray, tol: float = 1e-15, max_sweeps: int = 80) -> SvdParts:
    """One-sided (Hestenes) Jacobi SVD with vectorised round-robin sweeps."""
    A = np.array(W, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"svd_decompose expects a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix contains non-finite entries")
    n = A.shape[0]
    m = n + (n % 2)
    # row-major working copies: rows of ``cols`` are the columns being orthogonalised
    cols = np.zeros((m, n))
    cols[:n] = A.T
    Vt = np.eye(m)
    rounds = list(_round_robin(m)) if m > 1 else []
    for _ in range(max_sweeps):
        worst = 0.0
        for p, q in rounds:
            ap, aq = cols[p], cols[q]
            alpha = np.einsum("ij,ij->i", ap, ap)
            beta = np.einsum("ij,ij->i", aq, aq)
            gamma = np.einsum("ij,ij->i", ap, aq)
            denom = np.sqrt(alpha * beta)
            active = (denom > 0) & (np.abs(gamma) > tol * denom)
            if not active.any():
                continue
            worst = max(worst, float(np.max(np.abs(gamma[active]) / denom[active])))
            zeta = np.where(active, (beta - alpha) / np.where(active, 2.0 * gamma, 1.0), 0.0)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(active, t, 0.0)[:, None]
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            cols[p], cols[q] = c * ap - s * aq, s * ap + c * aq
            vp, vq = Vt[p], Vt[q]
            Vt[p], Vt[q] = c * vp - s * vq, s * vp + c * vq
        if worst <= tol:
            break
    work, V = cols[:n].T, Vt[:n, :n].T
    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, work, V = sigma[order], work[:, order], V[:, order]
    good = sigma > max(sigma.max(initial=0.0), 1.0) * 1e-13
    U = np.zeros_like(work)
    U[:, good] = work[:, good] / sigma[good]
    if not good.all():
        U = _complete_basis(U, good)
        sigma = np.where(good, sigma, 0.0)
    # sign convention: largest-magnitude entry of each right singular vector is positive
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.where(V[pivot, np.arange(n)] < 0, -1.0, 1.0)
    return SvdParts(U * signs, sigma, V * signs)


def svd_decompose(W) -> SvdParts:
    return jacobi_svd(np.asarray(W, dtype=np.float64))


def build_wuv(parts: SvdParts) -> AblatedValue:
    """Rotation part ``U V^T``: the nearest orthogonal matrix to ``W``."""
    return AblatedValue("Wuv", parts.U @ parts.V.T)


def row_norms(W) -> np.ndarray:
    return np.linalg.norm(np.asarray(W, dtype=np.float64), axis=1)


def build_wsigma(parts: SvdParts, W, degenerate_rtol: float = 1e-12) -> AblatedValue:
    """Scaling part: row norms of ``W`` mapped affinely onto ``[Sigma_min, Sigma_max]``.

    When all row norms coincide the affine map is undefined; the result is then
    ``Sigma_max * I``.
    """
    c = row_norms(W)
    s_max, s_min = float(parts.Sigma.max()), float(parts.Sigma.min())
    c_max, c_min = float(c.max()), float(c.min())
    if c_max - c_min <= degenerate_rtol * max(abs(c_max), 1e-300):
        diag = np.full(c.shape, s_max)
    else:
        diag = (s_max - s_min) * (c - c_max) / (c_max - c_min) + s_max
    return AblatedValue("Wsigma", np.diag(diag))


def orthogonality_report(M) -> Dict[str, float]:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"orthogonality_report expects a square matrix, got {M.shape}")
    defect = M.T @ M - np.eye(M.shape[0])
    return {
        "frobenius_defect": float(np.linalg.norm(defect)),
        "max_abs_defect": float(np.max(np.abs(defect))) if defect.size else 0.0,
    }


def namespace_of(name: str) -> str:
    parts = name.split("/")
    if parts[0] == "adapter" and len(parts) > 2:
        return "/".join(parts[:2])
    return parts[0]


@dataclass
class ParameterCount:
    total: int
    groups: "OrderedDict[str, int]"

    def __int__(self) -> int:
        return self.total


def count_named(named: Iterable[Tuple[str, np.ndarray]]) -> ParameterCount:
    groups: "OrderedDict[str, int]" = OrderedDict()
    for name, arr in named:
        key = namespace_of(name)
        groups[key] = groups.get(key, 0) + int(np.asarray(arr).size)
    return ParameterCount(sum(groups.values()), groups)


def count_parameters(obj, trainable_only: bool = True) -> ParameterCount:
    """Exact scalar count of a module's (trainable) parameters, or of a name->array map."""
    if isinstance(obj, Module):
        named = [(n, p.data) for n, p in obj.named_parameters() if p.requires_grad or not trainable_only]
    elif isinstance(obj, Mapping):
        named = list(obj.items())
    else:
        raise TypeError(f"cannot count parameters of {type(obj).__name__}")
    return count_named(named)


def format_report(items: Mapping[str, object]) -> str:
    """Line-oriented ``key=value`` text."""
    lines = []
    for key, value in items.items():
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> Dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
