"""Batched forward/backward passes for training on a shared mixing matrix.

All samples of a training dataset see the same matrix, so the unrolled
forward pass vectorizes across the batch: signals live in columns of an
(n, batch) array, the least-squares solves run through numpy's stacked QR,
and the softsort rows become a (k, n, batch) tensor. The math is identical
to the per-sample tape in ``gradients``; this path exists because the
per-sample version is Python-call bound, and it is tested for agreement
with the tape.

The returned weight gradient is the mean over the batch, matching the
per-sample reduction used by the optimizer.
"""

from __future__ import annotations

import numpy as np

from .gradients import NetSpec
from .linalg import RANK_RTOL, RankDeficientError


def _batched_soft_rows(v, tau, k):
    """Top-k softsort rows for every column of v.

    v is (n, batch). Internals run in (k, batch, n) layout so the softmax
    reductions run over contiguous memory. Returns (rows, diff) where
    rows is (k, batch, n) and diff (k, batch, n) keeps the signed
    distances sorted-value-minus-entry for the backward pass. The row
    maximum of the softmax logits is exactly zero (at the pivot), so no
    shift is needed.
    """
    vt = np.ascontiguousarray(v.T)
    if 4 * k < vt.shape[1]:
        # top-k via linear-time partition; candidates are then ordered by
        # descending value with ascending-index tie-break, matching the
        # stable descending argsort used by the per-sample path
        cand = np.sort(np.argpartition(-vt, k - 1, axis=1)[:, :k], axis=1)
        vals = np.take_along_axis(vt, cand, axis=1)
        piv = np.take_along_axis(cand, np.argsort(-vals, axis=1, kind="stable"), axis=1)
    else:
        piv = np.argsort(-vt, axis=1, kind="stable")[:, :k]
    sv = np.take_along_axis(vt, piv, axis=1)
    diff = sv.T[:, :, None] - vt[None, :, :]
    sign = (diff > 0).view(np.int8) - (diff < 0).view(np.int8)
    rows = np.abs(diff, out=diff)
    rows *= -1.0 / tau
    # floor the logits just above exp's underflow threshold: the result
    # (~1e-308 instead of 0) is far below every tolerance, and the
    # denormal-handling path of exp costs about 2x
    np.maximum(rows, -708.0, out=rows)
    np.exp(rows, out=rows)
    rows /= rows.sum(axis=2, keepdims=True)
    return rows, sign, piv


def _soft_rows_backward(rows, sign, piv, g_rows, tau):
    """Cotangent of v from the row cotangents g_rows (k, batch, n)."""
    inner = (g_rows * rows).sum(axis=2, keepdims=True)
    gd = rows * (g_rows - inner)
    gd *= sign
    gd /= tau
    cot_vt = gd.sum(axis=0)
    b = cot_vt.shape[0]
    cot_vt[np.arange(b)[:, None], piv] -= gd.sum(axis=2).T
    return cot_vt.T


def _complex_modulus_backward(u, mag, g_mag):
    if np.iscomplexobj(u):
        safe = np.where(mag > 0.0, mag, 1.0)
        return np.where(mag > 0.0, g_mag * u / safe, 0.0 + 0.0j)
    return g_mag * np.sign(u)


def _losses(out, x_true):
    d = out - x_true
    return np.real(d * np.conj(d)).sum(axis=0)


def batch_net_forward(net: NetSpec, w, a, ys) -> np.ndarray:
    """Forward pass for a batch of observations (columns of ``ys``)."""
    a = np.asarray(a)
    ys = np.asarray(ys)
    net.validate(a.shape[1])
    w = np.asarray(w, dtype=np.float64)
    if net.family == "iht":
        return _iht_forward(net, w, a, ys)[0]
    return _omp_forward(net, w, a, ys)[0]


def _iht_forward(net, w, a, ys, keep=False):
    ah = a.conj().T
    n = a.shape[1]
    b = ys.shape[1]
    x = np.zeros((n, b), dtype=np.result_type(a.dtype, ys.dtype))
    layers = []
    wcol = w[:, None]
    for _ in range(net.layers):
        u = x + net.eta * (ah @ (ys - a @ x))
        mag = np.abs(u)
        v = wcol * mag
        rows, sign, piv = _batched_soft_rows(v, net.tau, net.k)
        q = rows.sum(axis=0).T
        x_new = q * u
        if keep:
            layers.append((u, mag, rows, sign, piv, q))
        x = x_new
    return x, layers


def batch_iht_loss_and_grad(net: NetSpec, w, a, ys, xs):
    """Per-sample losses, mean weight gradient, and outputs (IHT family)."""
    a = np.asarray(a)
    ys = np.asarray(ys)
    xs = np.asarray(xs)
    w = np.asarray(w, dtype=np.float64)
    net.validate(a.shape[1])
    ah = a.conj().T
    wcol = w[:, None]
    eta = net.eta

    out, layers = _iht_forward(net, w, a, ys, keep=True)
    losses = _losses(out, xs.astype(out.dtype))
    if not np.all(np.isfinite(losses)):
        raise FloatingPointError("non-finite loss in batched forward pass")

    cot_x = 2.0 * (out - xs)
    grad_w = np.zeros_like(w)
    for u, mag, rows, sign, piv, q in reversed(layers):
        cot_q = np.real(cot_x * np.conj(u))
        cot_u = q * cot_x
        cot_v = _soft_rows_backward(rows, sign, piv, np.ascontiguousarray(cot_q.T)[None, :, :], net.tau)
        grad_w += (cot_v * mag).sum(axis=1)
        cot_mag = cot_v * wcol
        cot_u = cot_u + _complex_modulus_backward(u, mag, cot_mag)
        # u = x + eta * ah (ys - a x): fold the residual chain into one step
        cot_x = cot_u - eta * (ah @ (a @ cot_u))
    grad_w /= ys.shape[1]
    if not np.all(np.isfinite(grad_w)):
        raise FloatingPointError("non-finite gradient in batched backward pass")
    return losses, grad_w, out


def _omp_forward(net, w, a, ys, keep=False):
    ah = a.conj().T
    m, n = a.shape
    b = ys.shape[1]
    dtype = np.result_type(a.dtype, ys.dtype)
    x = np.zeros((n, b), dtype=dtype)
    wcol = w[:, None]
    big_b = np.zeros((b, m, net.layers), dtype=dtype)
    rows_arr = np.zeros((net.layers, n, b))
    layers = []
    cols = np.arange(b)
    yt = ys.T
    for it in range(net.layers):
        c = ah @ (ys - a @ x)
        mag = np.abs(c)
        v = wcol * mag
        jhat = np.argmax(v, axis=0)
        topv = v[jhat, cols]
        logits = -np.abs(topv[None, :] - v) / net.tau
        np.maximum(logits, -708.0, out=logits)
        e = np.exp(logits)
        row = e / e.sum(axis=0, keepdims=True)
        rows_arr[it] = row
        big_b[:, :, it] = (a @ row).T
        bview = big_b[:, :, : it + 1]
        q_f, r_f = np.linalg.qr(bview)
        pivots = np.abs(np.diagonal(r_f, axis1=1, axis2=2))
        tols = RANK_RTOL * np.linalg.norm(bview, axis=(1, 2))
        worst = int(np.argmin(pivots.min(axis=1) - tols))
        if pivots[worst].min() <= tols[worst]:
            raise RankDeficientError(float(pivots[worst].min()), float(tols[worst]))
        qhy = np.einsum("bml,mb->bl", np.conj(q_f), ys)
        z = np.linalg.solve(r_f, qhy[..., None])[..., 0]
        x = np.einsum("lnb,bl->nb", rows_arr[: it + 1], z)
        if keep:
            layers.append((c, mag, v, jhat, topv, row, q_f, r_f, z))
    return x, (layers, rows_arr, big_b)


def batch_omp_loss_and_grad(net: NetSpec, w, a, ys, xs):
    """Per-sample losses, mean weight gradient, and outputs (OMP family)."""
    a = np.asarray(a)
    ys = np.asarray(ys)
    xs = np.asarray(xs)
    w = np.asarray(w, dtype=np.float64)
    net.validate(a.shape[1])
    ah = a.conj().T
    wcol = w[:, None]
    n = a.shape[1]
    b = ys.shape[1]
    cols = np.arange(b)

    out, (layers, rows_arr, big_b) = _omp_forward(net, w, a, ys, keep=True)
    losses = _losses(out, xs.astype(out.dtype))
    if not np.all(np.isfinite(losses)):
        raise FloatingPointError("non-finite loss in batched forward pass")

    cot_x = 2.0 * (out - xs)
    grad_w = np.zeros_like(w)
    cot_rows = np.zeros((net.layers, n, b))
    for it in range(net.layers - 1, -1, -1):
        c, mag, v, jhat, topv, row, q_f, r_f, z = layers[it]
        rows_here = rows_arr[: it + 1]
        # x = sum_l z_l row_l
        cot_z = np.einsum("lnb,nb->bl", rows_here, cot_x)
        cot_rows[: it + 1] += np.real(
            z.T[:, None, :] * np.conj(cot_x)[None, :, :]
        )
        # least-squares backward through the cached stacked QR
        rh = np.conj(np.transpose(r_f, (0, 2, 1)))
        t = np.linalg.solve(rh, cot_z[..., None])
        lam = np.linalg.solve(r_f, t)[..., 0]
        bview = big_b[:, :, : it + 1]
        bl = np.einsum("bml,bl->bm", bview, lam)
        bz = np.einsum("bml,bl->bm", bview, z)
        resid = ys.T - bz
        cot_b = resid[:, :, None] * np.conj(lam)[:, None, :] - bl[:, :, None] * np.conj(z)[:, None, :]
        # each column of B is a @ row_l
        cot_rows[: it + 1] += np.real(np.einsum("nm,bml->lnb", ah, cot_b))
        # this layer's row is now fully accumulated: softmax + |.| backward
        g_row = cot_rows[it]
        gd = row * (g_row - (g_row * row).sum(axis=0, keepdims=True))
        sgn = np.sign(topv[None, :] - v)
        t_row = gd * sgn / net.tau
        cot_v = t_row.copy()
        cot_v[jhat, cols] -= t_row.sum(axis=0)
        grad_w += (cot_v * mag).sum(axis=1)
        cot_mag = cot_v * wcol
        cot_c = _complex_modulus_backward(c, mag, cot_mag)
        # c = ah (ys - a x_prev)
        cot_x = -(ah @ (a @ cot_c))
    grad_w /= b
    if not np.all(np.isfinite(grad_w)):
        raise FloatingPointError("non-finite gradient in batched backward pass")
    return losses, grad_w, out


def batch_loss_and_grad(net: NetSpec, w, a, ys, xs):
    """Dispatch to the batched family implementation."""
    if net.family == "iht":
        return batch_iht_loss_and_grad(net, w, a, ys, xs)
    return batch_omp_loss_and_grad(net, w, a, ys, xs)
