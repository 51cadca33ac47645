"""Reverse-mode differentiation for the unrolled soft recovery networks.

The networks are fixed compositions of a small op set (matrix-vector
products against the constant mixing matrix, modulus, weighted scaling,
softsort rows, least-squares solves, Hadamard masking), so instead of a
general autodiff framework this module records a tape of those ops and
replays it backward with hand-derived rules.

Complex values are differentiated as real pairs: the loss and the trainable
weights are real, so the cotangent of a complex quantity ``z`` is stored as
``dL/dRe(z) + i dL/dIm(z)``. Under that packing every rule below reduces to
ordinary matrix algebra (conjugate transposes where the forward op was
complex-linear, real parts where the forward input was real).

The sort permutations inside softsort rows are treated as locally constant
(they are, away from ties) and the kink of |.| at zero uses the zero
subgradient, so the gradients are exact almost everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .linalg import qr_lstsq
from .sortops import _soft_rows, softsort_first_row


class GradientNumericsError(RuntimeError):
    """A forward or backward value became NaN/Inf."""

    def __init__(self, phase: str, op: str, layer: int | None):
        where = f"layer {layer}" if layer is not None else "loss"
        super().__init__(f"non-finite value in {phase} pass at {where}, op '{op}'")
        self.phase = phase
        self.op = op
        self.layer = layer


@dataclass
class NetSpec:
    """Architecture of an unrolled network.

    family : "omp" (one softsort selection row per layer, least-squares
             refit) or "iht" (gradient step + summed softsort top-k mask)
    layers : number of unrolled iterations (the OMP family emits one index
             per layer, so the output is ``layers``-sparse in the exact limit)
    tau    : softsort temperature shared by all layers
    k      : mask sparsity (IHT family)
    eta    : step size (IHT family)
    """

    family: str
    layers: int
    tau: float
    k: int | None = None
    eta: float | None = None

    def validate(self, n_cols: int) -> None:
        if self.family not in ("omp", "iht"):
            raise ValueError(f"unknown network family {self.family!r}")
        if self.layers < 1:
            raise ValueError("network needs at least one layer")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.family == "iht":
            if self.k is None or not 1 <= self.k <= n_cols:
                raise ValueError(f"iht network needs sparsity k in [1, {n_cols}]")
            if self.eta is None or self.eta <= 0:
                raise ValueError("iht network needs a positive step size eta")


@dataclass
class GradientResult:
    """Loss, exact weight gradient, and per-layer gradient diagnostics."""

    loss: float
    grad_w: np.ndarray
    output: np.ndarray
    layer_grad_norms: list
    saturated_layers: list


class _Node:
    __slots__ = ("op", "parents", "value", "ctx", "grad", "layer")

    def __init__(self, op, parents, value, ctx, layer):
        self.op = op
        self.parents = parents
        self.value = value
        self.ctx = ctx
        self.grad = None
        self.layer = layer


def modulus_backward(z, upstream):
    """Cotangent of z for m = |z| given the cotangent of m.

    Complex z != 0 gives upstream * z/|z| (the real-pair gradient packed as
    a complex number); real z gives upstream * sign(z); the kink at zero
    uses the zero subgradient.
    """
    z = np.asarray(z)
    u = np.asarray(upstream)
    if np.iscomplexobj(z):
        mag = np.abs(z)
        safe = np.where(mag > 0.0, mag, 1.0)
        return np.where(mag > 0.0, u * z / safe, 0.0 + 0.0j)
    return u * np.sign(z)


def ls_solve_backward(b, y, z, upstream, qr=None):
    """Cotangents of (B, y) for z = argmin ||y - Bz|| given the cotangent of z.

    Implements the implicit-function rule of the normal equations
    B*B z = B*y. With lam = (B*B)^{-1} upstream (two triangular solves
    against the cached QR factor) and r = y - Bz:

        cot_y = B lam,      cot_B = r lam* - (B lam) z*.

    Requires full column rank (same tolerance as the forward solve).
    """
    b = np.asarray(b)
    y = np.asarray(y)
    z = np.asarray(z)
    g = np.asarray(upstream)
    if qr is None:
        _, q, r_factor = qr_lstsq(b, y)
    else:
        q, r_factor = qr
    t = solve_triangular(r_factor, g, trans="C", lower=False, check_finite=False)
    lam = solve_triangular(r_factor, t, lower=False, check_finite=False)
    bl = b @ lam
    resid = y - b @ z
    cot_b = np.outer(resid, np.conj(lam)) - np.outer(bl, np.conj(z))
    return cot_b, bl


class Tape:
    """Append-only DAG of forward ops, replayed in exact reverse order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._layer = None

    def _add(self, op, parents, value, ctx=None):
        self.nodes.append(_Node(op, parents, value, ctx, self._layer))
        return len(self.nodes) - 1

    def begin_layer(self, idx: int) -> None:
        self._layer = idx

    def end_layers(self) -> None:
        self._layer = None

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    # ---- op constructors -------------------------------------------------

    def leaf(self, value):
        return self._add("leaf", (), np.asarray(value))

    def const(self, value):
        return self._add("const", (), np.asarray(value))

    def matvec(self, a, ah, x_id):
        return self._add("matvec", (x_id,), a @ self.nodes[x_id].value, ctx=ah)

    def adj_matvec(self, a, ah, r_id):
        return self._add("adj_matvec", (r_id,), ah @ self.nodes[r_id].value, ctx=a)

    def sub_from_const(self, c, x_id):
        return self._add("sub_from_const", (x_id,), c - self.nodes[x_id].value)

    def sub_const(self, x_id, c):
        return self._add("sub_const", (x_id,), self.nodes[x_id].value - c)

    def axpy(self, x_id, t_id, eta: float):
        value = self.nodes[x_id].value + eta * self.nodes[t_id].value
        return self._add("axpy", (x_id, t_id), value, ctx=eta)

    def modulus(self, z_id):
        return self._add("modulus", (z_id,), np.abs(self.nodes[z_id].value))

    def weighted_scale(self, w_id, m_id):
        value = self.nodes[w_id].value * self.nodes[m_id].value
        return self._add("weighted_scale", (w_id, m_id), value)

    def soft_row(self, v_id, tau: float):
        v = self.nodes[v_id].value
        if not np.all(np.isfinite(v)):
            self._raise_located("forward")
        row = softsort_first_row(v, tau)
        jhat = int(np.argmax(v))
        return self._add("soft_row", (v_id,), row, ctx=(tau, jhat))

    def soft_rows(self, v_id, tau: float, k: int):
        v = self.nodes[v_id].value
        if not np.all(np.isfinite(v)):
            self._raise_located("forward")
        rows, pivots = _soft_rows(v, tau, k)
        return self._add("soft_rows", (v_id,), rows, ctx=(tau, pivots))

    def sum_rows(self, rows_id):
        return self._add("sum_rows", (rows_id,), self.nodes[rows_id].value.sum(axis=0))

    def hadamard(self, q_id, u_id):
        value = self.nodes[q_id].value * self.nodes[u_id].value
        return self._add("hadamard", (q_id, u_id), value)

    def lstsq(self, col_ids, y):
        b = np.column_stack([self.nodes[c].value for c in col_ids])
        z, q, r = qr_lstsq(b, y)
        return self._add("lstsq", tuple(col_ids), z, ctx=(b, q, r, y))

    def lincomb(self, row_ids, z_id):
        rows = np.stack([self.nodes[r].value for r in row_ids])
        value = rows.T @ self.nodes[z_id].value
        return self._add("lincomb", (*row_ids, z_id), value, ctx=rows)

    def sum_squares(self, d_id):
        d = self.nodes[d_id].value
        return self._add("sum_squares", (d_id,), float(np.real(np.vdot(d, d))))

    # ---- backward --------------------------------------------------------

    def _accumulate(self, nid, grad):
        node = self.nodes[nid]
        if node.op == "const":
            return
        if node.grad is None:
            node.grad = np.array(grad, copy=True)
        else:
            node.grad += grad

    def backward(self, loss_id: int):
        self.nodes[loss_id].grad = 1.0
        for nid in range(loss_id, -1, -1):
            node = self.nodes[nid]
            g = node.grad
            if g is None or node.op in ("leaf", "const"):
                continue
            getattr(self, "_bwd_" + node.op)(node, g)

    def _bwd_matvec(self, node, g):
        cot = node.ctx @ g
        parent = self.nodes[node.parents[0]]
        if not np.iscomplexobj(parent.value):
            cot = np.real(cot)
        self._accumulate(node.parents[0], cot)

    def _bwd_adj_matvec(self, node, g):
        self._accumulate(node.parents[0], node.ctx @ g)

    def _bwd_sub_from_const(self, node, g):
        self._accumulate(node.parents[0], -g)

    def _bwd_sub_const(self, node, g):
        self._accumulate(node.parents[0], g)

    def _bwd_axpy(self, node, g):
        self._accumulate(node.parents[0], g)
        self._accumulate(node.parents[1], node.ctx * g)

    def _bwd_modulus(self, node, g):
        z = self.nodes[node.parents[0]].value
        mag = node.value
        if np.iscomplexobj(z):
            safe = np.where(mag > 0.0, mag, 1.0)
            cot = np.where(mag > 0.0, g * z / safe, 0.0 + 0.0j)
        else:
            cot = g * np.sign(z)
        self._accumulate(node.parents[0], cot)

    def _bwd_weighted_scale(self, node, g):
        w = self.nodes[node.parents[0]].value
        m = self.nodes[node.parents[1]].value
        self._accumulate(node.parents[0], g * m)
        self._accumulate(node.parents[1], g * w)

    def _bwd_soft_row(self, node, g):
        tau, jhat = node.ctx
        row = node.value
        v = self.nodes[node.parents[0]].value
        gd = row * (g - float(g @ row))
        s = np.sign(v[jhat] - v)
        t = gd * s / tau
        cot = t.copy()
        cot[jhat] -= t.sum()
        self._accumulate(node.parents[0], cot)

    def _bwd_soft_rows(self, node, g):
        tau, pivots = node.ctx
        rows = node.value
        v = self.nodes[node.parents[0]].value
        gd = rows * (g - (g * rows).sum(axis=1, keepdims=True))
        s = np.sign(v[pivots][:, None] - v[None, :])
        t = gd * s / tau
        cot = t.sum(axis=0)
        np.subtract.at(cot, pivots, t.sum(axis=1))
        self._accumulate(node.parents[0], cot)

    def _bwd_sum_rows(self, node, g):
        rows = self.nodes[node.parents[0]].value
        self._accumulate(node.parents[0], np.broadcast_to(g, rows.shape))

    def _bwd_hadamard(self, node, g):
        q = self.nodes[node.parents[0]].value
        u = self.nodes[node.parents[1]].value
        cot_q = g * np.conj(u)
        if np.iscomplexobj(cot_q):
            cot_q = np.real(cot_q)
        self._accumulate(node.parents[0], cot_q)
        self._accumulate(node.parents[1], q * g)

    def _bwd_lstsq(self, node, g):
        b, q, r, y = node.ctx
        cot_b, _ = ls_solve_backward(b, y, node.value, g, qr=(q, r))
        for col, parent in enumerate(node.parents):
            cot = cot_b[:, col]
            if not np.iscomplexobj(self.nodes[parent].value):
                cot = np.real(cot)
            self._accumulate(parent, cot)

    def _bwd_lincomb(self, node, g):
        rows = node.ctx
        z_id = node.parents[-1]
        z = self.nodes[z_id].value
        self._accumulate(z_id, rows @ g)
        cot_rows = z[:, None] * np.conj(g)[None, :]
        if np.iscomplexobj(cot_rows):
            cot_rows = np.real(cot_rows)
        for i, row_id in enumerate(node.parents[:-1]):
            self._accumulate(row_id, cot_rows[i])

    def _bwd_sum_squares(self, node, g):
        d = self.nodes[node.parents[0]].value
        self._accumulate(node.parents[0], 2.0 * g * d)

    # ---- diagnostics -----------------------------------------------------

    def check_forward(self, nid: int, phase: str = "forward"):
        value = self.nodes[nid].value
        if not np.all(np.isfinite(value)):
            self._raise_located(phase)

    def _raise_located(self, phase: str):
        for node in self.nodes:
            probe = node.value if phase == "forward" else node.grad
            if probe is not None and not np.all(np.isfinite(probe)):
                raise GradientNumericsError(phase, node.op, node.layer)
        raise GradientNumericsError(phase, "unknown", None)


def _build_omp_net(tape: Tape, w_id: int, a, y, net: NetSpec):
    n = a.shape[1]
    ah = a.conj().T
    x_id = tape.const(np.zeros(n, dtype=np.result_type(a.dtype, y.dtype)))
    row_ids: list[int] = []
    col_ids: list[int] = []
    v_ids: list[int] = []
    for layer in range(net.layers):
        tape.begin_layer(layer)
        ax = tape.matvec(a, ah, x_id)
        r = tape.sub_from_const(y, ax)
        c = tape.adj_matvec(a, ah, r)
        m = tape.modulus(c)
        v = tape.weighted_scale(w_id, m)
        row = tape.soft_row(v, net.tau)
        row_ids.append(row)
        col_ids.append(tape.matvec(a, ah, row))
        z = tape.lstsq(col_ids, y)
        x_id = tape.lincomb(row_ids, z)
        tape.check_forward(x_id)
        v_ids.append(v)
    tape.end_layers()
    return x_id, v_ids


def _build_iht_net(tape: Tape, w_id: int, a, y, net: NetSpec):
    n = a.shape[1]
    ah = a.conj().T
    x_id = tape.const(np.zeros(n, dtype=np.result_type(a.dtype, y.dtype)))
    v_ids: list[int] = []
    for layer in range(net.layers):
        tape.begin_layer(layer)
        ax = tape.matvec(a, ah, x_id)
        r = tape.sub_from_const(y, ax)
        grad_step = tape.adj_matvec(a, ah, r)
        u = tape.axpy(x_id, grad_step, net.eta)
        m = tape.modulus(u)
        v = tape.weighted_scale(w_id, m)
        rows = tape.soft_rows(v, net.tau, net.k)
        q = tape.sum_rows(rows)
        x_id = tape.hadamard(q, u)
        tape.check_forward(x_id)
        v_ids.append(v)
    tape.end_layers()
    return x_id, v_ids


def net_forward(net: NetSpec, w, a, y) -> np.ndarray:
    """Forward pass through the network without recording a tape.

    Runs the same kernels as the weighted soft solvers but skips all trace
    bookkeeping; used for dataset-level evaluations, where the per-call cost
    dominates training time.
    """
    from .sortops import softsort_top_rows

    a = np.asarray(a)
    y = np.asarray(y)
    net.validate(a.shape[1])
    w = np.asarray(w, dtype=np.float64)
    m, n = a.shape
    ah = a.conj().T
    dtype = np.result_type(a.dtype, y.dtype)
    x = np.zeros(n, dtype=dtype)
    if net.family == "omp":
        pi = np.zeros((net.layers, n))
        b = np.zeros((m, net.layers), dtype=dtype)
        for it in range(net.layers):
            v = w * np.abs(ah @ (y - a @ x))
            row = softsort_first_row(v, net.tau)
            pi[it] = row
            b[:, it] = a @ row
            z, _, _ = qr_lstsq(b[:, : it + 1], y)
            x = pi[: it + 1].T @ z
        return x
    for _ in range(net.layers):
        u = x + net.eta * (ah @ (y - a @ x))
        v = w * np.abs(u)
        q = softsort_top_rows(v, net.tau, net.k).sum(axis=0)
        x = q * u
    return x


def loss_and_grad(net: NetSpec, w, a, y, x_true) -> GradientResult:
    """Squared loss ||NN_w(y) - x_true||^2 and its exact gradient in w."""
    a = np.asarray(a)
    y = np.asarray(y)
    x_true = np.asarray(x_true)
    net.validate(a.shape[1])
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (a.shape[1],):
        raise ValueError(f"weights shape {w.shape} does not match signal length {a.shape[1]}")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")

    tape = Tape()
    w_id = tape.leaf(w)
    build = _build_omp_net if net.family == "omp" else _build_iht_net
    out_id, v_ids = build(tape, w_id, a, y, net)
    d_id = tape.sub_const(out_id, x_true.astype(tape.value(out_id).dtype))
    loss_id = tape.sum_squares(d_id)
    tape.check_forward(loss_id)

    tape.backward(loss_id)
    grad_w = tape.nodes[w_id].grad
    if grad_w is None:
        grad_w = np.zeros_like(w)
    if not np.all(np.isfinite(grad_w)):
        tape._raise_located("backward")

    layer_norms = []
    saturated = []
    for layer, v_id in enumerate(v_ids):
        g = tape.nodes[v_id].grad
        norm = float(np.linalg.norm(g)) if g is not None else 0.0
        layer_norms.append(norm)
        if norm == 0.0:
            saturated.append(layer)
    return GradientResult(
        loss=float(tape.value(loss_id)),
        grad_w=np.asarray(grad_w, dtype=np.float64),
        output=tape.value(out_id),
        layer_grad_norms=layer_norms,
        saturated_layers=saturated,
    )


def forward_backward(net: NetSpec, w, instance) -> GradientResult:
    """`loss_and_grad` against a generated problem instance."""
    return loss_and_grad(net, w, instance.a, instance.y, instance.x_true)
