"""Vectorized adaptive Gauss-Kronrod (G7/K15) quadrature.

All integrands are vector valued: ``f(x)`` maps a 1D array of nodes to an
array of shape (n_components, len(x)). Every component shares one panel
mesh, so a single refinement serves all diffraction orders and cumulant
moments at once. The accepted mesh is returned as a plain node/weight rule
that can be reused for integrands with the same difficulty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure

# Kronrod 15-point nodes on [-1, 1] (positive half) and weights; the
# Gauss 7-point rule uses every second Kronrod node.
_XK = np.array(
    [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144845693013,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ]
)
_WK = np.array(
    [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ]
)
_WG = np.array(
    [
        0.129484966168869693270611432679082,
        0.279705391489276667901467771423780,
        0.381830050505118944950369775488975,
        0.417959183673469387755102040816327,
    ]
)

KRONROD_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WK[:-1], _WK[::-1]])
# positions of the Gauss nodes inside KRONROD_NODES
_GAUSS_IDX = np.array([1, 3, 5, 7, 9, 11, 13])
GAUSS_WEIGHTS = np.concatenate([_WG[:-1], _WG[::-1]])


@dataclass(frozen=True)
class Rule:
    """Composite rule: integral of g ~ g(nodes) @ weights."""

    nodes: np.ndarray
    weights: np.ndarray
    integral: np.ndarray
    error: np.ndarray
    n_panels: int

    def apply(self, values):
        return values @ self.weights


def composite_rule(breaks):
    """Fixed K15 rule on the panels defined by sorted ``breaks``."""
    breaks = np.asarray(breaks, dtype=float)
    a, b = breaks[:-1], breaks[1:]
    mid, half = (a + b) / 2, (b - a) / 2
    nodes = (mid[:, None] + half[:, None] * KRONROD_NODES).ravel()
    weights = (half[:, None] * KRONROD_WEIGHTS).ravel()
    return nodes, weights


def graded_breaks(a, b, margin_a=0.0, margin_b=0.0, ratio=2.0, interior=()):
    """Break points on [a, b] refined geometrically toward any end with a margin.

    A positive margin means the integrand is singular or wildly oscillating
    at that end; panels shrink by ``ratio`` down to the margin width.
    """
    pts = {a, b, *[p for p in interior if a < p < b]}
    L = b - a
    for end, sign, margin in ((a, 1.0, margin_a), (b, -1.0, margin_b)):
        if margin <= 0.0:
            continue
        w = margin
        while w < L / 4:
            pts.add(end + sign * w)
            w *= ratio
    return np.array(sorted(pts))


def adaptive_rule(f, breaks, atol=1e-10, rtol=1e-8, max_panels=200_000):
    """Refine the panels in ``breaks`` until the K15-G7 error estimate meets tolerance.

    A panel is accepted when its error is below its share (by width) of
    max(atol, rtol * |I|), with |I| the largest component magnitude of the
    current estimate, or when the error is at rounding level for that
    panel. Raises :class:`NumericalFailure` if ``max_panels`` is exceeded.
    """
    breaks = np.asarray(breaks, dtype=float)
    total = breaks[-1] - breaks[0]
    pending_a, pending_b = breaks[:-1], breaks[1:]
    acc_a, acc_b, acc_k, acc_e = [], [], [], []
    n_eval = 0
    accepted = 0.0
    while pending_a.size:
        if n_eval + pending_a.size > max_panels:
            raise NumericalFailure(
                f"adaptive quadrature exceeded {max_panels} panels ({n_eval} evaluated panels)"
            )
        mid, half = (pending_a + pending_b) / 2, (pending_b - pending_a) / 2
        x = (mid[:, None] + half[:, None] * KRONROD_NODES).ravel()
        vals = np.atleast_2d(f(x))
        vals = vals.reshape(vals.shape[0], pending_a.size, KRONROD_NODES.size)
        kron = (vals * KRONROD_WEIGHTS).sum(-1) * half
        gauss = (vals[..., _GAUSS_IDX] * GAUSS_WEIGHTS).sum(-1) * half
        err = np.abs(kron - gauss).max(axis=0)
        scale = np.abs(vals).max(axis=(0, 2))
        n_eval += pending_a.size

        current = accepted + kron.sum(axis=1)
        tol = max(atol, rtol * float(np.abs(current).max()))
        width = pending_b - pending_a
        ok = (err <= tol * width / total) | (err <= 1e-14 * width * np.maximum(scale, 1.0))
        acc_a.append(pending_a[ok])
        acc_b.append(pending_b[ok])
        acc_k.append(kron[:, ok])
        accepted = accepted + kron[:, ok].sum(axis=1)
        acc_e.append(err[ok])
        bad_a, bad_b = pending_a[~ok], pending_b[~ok]
        m = (bad_a + bad_b) / 2
        pending_a = np.concatenate([bad_a, m])
        pending_b = np.concatenate([m, bad_b])

    a = np.concatenate(acc_a)
    b = np.concatenate(acc_b)
    order = np.argsort(a)
    a, b = a[order], b[order]
    nodes, weights = composite_rule(np.append(a, b[-1]))
    integral = np.concatenate(acc_k, axis=1).sum(axis=1)
    error = np.concatenate(acc_e).sum()
    return Rule(nodes, weights, integral, np.atleast_1d(error), a.size)
