"""Training losses and their gradients.

Cluster assignments are frozen per step, but centroids are differentiable
functions of their member normals (normalize of the mean), so the cluster
and orthogonality terms push gradients back into the geometry.  L1 terms
use sign(0) = 0 at kink points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DomainError


class NonFiniteLossError(RuntimeError):
    """A loss came out NaN/inf; the training step should be skipped."""


@dataclass
class LossWeights:
    lambda_ctr: float = 2e-3
    lambda_ort: float = 2e-3
    lambda_man: float = 2e-3
    delay_steps: int = 500
    ramp_steps: int = 2500

    def __post_init__(self):
        if min(self.lambda_ctr, self.lambda_ort, self.lambda_man) < 0:
            raise DomainError("loss weights must be non-negative")
        if self.delay_steps < 0 or self.ramp_steps < 0:
            raise DomainError("schedule steps must be non-negative")


@dataclass
class LossReport:
    l_img: float
    l_ctr: float
    l_ort: float
    l_man: float | None
    total: float


def photometric_loss(rendered, target):
    """Mean over rays of the squared rgb error norm."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape or rendered.shape[0] < 1:
        raise DomainError("rendered/target shape mismatch")
    return float(np.mean(np.sum((rendered - target) ** 2, axis=-1)))


def photometric_loss_with_grad(rendered, target):
    loss = photometric_loss(rendered, target)
    grad = 2.0 * (np.asarray(rendered) - np.asarray(target)) / rendered.shape[0]
    return loss, grad


def _unit_centroids(members):
    """Centroids c_i = mean(members_i)/|mean| plus what backward needs."""
    means, norms, cents = [], [], []
    for m in members:
        if len(m) == 0:
            raise DomainError("empty cluster in loss")
        mu = np.asarray(m, dtype=np.float64).mean(axis=0)
        n = np.linalg.norm(mu)
        if n < 1e-12:
            raise DomainError("degenerate (zero-mean) cluster in loss")
        means.append(mu)
        norms.append(n)
        cents.append(mu / n)
    return cents, norms


def _centroid_grad_to_members(members, cents, norms, grad_c):
    """Push gradients on unit centroids back to the member normals."""
    out = []
    for m, c, n, gc in zip(members, cents, norms, grad_c):
        gm = (gc - c * float(c @ gc)) / n
        out.append(np.tile(gm / len(m), (len(m), 1)))
    return out


def centroid_loss(triplet):
    """Average per-cluster L1 tightness around the (stored) centroids."""
    total = 0.0
    for m, c in zip(triplet.members, triplet.centroids):
        if len(m) == 0:
            raise DomainError("empty cluster")
        m = np.asarray(m, dtype=np.float64)
        total += np.mean(np.abs(1.0 - m @ c) + np.sum(np.abs(c - m), axis=1))
    return float(total / 3.0)


def centroid_loss_with_grad(members):
    """centroid_loss with centroids recomputed differentiably from the
    members.  Returns (loss, per-cluster member gradients)."""
    cents, norms = _unit_centroids(members)
    loss = 0.0
    grads = []
    grad_c = []
    for m, c in zip(members, cents):
        m = np.asarray(m, dtype=np.float64)
        k = len(m)
        dot_res = 1.0 - m @ c
        diff = c - m
        loss += np.mean(np.abs(dot_res) + np.sum(np.abs(diff), axis=1))
        s_dot = np.sign(dot_res)
        s_diff = np.sign(diff)
        grads.append((-s_dot[:, None] * c - s_diff) / (3.0 * k))
        grad_c.append((-(s_dot[:, None] * m).sum(axis=0) + s_diff.sum(axis=0)) / (3.0 * k))
    for g, extra in zip(grads, _centroid_grad_to_members(members, cents, norms, grad_c)):
        g += extra
    return float(loss / 3.0), grads


def orthogonality_loss(n1, n2, n3):
    """Mean absolute pairwise dot of the three centroids."""
    n1, n2, n3 = (np.asarray(v, dtype=np.float64) for v in (n1, n2, n3))
    return float((abs(n1 @ n2) + abs(n1 @ n3) + abs(n2 @ n3)) / 3.0)


def orthogonality_loss_with_grad(members):
    cents, norms = _unit_centroids(members)
    c1, c2, c3 = cents
    loss = orthogonality_loss(c1, c2, c3)
    s12, s13, s23 = np.sign(c1 @ c2), np.sign(c1 @ c3), np.sign(c2 @ c3)
    grad_c = [
        (s12 * c2 + s13 * c3) / 3.0,
        (s12 * c1 + s23 * c3) / 3.0,
        (s13 * c1 + s23 * c2) / 3.0,
    ]
    return loss, _centroid_grad_to_members(members, cents, norms, grad_c)


def closest_axis(c, axes):
    """The axis (or its opposite) with the largest cosine to c."""
    cands = np.concatenate([np.asarray(axes, dtype=np.float64), -np.asarray(axes, dtype=np.float64)])
    return cands[int(np.argmax(cands @ np.asarray(c, dtype=np.float64)))]


def mf_known_loss(triplet, mf_axes):
    """Alignment of each centroid with its closest known frame axis."""
    total = 0.0
    for c in triplet.centroids:
        m = closest_axis(c, mf_axes)
        total += abs(1.0 - c @ m) + np.sum(np.abs(c - m))
    return float(total)


def mf_known_loss_with_grad(members, mf_axes):
    cents, norms = _unit_centroids(members)
    loss = 0.0
    grad_c = []
    for c in cents:
        m = closest_axis(c, mf_axes)
        dot_res = 1.0 - c @ m
        diff = c - m
        loss += abs(dot_res) + np.sum(np.abs(diff))
        grad_c.append(-np.sign(dot_res) * m + np.sign(diff))
    return float(loss), _centroid_grad_to_members(members, cents, norms, grad_c)


def ramp_factor(step, delay, ramp):
    """0 before delay, linear to 1 across [delay, delay+ramp], 1 after."""
    if step < delay:
        return 0.0
    if ramp <= 0 or step >= delay + ramp:
        return 1.0
    return (step - delay) / ramp


def ramp_weights(step, w: LossWeights):
    """Effective (lambda_ctr, lambda_ort) at a training step."""
    if step < 0:
        raise DomainError("step must be non-negative")
    f = ramp_factor(step, w.delay_steps, w.ramp_steps)
    return w.lambda_ctr * f, w.lambda_ort * f


def total_loss(l_img, l_ctr, l_ort, weights_eff, l_man=None, lambda_man_eff=0.0):
    """Weighted sum of the loss terms as a LossReport."""
    lam_ctr, lam_ort = weights_eff
    vals = [l_img, l_ctr, l_ort] + ([l_man] if l_man is not None else [])
    if not all(np.isfinite(v) for v in vals):
        raise NonFiniteLossError(f"non-finite loss terms: img={l_img} ctr={l_ctr} ort={l_ort} man={l_man}")
    total = l_img + lam_ctr * l_ctr + lam_ort * l_ort
    if l_man is not None:
        total += lambda_man_eff * l_man
    return LossReport(l_img=float(l_img), l_ctr=float(l_ctr), l_ort=float(l_ort), l_man=l_man, total=float(total))


def opacity_regularizer_with_grad(opacities, eps=1e-6):
    """Binary entropy of per-ray opacity (pushes rays to commit to 0 or 1).

    Returns (mean entropy, gradient w.r.t. the opacities).  Values are
    clamped to [eps, 1-eps]; clamped rays get zero gradient.
    """
    o = np.asarray(opacities, dtype=np.float64)
    oc = np.clip(o, eps, 1.0 - eps)
    ent = -(oc * np.log(oc) + (1.0 - oc) * np.log1p(-oc))
    grad = np.where((o > eps) & (o < 1.0 - eps), np.log1p(-oc) - np.log(oc), 0.0) / o.size
    return float(ent.mean()), grad
