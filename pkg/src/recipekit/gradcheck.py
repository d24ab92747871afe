"""Finite-difference audits of every analytic gradient in the package.

Each audit draws random non-degenerate points, compares the analytic gradient
with central differences (step ``1e-5``, float64) and reports the worst
relative error ``||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||)``.
"""

from dataclasses import dataclass

import numpy as np

from . import losses
from .losses import ArcFaceHead, CombinedLossConfig, TripletConfig
from .model import TinyBackbone

STEP = 1e-5
LOSS_TOL = 1e-4
E2E_TOL = 1e-3


@dataclass
class AuditResult:
    name: str
    worst: float
    tol: float
    points: int

    @property
    def passed(self):
        return bool(self.worst <= self.tol)


def rel_error(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x, step=STEP, coords=None):
    """Central differences of scalar ``f`` at ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.zeros(len(idx))
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        out[k] = (fp - fm) / (2 * step)
    return out


# ---------------------------------------------------------------------------
# loss audits
# ---------------------------------------------------------------------------


def audit_ce(rng, points=50, ce=None):
    ce = ce or losses.ce_smoothed
    worst = 0.0
    for _ in range(points):
        n, k = rng.integers(1, 6), rng.integers(2, 8)
        z = rng.normal(size=(n, k)) * 3
        labels = rng.integers(0, k, size=n)
        eps = rng.choice([0.0, 0.1, 0.3])
        g = ce(z, labels, eps).grads["logits"]
        num = numeric_grad(lambda: ce(z, labels, eps).value, z)
        worst = max(worst, rel_error(g, num))
    return AuditResult("ce_smoothed", worst, LOSS_TOL, points)


def _triplet_point(rng):
    """Random batch whose hardest positives/negatives are unique and hinges clear of 0."""
    while True:
        n_cls = rng.integers(2, 4)
        per = rng.integers(2, 4)
        labels = np.repeat(np.arange(n_cls), per)
        x = rng.normal(size=(len(labels), rng.integers(2, 6)))
        margin = rng.uniform(0.5, 2.0)
        out = losses.batch_hard_triplet(x, labels, TripletConfig(margin))
        if not out.aux["active"].any():
            continue
        d = losses.pairwise_euclidean(x)
        ok = np.abs(out.aux["hinge"][out.aux["valid"]]).min() > 1e-3
        for a in range(len(labels)):
            same = labels == labels[a]
            pos = np.sort(d[a, same & (np.arange(len(labels)) != a)])
            neg = np.sort(d[a, ~same])
            if len(pos) > 1 and pos[-1] - pos[-2] < 1e-3:
                ok = False
            if len(neg) > 1 and neg[1] - neg[0] < 1e-3:
                ok = False
        if ok:
            return x, labels, margin


def audit_triplet(rng, points=50, fn=None):
    fn = fn or losses.batch_hard_triplet
    worst = 0.0
    for _ in range(points):
        x, labels, margin = _triplet_point(rng)
        cfg = TripletConfig(margin)
        g = fn(x, labels, cfg).grads["embeddings"]
        num = numeric_grad(lambda: fn(x, labels, cfg).value, x)
        worst = max(worst, rel_error(g, num))
    return AuditResult("batch_hard_triplet", worst, LOSS_TOL, points)


def _arcface_point(rng):
    while True:
        n, d, k = rng.integers(2, 6), rng.integers(2, 6), rng.integers(2, 6)
        e = rng.normal(size=(n, d))
        w = rng.normal(size=(k, d))
        labels = rng.integers(0, k, size=n)
        eh = e / np.linalg.norm(e, axis=1, keepdims=True)
        wh = w / np.linalg.norm(w, axis=1, keepdims=True)
        cos = eh @ wh.T
        margin = rng.uniform(0.0, 0.6)
        theta_y = np.arccos(cos[np.arange(n), labels])
        if np.abs(cos).max() < 0.99 and np.abs(theta_y + margin - np.pi).min() > 1e-2:
            return e, w, labels, rng.uniform(1.0, 8.0), margin


def audit_arcface(rng, points=50, fn=None):
    fn = fn or losses.arcface_loss
    worst = 0.0
    for _ in range(points):
        e, w, labels, s, m = _arcface_point(rng)
        head = ArcFaceHead(w, s, m)
        out = fn(e, head, labels)
        num_e = numeric_grad(lambda: fn(e, head, labels).value, e)
        num_w = numeric_grad(lambda: fn(e, head, labels).value, w)
        err = rel_error(np.concatenate([out.grads["embeddings"].ravel(), out.grads["weight"].ravel()]),
                        np.concatenate([num_e, num_w]))
        worst = max(worst, err)
    return AuditResult("arcface_loss", worst, LOSS_TOL, points)


# ---------------------------------------------------------------------------
# end-to-end audits
# ---------------------------------------------------------------------------


def _e2e_loss(model, x, labels, cfg, need_grads):
    emb, logits = model.forward(x, train=True)
    head = None
    if cfg.mode == "ce+arcface":
        head = ArcFaceHead(model.params["arcface.weight"], cfg.arcface_scale, cfg.arcface_margin)
    out = losses.combined_loss(logits, emb, labels, labels, cfg, head)
    if not need_grads:
        return out, None
    grads = model.backward(out.grads.get("embeddings"), out.grads["logits"])
    if "arcface" in out.grads:
        grads["arcface.weight"] = out.grads["arcface"]
    return out, grads


def _triplet_selection(model, x, labels, cfg):
    """Hardest positive/negative and hinge activity of every valid anchor."""
    emb, _ = model.forward(x, train=False)
    a = losses.batch_hard_triplet(emb, labels, TripletConfig(cfg.triplet_margin)).aux
    v = a["valid"]
    return (a["positive"][v].tobytes(), a["negative"][v].tobytes(), a["active"][v].tobytes())


def audit_end_to_end(rng, mode, points=50, coords_per_point=20, size=8):
    """Whole model plus combined loss in float64, on a random 4-sample batch.

    Coordinates whose perturbation flips a ReLU mask or a triplet selection
    are resampled: the loss is only piecewise smooth.
    """
    cfg = CombinedLossConfig(mode=mode, smoothing=0.1, aux_weight=1.0, triplet_margin=1.0,
                             arcface_scale=4.0, arcface_margin=0.3)
    worst = 0.0
    done = 0
    while done < points:
        model = TinyBackbone.init(int(rng.integers(0, 2**31)), embed_dim=6, num_classes=3,
                                  input_size=size, dtype=np.float64)
        for p in model.params.values():
            p += rng.normal(scale=0.05, size=p.shape)
        if mode == "ce+arcface":
            model.add_arcface_head(int(rng.integers(0, 2**31)))
        x = rng.normal(size=(4, size, size, 3))
        labels = np.array([0, 0, 1, 2]) if mode == "ce+triplet" else rng.integers(0, 3, size=4)
        base, grads = _e2e_loss(model, x, labels, cfg, True)
        if mode == "ce+triplet":
            hinge = base.aux.get("triplet", 0.0)
            if hinge <= 1e-3:
                continue
        sig = model.activation_signature()
        sel = _triplet_selection(model, x, labels, cfg) if mode == "ce+triplet" else None
        names = list(model.params)
        analytic, numeric = [], []
        tries = 0
        while len(analytic) < coords_per_point and tries < 10 * coords_per_point:
            tries += 1
            name = names[rng.integers(0, len(names))]
            p = model.params[name]
            i = int(rng.integers(0, p.size))
            flat = p.reshape(-1)
            old = flat[i]
            vals, smooth = [], True
            for delta in (STEP, -STEP):
                flat[i] = old + delta
                out, _ = _e2e_loss(model, x, labels, cfg, False)
                if model.activation_signature() != sig:
                    smooth = False
                if sel is not None and _triplet_selection(model, x, labels, cfg) != sel:
                    smooth = False
                vals.append(out)
            flat[i] = old
            if not smooth:
                continue
            analytic.append(grads[name].reshape(-1)[i])
            numeric.append((vals[0].value - vals[1].value) / (2 * STEP))
        if len(analytic) < coords_per_point:
            continue
        worst = max(worst, rel_error(np.array(analytic), np.array(numeric)))
        done += 1
    return AuditResult(f"end_to_end[{mode}]", worst, E2E_TOL, points)


AUDITS = (
    ("ce_smoothed", lambda rng, pts: audit_ce(rng, pts)),
    ("batch_hard_triplet", lambda rng, pts: audit_triplet(rng, pts)),
    ("arcface_loss", lambda rng, pts: audit_arcface(rng, pts)),
    ("end_to_end[ce]", lambda rng, pts: audit_end_to_end(rng, "ce", pts)),
    ("end_to_end[ce+triplet]", lambda rng, pts: audit_end_to_end(rng, "ce+triplet", pts)),
    ("end_to_end[ce+arcface]", lambda rng, pts: audit_end_to_end(rng, "ce+arcface", pts)),
)


def run_audits(seed=0, points=50, audits=AUDITS):
    rng = np.random.default_rng(seed)
    return [fn(rng, points) for _, fn in audits]
