"""Gated classification-regression head for floor counts.

The label space of 18 floor classes (floor count minus one) is cut into
contiguous subsets. A gate distributes probability over the subsets, one
softmax per subset distributes it over that subset's classes, and the
products form the class PMF. The PMF's expectation ``F`` is the regression
output; ``floor(F)`` is the prediction.

Score layout for a head with ``k`` subsets, per sample::

    [gate logits (k, only when k > 1) | class logits (18) | roof logit (1, MTL only)]

Class logits are stored in class order, so subset ``t`` reads the slice of
classes it owns.
"""
import math
from dataclasses import dataclass

import numpy as np

N_CLASSES = 18
LOG_CLAMP = 1e-12

VARIANTS = ("plain", "htc", "httc", "hyb", "hyb+httc")
_VARIANT_ALIASES = {
    "plain": "plain", "baseline": "plain", "plainclassifier": "plain",
    "htc": "htc", "httc": "httc", "hyb": "hyb",
    "hyb+httc": "hyb+httc", "hybhttc": "hyb+httc", "ours": "hyb+httc",
}
DEFAULT_CUTS = {"plain": (), "hyb": (), "htc": (6,), "httc": (5, 11), "hyb+httc": (5, 11)}


@dataclass(frozen=True)
class SubsetPartition:
    """Contiguous class subsets defined by increasing cut points."""

    cuts: tuple = (5, 11)
    n_classes: int = N_CLASSES

    def __post_init__(self):
        cuts = tuple(int(c) for c in self.cuts)
        if any(not 1 <= c <= self.n_classes - 1 for c in cuts) or list(cuts) != sorted(set(cuts)):
            raise ValueError(f"cut points must be strictly increasing within [1, {self.n_classes - 1}]: {cuts}")
        object.__setattr__(self, "cuts", cuts)

    @property
    def bounds(self):
        edges = (0,) + self.cuts + (self.n_classes,)
        return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]

    @property
    def k(self):
        return len(self.cuts) + 1

    @property
    def tags(self):
        if self.k == 1:
            return ("all",)
        if self.k == 2:
            return ("H", "T")
        return ("H",) + tuple(f"T{i}" for i in range(1, self.k))

    def subset_index(self, c):
        c = np.asarray(c)
        return np.searchsorted(np.asarray(self.cuts, dtype=int), c, side="right")

    def partition_of(self, c):
        if not 0 <= int(c) < self.n_classes:
            raise ValueError(f"floor class {c} outside [0, {self.n_classes - 1}]")
        return self.tags[int(self.subset_index(int(c)))]


HTTC = SubsetPartition((5, 11))


@dataclass
class HeadOutputs:
    gate: np.ndarray
    within: list  # one probability vector per subset


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def _nlog(p):
    return -math.log(max(float(p), LOG_CLAMP))


def partition_of(c, part=HTTC):
    return part.partition_of(c)


def httc_loss(gate, c_gt, part=HTTC):
    """Cross entropy of the gate against the subset holding ``c_gt``."""
    return _nlog(np.asarray(gate)[part.subset_index(int(c_gt))])


def combine(outputs, part=HTTC):
    """Class PMF: each subset's within-probabilities scaled by its gate probability."""
    gate = np.asarray(outputs.gate, dtype=float)
    return np.concatenate([gate[t] * np.asarray(w, dtype=float) for t, w in enumerate(outputs.within)])


def ce_loss(pmf, c_gt):
    return _nlog(np.asarray(pmf)[int(c_gt)])


def expectation(pmf):
    pmf = np.asarray(pmf, dtype=float)
    return float(np.dot(np.arange(len(pmf)), pmf))


def reg_loss(F, c_gt):
    return abs(float(F) - float(c_gt))


def roof_aux_loss(roof_prob, label):
    """Binary cross entropy with flat as the positive class."""
    y = _roof_target(label)
    p = float(roof_prob)
    return _nlog(p) if y == 1.0 else _nlog(1.0 - p)


def _roof_target(label):
    if label in ("flat", 1, 1.0, True):
        return 1.0
    if label in ("nonflat", 0, 0.0, False):
        return 0.0
    raise ValueError(f"roof label must be flat/nonflat, got {label!r}")


def total_loss(gate, pmf, F, c_gt, part=HTTC, use_gate=True, use_reg=True, roof_prob=None, roof_label=None):
    """Sum of the active loss terms; a disabled term contributes 0."""
    loss = ce_loss(pmf, c_gt)
    if use_gate and part.k > 1:
        loss += httc_loss(gate, c_gt, part)
    if use_reg:
        loss += reg_loss(F, c_gt)
    if roof_prob is not None:
        loss += roof_aux_loss(roof_prob, roof_label)
    return loss


def predict(F):
    """Floor class from the raw output: floor(F), clamped to [0, 17]."""
    return int(min(max(math.floor(F), 0), N_CLASSES - 1))


@dataclass(frozen=True)
class HeadConfig:
    """Which head pieces are active; built from a variant tag."""

    variant: str = "hyb+httc"
    cuts: tuple | None = None
    mtl_roof: bool = False
    readout: str = "floor"  # hybrid variants only: "floor" or "nearest"

    def __post_init__(self):
        if self.readout not in ("floor", "nearest"):
            raise ValueError(f"readout must be 'floor' or 'nearest', got {self.readout!r}")
        tag = _VARIANT_ALIASES.get(str(self.variant).lower().replace(" ", ""))
        if tag is None:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "variant", tag)
        cuts = DEFAULT_CUTS[tag] if self.cuts is None else tuple(self.cuts)
        if tag in ("plain", "hyb") and cuts:
            raise ValueError(f"variant {tag} takes no cut points")
        if tag == "htc" and len(cuts) != 1:
            raise ValueError("htc needs exactly one cut point")
        if tag in ("httc", "hyb+httc") and len(cuts) != 2:
            raise ValueError(f"{tag} needs exactly two cut points")
        object.__setattr__(self, "cuts", cuts)

    @property
    def partition(self):
        return SubsetPartition(self.cuts)

    @property
    def hybrid(self):
        return self.variant in ("hyb", "hyb+httc")

    @property
    def n_gate(self):
        k = len(self.cuts) + 1
        return k if k > 1 else 0

    @property
    def n_scores(self):
        return self.n_gate + N_CLASSES + (1 if self.mtl_roof else 0)


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def head_forward(scores, cfg):
    """Probabilities from raw scores of shape (B, n_scores).

    Returns a dict with ``gate`` (B, k), ``within`` (B, 18; each subset slice
    sums to 1), ``pmf`` (B, 18), ``F`` (B,) and ``roof`` (B,) or None.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    part = cfg.partition
    B = scores.shape[0]
    if cfg.n_gate:
        gate = softmax(scores[:, :cfg.n_gate])
    else:
        gate = np.ones((B, 1))
    logits = scores[:, cfg.n_gate:cfg.n_gate + N_CLASSES]
    within = np.empty_like(logits)
    pmf = np.empty_like(logits)
    for t, (lo, hi) in enumerate(part.bounds):
        within[:, lo:hi] = softmax(logits[:, lo:hi])
        pmf[:, lo:hi] = gate[:, t:t + 1] * within[:, lo:hi]
    F = pmf @ np.arange(N_CLASSES, dtype=float)
    roof = _sigmoid(scores[:, -1]) if cfg.mtl_roof else None
    return {"gate": gate, "within": within, "pmf": pmf, "F": F, "roof": roof}


def head_predict(out, cfg):
    """Class predictions: floor(F) for hybrid variants, PMF argmax otherwise.

    ``cfg.readout == "nearest"`` rounds F half-up instead of flooring it.
    """
    if cfg.hybrid:
        F = out["F"] + 0.5 if cfg.readout == "nearest" else out["F"]
        return np.clip(np.floor(F), 0, N_CLASSES - 1).astype(int)
    return np.argmax(out["pmf"], axis=1)


def head_loss(scores, labels, cfg, roof_labels=None):
    """Mean loss over the batch, per-term means, and d(mean loss)/d(scores).

    Terms: ``htt`` (gated variants), ``ce`` (always), ``reg`` (hybrid
    variants), ``roof`` (MTL). Gradients are analytic; inside a clamped log
    the gradient is taken as zero.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    labels = np.asarray(labels, dtype=int)
    out = head_forward(scores, cfg)
    part = cfg.partition
    B = scores.shape[0]
    rows = np.arange(B)
    gate, within, pmf, F = out["gate"], out["within"], out["pmf"], out["F"]
    s_idx = part.subset_index(labels)
    grad = np.zeros_like(scores)
    g_gate = grad[:, :cfg.n_gate]
    g_cls = grad[:, cfg.n_gate:cfg.n_gate + N_CLASSES]
    terms = {}

    onehot_s = np.zeros_like(gate)
    onehot_s[rows, s_idx] = 1.0
    # softmax-CE gradient (p - onehot) restricted to the true subset's slice
    cls_ce = np.zeros_like(within)
    for t, (lo, hi) in enumerate(part.bounds):
        sel = s_idx == t
        if np.any(sel):
            blk = within[sel, lo:hi].copy()
            blk[np.arange(blk.shape[0]), labels[sel] - lo] -= 1.0
            cls_ce[sel, lo:hi] = blk

    p_true = pmf[rows, labels]
    ce_live = (p_true > LOG_CLAMP)[:, None]
    terms["ce"] = float(np.mean(-np.log(np.maximum(p_true, LOG_CLAMP))))
    g_cls += ce_live * cls_ce
    if cfg.n_gate:
        g_gate += ce_live * (gate - onehot_s)
        g_true = gate[rows, s_idx]
        terms["htt"] = float(np.mean(-np.log(np.maximum(g_true, LOG_CLAMP))))
        g_gate += (g_true > LOG_CLAMP)[:, None] * (gate - onehot_s)

    if cfg.hybrid:
        diff = F - labels
        terms["reg"] = float(np.mean(np.abs(diff)))
        sgn = np.sign(diff)[:, None]
        cls = np.arange(N_CLASSES, dtype=float)
        for t, (lo, hi) in enumerate(part.bounds):
            w = within[:, lo:hi]
            m_t = w @ cls[lo:hi]
            g_cls[:, lo:hi] += sgn * gate[:, t:t + 1] * w * (cls[lo:hi] - m_t[:, None])
            if cfg.n_gate:
                g_gate[:, t] += sgn[:, 0] * gate[:, t] * (m_t - F)

    if cfg.mtl_roof:
        if roof_labels is None:
            raise ValueError("MTL head needs roof labels")
        y = np.asarray(roof_labels, dtype=float)
        p = out["roof"]
        p_y = np.where(y == 1.0, p, 1.0 - p)
        terms["roof"] = float(np.mean(-np.log(np.maximum(p_y, LOG_CLAMP))))
        grad[:, -1] += (p_y > LOG_CLAMP) * (p - y)

    grad /= B
    total = sum(terms.values())
    return total, terms, grad
