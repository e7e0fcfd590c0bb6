"""Multi-label recognition metrics.

All reported values are percentages in [0, 100].  Ranking is by descending
score with ties broken by ascending index, everywhere.  A class column with
no positive sample has undefined AP and is excluded from means (and counted);
a sample with no positive class is skipped by Top@K (and counted).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .text import TripletVocabulary

COMPONENTS = ("instrument", "verb", "target")


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score; equal scores keep ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.shape[-1]), -scores))


def _seq_mean(vals) -> float:
    """Left-to-right mean.  Accumulation order is part of the metric contract
    (results are compared bit-for-bit against reference implementations), so
    pairwise-summing numpy reductions are deliberately avoided here."""
    total = 0.0
    count = 0
    for v in vals:
        total += float(v)
        count += 1
    return total / count


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """AP over one ranked list, as a percentage; None when labels has no positive."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} vs labels {labels.shape}")
    pos = labels > 0
    if not pos.any():
        return None
    order = rank_order(scores)
    hits = pos[order]
    csum = np.cumsum(hits)
    precisions = csum[hits] / (np.flatnonzero(hits) + 1.0)
    return 100.0 * _seq_mean(precisions)


def component_cover(vocab: TripletVocabulary, component: str) -> list[list[int]]:
    """For every component instance, the triplet class ids that contain it."""
    axis = COMPONENTS.index(component)
    sizes = (len(vocab.instruments), len(vocab.verbs), len(vocab.targets))
    cover: list[list[int]] = [[] for _ in range(sizes[axis])]
    for c, trip in enumerate(vocab.valid_triplets):
        cover[trip[axis]].append(c)
    return cover


def component_projection(scores: np.ndarray, labels: np.ndarray,
                         vocab: TripletVocabulary, component: str,
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project triplet scores/labels onto one component axis.

    Component score is the max over covering triplets; the label is their OR.
    Returns (scores, labels, defined) where defined[j] is False for component
    instances covered by no triplet (those columns are filler zeros).
    """
    if component not in COMPONENTS:
        raise ValueError(f"component must be one of {COMPONENTS}, got {component!r}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    cover = component_cover(vocab, component)
    n = scores.shape[0]
    s_comp = np.zeros((n, len(cover)))
    y_comp = np.zeros((n, len(cover)), dtype=np.int64)
    defined = np.zeros(len(cover), dtype=bool)
    for j, classes in enumerate(cover):
        if not classes:
            continue
        defined[j] = True
        s_comp[:, j] = scores[:, classes].max(axis=1)
        y_comp[:, j] = (labels[:, classes] > 0).any(axis=1)
    return s_comp, y_comp, defined


def _mean_column_ap(scores: np.ndarray, labels: np.ndarray,
                    defined: np.ndarray | None = None,
                    ) -> tuple[float | None, list[float | None], int]:
    """Mean per-column AP; columns that are undefined or have no positives
    are excluded from the mean and counted."""
    n_cols = scores.shape[1]
    per: list[float | None] = []
    for c in range(n_cols):
        if defined is not None and not defined[c]:
            per.append(None)
            continue
        per.append(average_precision(scores[:, c], labels[:, c]))
    vals = [v for v in per if v is not None]
    mean = _seq_mean(vals) if vals else None
    return mean, per, n_cols - len(vals)


def top_k_accuracy(scores: np.ndarray, labels: np.ndarray,
                   k: int | None = None) -> float | None:
    """Mean over samples of |top-k hits in GT| / |GT|, in percent.

    k=None uses k = |GT| per sample.  Samples without positives are skipped;
    None is returned when every sample is skipped.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError(f"need matching [N, C] matrices, got {scores.shape}/{labels.shape}")
    accs = []
    for n in range(scores.shape[0]):
        gt = np.flatnonzero(labels[n] > 0)
        if gt.size == 0:
            continue
        kk = int(gt.size) if k is None else int(k)
        top = rank_order(scores[n])[:kk]
        accs.append(int(np.isin(top, gt).sum()) / int(gt.size))
    if not accs:
        return None
    return 100.0 * _seq_mean(accs)


@dataclass
class MetricsReport:
    n_samples: int
    n_classes: int
    ap_i: float | None
    ap_v: float | None
    ap_t: float | None
    ap_ivt: float | None
    top_gt: float | None
    top_5: float | None
    top_10: float | None
    top_20: float | None
    per_class_ap: list = field(default_factory=list)
    skipped_classes: dict = field(default_factory=dict)
    skipped_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_classes": self.n_classes,
            "ap_i": self.ap_i, "ap_v": self.ap_v, "ap_t": self.ap_t,
            "ap_ivt": self.ap_ivt,
            "top_gt": self.top_gt, "top_5": self.top_5,
            "top_10": self.top_10, "top_20": self.top_20,
            "per_class_ap": self.per_class_ap,
            "skipped_classes": self.skipped_classes,
            "skipped_samples": self.skipped_samples,
        }


def evaluate(scores: np.ndarray, labels: np.ndarray,
             vocab: TripletVocabulary) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError(f"need matching [N, C] matrices, got {scores.shape}/{labels.shape}")
    if scores.shape[1] != vocab.n_classes:
        raise ValueError(f"{scores.shape[1]} columns vs {vocab.n_classes} classes")

    ap_ivt, per_class, skipped_ivt = _mean_column_ap(scores, labels)
    comp_means, comp_skips = {}, {}
    for comp in COMPONENTS:
        s_c, y_c, defined = component_projection(scores, labels, vocab, comp)
        comp_means[comp], _, comp_skips[comp] = _mean_column_ap(s_c, y_c, defined)

    skipped_samples = int((np.asarray(labels).sum(axis=1) == 0).sum())
    return MetricsReport(
        n_samples=scores.shape[0],
        n_classes=scores.shape[1],
        ap_i=comp_means["instrument"],
        ap_v=comp_means["verb"],
        ap_t=comp_means["target"],
        ap_ivt=ap_ivt,
        top_gt=top_k_accuracy(scores, labels, None),
        top_5=top_k_accuracy(scores, labels, 5),
        top_10=top_k_accuracy(scores, labels, 10),
        top_20=top_k_accuracy(scores, labels, 20),
        per_class_ap=per_class,
        skipped_classes={"ivt": skipped_ivt,
                         "instrument": comp_skips["instrument"],
                         "verb": comp_skips["verb"],
                         "target": comp_skips["target"]},
        skipped_samples=skipped_samples,
    )


def format_report(report: MetricsReport) -> str:
    def fmt(v):
        return "   n/a" if v is None else f"{v:6.2f}"

    lines = [
        f"samples {report.n_samples}  classes {report.n_classes}  "
        f"skipped-samples {report.skipped_samples}",
        f"AP_I   {fmt(report.ap_i)}   AP_V   {fmt(report.ap_v)}   "
        f"AP_T   {fmt(report.ap_t)}   AP_IVT {fmt(report.ap_ivt)}",
        f"Top@GT {fmt(report.top_gt)}   Top@5  {fmt(report.top_5)}   "
        f"Top@10 {fmt(report.top_10)}   Top@20 {fmt(report.top_20)}",
    ]
    return "\n".join(lines)
