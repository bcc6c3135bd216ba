"""Six-score evaluation suite: CCE, best-F1, Aff-F1, UAff-F1, AUC-ROC, VUS-PR.

All scores live on a 0-100 scale (CCE and UAff-F1 may go negative). Every
function is a pure function of (scores, labels) plus an explicit seed for the
Monte-Carlo chance baselines, so evaluation cells can run in parallel.

Event-aware metrics work on maximal runs of anomalous timesteps ("events")
as half-open ``[start, end)`` intervals.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .exceptions import ConfigError, MetricError
from .ndcore import make_rng

DEFAULT_BUFFER_MAX = 8  # default window 32 / 4
DEFAULT_MC_DRAWS = 32


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EventSet:
    """Sorted, disjoint, non-adjacent half-open intervals over [0, T)."""

    length: int
    intervals: tuple  # of (start, end)

    def __post_init__(self):
        ivs = tuple((int(s), int(e)) for s, e in self.intervals)
        object.__setattr__(self, "intervals", ivs)
        prev_end = None
        for s, e in ivs:
            if not 0 <= s < e <= self.length:
                raise ConfigError(f"interval [{s}, {e}) escapes [0, {self.length})")
            if prev_end is not None and s <= prev_end:
                raise ConfigError("intervals must be sorted, disjoint and non-adjacent")
            prev_end = e

    def __len__(self):
        return len(self.intervals)

    def to_labels(self) -> np.ndarray:
        y = np.zeros(self.length, dtype=np.int64)
        for s, e in self.intervals:
            y[s:e] = 1
        return y


def events_from_labels(labels) -> EventSet:
    """Maximal anomalous runs of a 0/1 sequence as half-open intervals."""
    y = np.asarray(labels, dtype=np.int64)
    if not np.all((y == 0) | (y == 1)):
        raise ConfigError("labels must be 0/1")
    padded = np.concatenate([[0], y, [0]])
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return EventSet(length=len(y), intervals=tuple(zip(starts.tolist(), ends.tolist())))


def _check_two_classes(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.min() == y.max():
        raise MetricError("metric undefined: labels contain a single class")
    return y


# ---------------------------------------------------------------------------
# point-wise metrics
# ---------------------------------------------------------------------------


def pointwise_f1(pred, labels) -> float:
    """F1 of a binary prediction against binary labels, on the 0-100 scale."""
    p = np.asarray(pred, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ConfigError("prediction and labels must have equal length")
    tp = int(np.sum((p == 1) & (y == 1)))
    denom = 2 * tp + int(np.sum((p == 1) & (y == 0))) + int(np.sum((p == 0) & (y == 1)))
    return 100.0 * 2 * tp / denom if denom else 0.0


def best_f1(scores, labels) -> tuple[float, float]:
    """Max point-wise F1 over candidate thresholds, with the smallest such tau.

    Candidates are exactly the distinct score values; a point is predicted
    anomalous when ``score > tau``.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _check_two_classes(labels)
    if s.shape != y.shape:
        raise ConfigError("scores and labels must have equal length")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    total_pos = int(y.sum())
    cum_tp = np.cumsum(y_sorted)
    # prefix of size k = points with score > tau, where tau is the next
    # distinct value below the prefix; the empty prefix (tau = max) scores 0.
    boundary = np.flatnonzero(np.diff(s_sorted) != 0)  # last index of each tie group
    ks = boundary + 1
    best = 0.0
    best_tau = float(s_sorted[0])  # empty prediction at tau = max score
    for k in ks:
        f1 = 200.0 * cum_tp[k - 1] / (k + total_pos)
        # the tau realizing this prefix is the next (smaller) distinct value
        tau = float(s_sorted[k])
        if f1 > best or (f1 == best and tau < best_tau):
            best = f1
            best_tau = tau
    return best, best_tau


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC with midrank tie handling, scaled to 0-100."""
    s = np.asarray(scores, dtype=np.float64)
    y = _check_two_classes(labels)
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    # midranks over tie groups
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return 100.0 * u / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# affiliation metrics
# ---------------------------------------------------------------------------


def _zone_bounds(events: EventSet) -> list[tuple[int, int]]:
    """Zones of influence: one per event, split at midpoints between events."""
    bounds = [0]
    ivs = events.intervals
    for (s0, e0), (s1, _) in zip(ivs, ivs[1:]):
        bounds.append((e0 + s1) // 2)
    bounds.append(events.length)
    return [(bounds[j], bounds[j + 1]) for j in range(len(ivs))]


def _dist_to_interval(points: np.ndarray, start: int, end: int) -> np.ndarray:
    """Distance from each timestep to the nearest member of [start, end)."""
    return np.where(
        points < start, start - points, np.where(points >= end, points - (end - 1), 0)
    ).astype(np.float64)


def _dist_to_points(lo: int, hi: int, pts: np.ndarray) -> np.ndarray:
    """Distance of every timestep in [lo, hi) to the nearest of ``pts`` (sorted)."""
    u = np.arange(lo, hi)
    if len(pts) == 0:
        return np.full(hi - lo, np.inf)
    idx = np.searchsorted(pts, u)
    left = np.where(idx > 0, u - pts[np.clip(idx - 1, 0, len(pts) - 1)], np.inf)
    right = np.where(idx < len(pts), pts[np.clip(idx, 0, len(pts) - 1)] - u, np.inf)
    return np.minimum(left, right).astype(np.float64)


def _as_predicted_points(pred, T: int) -> np.ndarray:
    if isinstance(pred, EventSet):
        if pred.length != T:
            raise ConfigError("predicted EventSet length does not match T")
        return np.flatnonzero(pred.to_labels())
    p = np.asarray(pred, dtype=np.int64)
    if p.shape != (T,):
        raise ConfigError(f"prediction must be a length-{T} 0/1 sequence or an EventSet")
    return np.flatnonzero(p)


def affiliation_precision_recall(pred, truth: EventSet, T: int) -> tuple[float, float]:
    """Distance-based event precision/recall on the zone-of-influence partition.

    Precision: each predicted point in a zone is scored by the survival
    probability that a uniformly random zone timestep lies at least as far
    from the zone's event; zone means are averaged over zones that contain
    predictions. Recall mirrors this with the roles swapped (event points
    scored against the zone's predicted points), averaging over all zones;
    a zone without predictions contributes recall 0.
    """
    if len(truth) == 0:
        raise MetricError("affiliation metrics need a non-empty truth event set")
    pred_pts = _as_predicted_points(pred, T)
    zone_prec: list[float] = []
    zone_rec: list[float] = []
    for (lo, hi), (ev_s, ev_e) in zip(_zone_bounds(truth), truth.intervals):
        n = hi - lo
        zpts = pred_pts[(pred_pts >= lo) & (pred_pts < hi)]
        d_truth = _dist_to_interval(np.arange(lo, hi), ev_s, ev_e)
        if len(zpts):
            sorted_dt = np.sort(d_truth)
            dp = _dist_to_interval(zpts, ev_s, ev_e)
            surv = (n - np.searchsorted(sorted_dt, dp, side="left")) / n
            zone_prec.append(float(surv.mean()))
            d_pred = _dist_to_points(lo, hi, zpts)
            sorted_dp = np.sort(d_pred)
            dq = d_pred[np.arange(ev_s, ev_e) - lo]
            surv_r = (n - np.searchsorted(sorted_dp, dq, side="left")) / n
            zone_rec.append(float(surv_r.mean()))
        else:
            zone_rec.append(0.0)
    precision = float(np.mean(zone_prec)) if zone_prec else 0.0
    recall = float(np.mean(zone_rec))
    return precision, recall


def affiliation_f1(pred, truth: EventSet, T: int) -> tuple[float, float, float]:
    """Returns (precision, recall, f1), f1 on the 0-100 scale."""
    precision, recall = affiliation_precision_recall(pred, truth, T)
    f1 = 100.0 * 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def affiliation_random_baseline(
    truth: EventSet, T: int, positive_rate: float, draws: int = DEFAULT_MC_DRAWS, seed: int = 0
) -> tuple[float, float]:
    """Expected affiliation precision/recall of a Bernoulli(positive_rate) predictor."""
    rng = make_rng(seed)
    ps, rs = [], []
    for _ in range(draws):
        pred = (rng.uniform(size=T) < positive_rate).astype(np.int64)
        p, r = affiliation_precision_recall(pred, truth, T)
        ps.append(p)
        rs.append(r)
    return float(np.mean(ps)), float(np.mean(rs))


def uaff_f1(precision: float, recall: float, baseline_precision: float,
            baseline_recall: float) -> float:
    """Excess-over-chance rescaling of affiliation precision/recall (may be < 0)."""
    if baseline_precision >= 1.0 or baseline_recall >= 1.0:
        raise MetricError("degenerate chance baseline (P0 or R0 = 1)")
    u_p = (precision - baseline_precision) / (1.0 - baseline_precision)
    u_r = (recall - baseline_recall) / (1.0 - baseline_recall)
    if u_p + u_r > 0:
        return 100.0 * 2.0 * u_p * u_r / (u_p + u_r)
    return 100.0 * min(u_p, u_r)


# ---------------------------------------------------------------------------
# VUS-PR
# ---------------------------------------------------------------------------


def soften_labels(labels, buffer: int) -> np.ndarray:
    """Relevance ramp: 1 inside events, decaying linearly to 0 over ``buffer``
    steps outside each event boundary (max over overlapping ramps)."""
    y = np.asarray(labels, dtype=np.int64)
    r = y.astype(np.float64).copy()
    if buffer == 0:
        return r
    events = events_from_labels(y)
    T = len(y)
    for s, e in events.intervals:
        for k in range(1, buffer + 1):
            level = 1.0 - k / (buffer + 1.0)
            if s - k >= 0:
                r[s - k] = max(r[s - k], level)
            if e - 1 + k < T:
                r[e - 1 + k] = max(r[e - 1 + k], level)
    return r


def _average_precision(scores, labels, relevance) -> float:
    """Step-integrated area under the PR curve with relevance-weighted precision.

    Precision at a cut counts soft relevance, so near-boundary predictions get
    partial credit; recall counts true event points only, so a detector that
    exactly reproduces the labels reaches area 1 at every buffer width.
    """
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = labels[order].astype(np.float64)
    r_sorted = relevance[order]
    cum_rel = np.cumsum(r_sorted)
    cum_tp = np.cumsum(y_sorted)
    total_pos = cum_tp[-1]
    ends = np.concatenate([np.flatnonzero(np.diff(s_sorted) != 0), [len(s_sorted) - 1]])
    prec = cum_rel[ends] / (ends + 1.0)
    rec = cum_tp[ends] / total_pos
    prev_rec = np.concatenate([[0.0], rec[:-1]])
    return float(np.sum((rec - prev_rec) * np.minimum(prec, 1.0)))


def vus_pr(scores, labels, buffer_max: int = DEFAULT_BUFFER_MAX) -> float:
    """Mean area under relevance-weighted PR curves over buffer widths 0..buffer_max."""
    s = np.asarray(scores, dtype=np.float64)
    y = _check_two_classes(labels)
    if s.shape != y.shape:
        raise ConfigError("scores and labels must have equal length")
    areas = [
        _average_precision(s, y, soften_labels(y, buf)) for buf in range(buffer_max + 1)
    ]
    return 100.0 * float(np.mean(areas))


# ---------------------------------------------------------------------------
# CCE
# ---------------------------------------------------------------------------


def cce(scores, labels) -> float:
    """Confidence-consistency score: global agreement times local smoothness.

    ``A`` recenters AUC-ROC at chance (0) on [-1, 1]; ``G`` penalizes score
    wobble inside constant-label runs (twice the within-run standard deviation
    of min-max normalized scores, averaged over runs, clamped to [0, 1]).
    The product, scaled by 100, is 100 for scores identical to labels and
    near 0 for random scores.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _check_two_classes(labels)
    if s.shape != y.shape:
        raise ConfigError("scores and labels must have equal length")
    lo, hi = float(s.min()), float(s.max())
    shat = (s - lo) / (hi - lo) if hi > lo else np.full_like(s, 0.5)
    agreement = 2.0 * auc_roc(s, y) / 100.0 - 1.0
    change = np.flatnonzero(np.diff(y) != 0) + 1
    run_bounds = np.concatenate([[0], change, [len(y)]])
    penalties = [
        2.0 * float(shat[a:b].std()) for a, b in zip(run_bounds[:-1], run_bounds[1:])
    ]
    consistency = float(np.clip(1.0 - np.mean(penalties), 0.0, 1.0))
    return 100.0 * agreement * consistency


# ---------------------------------------------------------------------------
# combined report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsConfig:
    buffer_max: int = DEFAULT_BUFFER_MAX
    mc_draws: int = DEFAULT_MC_DRAWS
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricReport:
    cce: float
    f1: float
    aff_f1: float
    uaff_f1: float
    auc_roc: float
    vus_pr: float
    threshold: float
    seed: int
    config_hash: str = ""
    metadata: dict = field(default_factory=dict)

    METRIC_ORDER = ("cce", "f1", "aff_f1", "uaff_f1", "auc_roc", "vus_pr")

    def __post_init__(self):
        for name in self.METRIC_ORDER + ("threshold",):
            setattr(self, name, float(getattr(self, name)))
        self.seed = int(self.seed)

    def values(self) -> list[float]:
        return [getattr(self, name) for name in self.METRIC_ORDER]

    def mean_score(self) -> float:
        return float(np.mean(self.values()))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        return cls(**doc)


def evaluate(scores, labels, config: MetricsConfig | None = None,
             metadata: dict | None = None) -> MetricReport:
    """All six metrics with a shared best-F1 threshold; deterministic given seed."""
    config = config or MetricsConfig()
    s = np.asarray(scores, dtype=np.float64)
    y = _check_two_classes(labels)
    if s.shape != y.shape:
        raise ConfigError("scores and labels must have equal length")
    if not np.all(np.isfinite(s)):
        raise ConfigError("scores must be finite")

    f1, tau = best_f1(s, y)
    pred = (s > tau).astype(np.int64)
    truth = events_from_labels(y)
    precision, recall, aff = affiliation_f1(pred, truth, len(y))
    p0, r0 = affiliation_random_baseline(
        truth, len(y), positive_rate=float(pred.mean()),
        draws=config.mc_draws, seed=config.seed,
    )
    cfg_digest = hashlib.sha256(
        json.dumps(config.to_dict(), sort_keys=True).encode()
    ).hexdigest()[:12]
    return MetricReport(
        cce=cce(s, y),
        f1=f1,
        aff_f1=aff,
        uaff_f1=uaff_f1(precision, recall, p0, r0),
        auc_roc=auc_roc(s, y),
        vus_pr=vus_pr(s, y, config.buffer_max),
        threshold=tau,
        seed=config.seed,
        config_hash=cfg_digest,
        metadata=metadata or {},
    )


def write_scores_csv(path, scores) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,score\n")
        for t, v in enumerate(np.asarray(scores, dtype=np.float64)):
            fh.write(f"{t},{float(v)!r}\n")


def read_scores_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != ["t", "score"]:
            raise ConfigError(f"{path}: expected header 't,score'")
        return np.array([float(line.split(",")[1]) for line in fh if line.strip()])


def write_report(path, report: MetricReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path) -> MetricReport:
    with open(path, encoding="utf-8") as fh:
        return MetricReport.from_dict(json.load(fh))
