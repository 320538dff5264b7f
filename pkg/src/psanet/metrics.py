"""Countermeasure scoring metrics: EER, normalized minimum t-DCF, AUC, and
DET operating points.

Scores follow the score-file convention: higher = more bonafide. A trial is
accepted (called bonafide) when score >= threshold, so ties sit on the
accept side. The threshold sweep visits every distinct score plus a +inf
sentinel (the reject-everything decision); FAR/FRR are exact counts at each
point and the EER crossing is linearly interpolated between the two
adjacent points. The interpolated EER is the mean of the FAR-side and
FRR-side interpolations, which makes the value invariant under flipping
keys and negating scores.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DataError, MetricError

VALID_KEYS = ("bonafide", "spoof")


@dataclass(frozen=True)
class ScoreRecord:
    utterance_id: str
    score: float
    key: str

    def __post_init__(self):
        if self.key not in VALID_KEYS:
            raise DataError(f"record {self.utterance_id!r}: unknown key {self.key!r}")
        if not np.isfinite(self.score):
            raise DataError(f"record {self.utterance_id!r}: non-finite score {self.score}")


@dataclass(frozen=True)
class TdcfParams:
    """ASVspoof2019-convention tandem cost parameters (all overridable)."""
    p_spoof: float = 0.05
    p_target: float = 0.9405
    p_nontarget: float = 0.0095
    cost_miss_cm: float = 1.0
    cost_fa_cm: float = 10.0
    cost_miss_asv: float = 1.0
    cost_fa_asv: float = 10.0
    asv_p_miss: float = 0.05
    asv_p_fa: float = 0.05
    asv_p_fa_spoof: float = 0.75

    def validate(self) -> None:
        for name in ("p_spoof", "p_target", "p_nontarget", "asv_p_miss", "asv_p_fa", "asv_p_fa_spoof"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0,1], got {v}")
        for name in ("cost_miss_cm", "cost_fa_cm", "cost_miss_asv", "cost_fa_asv"):
            v = getattr(self, name)
            if v <= 0:
                raise ConfigError(f"{name} must be > 0, got {v}")

    def weights(self) -> tuple:
        """(w_miss, w_fa): the costs multiplying the CM miss and false-alarm
        rates once the fixed ASV operating point is folded in."""
        self.validate()
        w_miss = self.p_target * (self.cost_miss_cm - self.cost_miss_asv * self.asv_p_miss) \
            - self.p_nontarget * self.cost_fa_asv * self.asv_p_fa
        w_fa = self.cost_fa_cm * self.p_spoof * self.asv_p_fa_spoof
        if w_miss <= 0 or w_fa <= 0:
            raise ConfigError(f"degenerate t-DCF weights (w_miss={w_miss:.6g}, w_fa={w_fa:.6g})")
        return w_miss, w_fa


def _split_scores(records: list) -> tuple:
    bona = np.array([r.score for r in records if r.key == "bonafide"], np.float64)
    spoof = np.array([r.score for r in records if r.key == "spoof"], np.float64)
    if bona.size == 0 or spoof.size == 0:
        raise MetricError(
            f"need both classes, got {bona.size} bonafide and {spoof.size} spoof records")
    return np.sort(bona), np.sort(spoof)


def _sweep(bona: np.ndarray, spoof: np.ndarray) -> tuple:
    """(thresholds, FAR, FRR) at every distinct score plus a +inf sentinel."""
    thresholds = np.concatenate([np.unique(np.concatenate([bona, spoof])), [np.inf]])
    far = (spoof.size - np.searchsorted(spoof, thresholds, side="left")) / spoof.size
    frr = np.searchsorted(bona, thresholds, side="left") / bona.size
    return thresholds, far, frr


def compute_eer(records: list) -> tuple:
    """Equal error rate and its threshold.

    FRR - FAR is nondecreasing over the sweep, from -1 (accept everything)
    to +1 (the sentinel); the sign change pins the crossing segment.
    """
    bona, spoof = _split_scores(records)
    thresholds, far, frr = _sweep(bona, spoof)
    d = frr - far
    # d[0] = -1 (threshold at the global minimum accepts everything) and the
    # sentinel gives +1, so the last nonpositive index has a successor.
    i = int(np.flatnonzero(d <= 0)[-1])
    span = d[i + 1] - d[i]
    alpha = 0.0 if span == 0 else -d[i] / span
    eer = 0.5 * ((far[i] + alpha * (far[i + 1] - far[i])) + (frr[i] + alpha * (frr[i + 1] - frr[i])))
    if alpha == 0.0 or np.isinf(thresholds[i + 1]):
        thr = thresholds[i]
    else:
        thr = thresholds[i] + alpha * (thresholds[i + 1] - thresholds[i])
    return float(eer), float(thr)


def compute_tdcf_curve(records: list, params: TdcfParams) -> tuple:
    """(thresholds, normalized t-DCF values) over the standard sweep."""
    w_miss, w_fa = params.weights()
    bona, spoof = _split_scores(records)
    thresholds, far, frr = _sweep(bona, spoof)
    floor = min(w_miss, w_fa)
    return thresholds, (w_miss * frr + w_fa * far) / floor


def compute_min_tdcf(records: list, params: TdcfParams | None = None) -> tuple:
    """Normalized minimum tandem detection cost and its threshold. The floor
    is the better of the two default decisions, so all-identical scores give
    exactly 1.0 and perfect separation gives 0.0."""
    params = params or TdcfParams()
    thresholds, curve = compute_tdcf_curve(records, params)
    i = int(np.argmin(curve))
    return float(curve[i]), float(thresholds[i])


def compute_auc(records: list) -> float:
    """P(random bonafide outscores random spoof), ties at half credit;
    computed from midranks (Mann-Whitney U)."""
    bona, spoof = _split_scores(records)
    n1, n2 = bona.size, spoof.size
    ranks = rankdata(np.concatenate([bona, spoof]))
    u1 = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u1 / (n1 * n2))


def det_points(records: list) -> list:
    """The DET staircase: (FAR, FRR) at each swept threshold, starting at
    (1,0) (accept everything) and ending at (0,1) (the sentinel)."""
    bona, spoof = _split_scores(records)
    _, far, frr = _sweep(bona, spoof)
    return [(float(a), float(r)) for a, r in zip(far, frr)]


def read_score_file(path: str) -> dict:
    """Parse "utterance_id score" lines into {utt: score}."""
    scores = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'utt score', got {len(parts)} fields")
            utt, raw = parts
            try:
                score = float(raw)
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: bad score {raw!r}") from e
            if utt in scores:
                raise DataError(f"{path}:{lineno}: duplicate utterance {utt!r}")
            scores[utt] = score
    if not scores:
        raise DataError(f"{path}: score file has no entries")
    return scores


def join_scores_with_keys(scores: dict, entries: list) -> list:
    """Match a score file against protocol entries; every utterance must
    appear on both sides."""
    keys = {e.utterance_id: e.key for e in entries}
    missing = sorted(set(scores) - set(keys))
    if missing:
        raise DataError(f"{len(missing)} scored utterances missing from protocol, first {missing[0]!r}")
    unscored = sorted(set(keys) - set(scores))
    if unscored:
        raise DataError(f"{len(unscored)} protocol utterances missing scores, first {unscored[0]!r}")
    return [ScoreRecord(u, s, keys[u]) for u, s in scores.items()]


def write_score_file(records: list, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(f"{r.utterance_id} {r.score:.6f}\n")


def report(records: list, params: TdcfParams | None = None) -> str:
    """Delimited metrics summary, one 'name value' line per metric."""
    eer, eer_thr = compute_eer(records)
    tdcf, _ = compute_min_tdcf(records, params)
    auc = compute_auc(records)
    n_b = sum(1 for r in records if r.key == "bonafide")
    n_s = len(records) - n_b
    return "\n".join([
        f"EER {100.0 * eer:.3f}%",
        f"EER_threshold {eer_thr:.6f}",
        f"min_tDCF {tdcf:.6f}",
        f"AUC {auc:.6f}",
        f"bonafide {n_b}",
        f"spoof {n_s}",
    ]) + "\n"
