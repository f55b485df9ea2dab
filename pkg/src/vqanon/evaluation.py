"""Privacy and utility metrics (EER, UAR), score-file parsers and result tables."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from vqanon.errors import DataError

TARGET, NONTARGET = "target", "nontarget"


@dataclass
class TrialScores:
    trial_ids: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    labels: list = field(default_factory=list)    # "target" / "nontarget"
    genders: list = field(default_factory=list)   # optional, "f" / "m" per trial

    def __len__(self):
        return len(self.scores)

    def subset(self, gender):
        keep = [i for i, g in enumerate(self.genders) if g == gender]
        return TrialScores([self.trial_ids[i] for i in keep], [self.scores[i] for i in keep],
                           [self.labels[i] for i in keep], [gender] * len(keep))


@dataclass
class EmotionPredictions:
    utterance_ids: list = field(default_factory=list)
    predicted: list = field(default_factory=list)
    true: list = field(default_factory=list)

    def __len__(self):
        return len(self.true)


def _split_scores(scores):
    s = np.asarray(scores.scores, dtype=np.float64)
    lab = np.asarray(scores.labels)
    if s.size and not np.all(np.isfinite(s)):
        raise DataError("non-finite trial scores")
    tar, non = s[lab == TARGET], s[lab == NONTARGET]
    if tar.size == 0 or non.size == 0:
        raise DataError("degenerate trials: need both target and nontarget scores")
    return tar, non


def error_rates(target, nontarget, thresholds):
    """FAR (nontarget >= t) and FRR (target < t) at each threshold."""
    tar = np.sort(target)
    non = np.sort(nontarget)
    far = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    frr = np.searchsorted(tar, thresholds, side="left") / tar.size
    return far, frr


def eer_from_arrays(target, nontarget):
    """EER (fraction) and threshold from raw score arrays.

    Thresholds sweep every distinct score plus one value above the maximum;
    the FAR/FRR crossing is linearly interpolated between adjacent thresholds.
    """
    target = np.asarray(target, dtype=np.float64)
    nontarget = np.asarray(nontarget, dtype=np.float64)
    allsc = np.unique(np.concatenate([target, nontarget]))
    thr = np.append(allsc, np.nextafter(allsc[-1], np.inf))
    far, frr = error_rates(target, nontarget, thr)
    diff = frr - far  # non-decreasing in the threshold
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0 or k == 0:
        return float(far[k]), float(thr[k])
    a, b = k - 1, k
    t = -diff[a] / (diff[b] - diff[a])
    eer = far[a] + t * (far[b] - far[a])
    return float(eer), float(thr[a] + t * (thr[b] - thr[a]))


def compute_eer(scores):
    """Returns ``(eer_percent, threshold)``."""
    tar, non = _split_scores(scores)
    eer, thr = eer_from_arrays(tar, non)
    return 100.0 * eer, thr


def compute_uar(preds, classes=None):
    """Unweighted average recall in percent over ``classes``.

    ``classes`` defaults to every label seen among true and predicted values;
    each must occur at least once as a true label.
    """
    if classes is None:
        classes = sorted(set(preds.true) | set(preds.predicted))
    if not classes:
        raise DataError("empty class set")
    true = np.asarray(preds.true, dtype=object)
    pred = np.asarray(preds.predicted, dtype=object)
    recalls = []
    for c in classes:
        mask = true == c
        if not mask.any():
            raise DataError(f"class absent: {c!r} has no true instances")
        recalls.append(np.mean(pred[mask] == c))
    return 100.0 * float(np.mean(recalls))


def confusion_to_predictions(matrix, classes=None):
    """Expand a confusion matrix (rows = true, columns = predicted)."""
    m = np.asarray(matrix, dtype=int)
    classes = list(classes) if classes is not None else [str(i) for i in range(m.shape[0])]
    out = EmotionPredictions()
    n = 0
    for i, row in enumerate(m):
        for j, count in enumerate(row):
            for _ in range(count):
                out.utterance_ids.append(f"u{n}")
                out.true.append(classes[i])
                out.predicted.append(classes[j])
                n += 1
    return out


# -- files ------------------------------------------------------------------

def _lines(path):
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\r\n")
            if line.strip() and not line.lstrip().startswith("#"):
                yield lineno, line


def load_trials(path):
    """Parse ``trial_id score label [gender]`` lines."""
    out = TrialScores()
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) not in (3, 4):
            raise DataError(f"{path}:{lineno}: expected 'trial_id score label [gender]', got {line!r}")
        try:
            score = float(parts[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad score {parts[1]!r} in {line!r}") from None
        if not np.isfinite(score):
            raise DataError(f"{path}:{lineno}: non-finite score in {line!r}")
        label = parts[2].lower()
        if label not in (TARGET, NONTARGET):
            raise DataError(f"{path}:{lineno}: label must be target/nontarget, got {parts[2]!r}")
        out.trial_ids.append(parts[0])
        out.scores.append(score)
        out.labels.append(label)
        if len(parts) == 4:
            g = parts[3].lower()
            if g not in ("f", "m"):
                raise DataError(f"{path}:{lineno}: gender must be f or m, got {parts[3]!r}")
            out.genders.append(g)
    if out.genders and len(out.genders) != len(out.scores):
        raise DataError(f"{path}: gender column present on some lines only")
    return out


def write_trials(path, trials):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i, (tid, s, lab) in enumerate(zip(trials.trial_ids, trials.scores, trials.labels)):
            extra = f" {trials.genders[i]}" if trials.genders else ""
            f.write(f"{tid} {float(s)!r} {lab}{extra}\n")


def load_emotion(path):
    """Parse ``utterance_id predicted true`` lines."""
    out = EmotionPredictions()
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 'utterance_id predicted true', got {line!r}")
        out.utterance_ids.append(parts[0])
        out.predicted.append(parts[1])
        out.true.append(parts[2])
    return out


def write_emotion(path, preds):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for u, p, t in zip(preds.utterance_ids, preds.predicted, preds.true):
            f.write(f"{u} {p} {t}\n")


# -- tables -----------------------------------------------------------------

def competition_ranks(values, higher_is_better=True):
    """1-based ranks; tied values share the lower rank number. None stays unranked."""
    ranks = []
    for v in values:
        if v is None:
            ranks.append(None)
            continue
        better = sum(1 for w in values if w is not None and (w > v if higher_is_better else w < v))
        ranks.append(1 + better)
    return ranks


def render_results_table(results, higher_is_better, fmt="text", precision=2):
    """Render ``{system: {metric: value}}`` with per-metric rank annotations.

    ``higher_is_better`` maps each metric (column order) to its direction.
    Text cells read ``value (rank)`` with rank-1 cells prefixed by ``*``;
    CSV output carries a ``<metric>_rank`` column per metric. Missing values
    render as ``-`` (text) or empty (CSV) and are left unranked.
    """
    systems = list(results)
    if not systems:
        raise ValueError("no systems to render")
    metrics = list(higher_is_better)
    ranks = {m: competition_ranks([results[s].get(m) for s in systems], higher_is_better[m]) for m in metrics}

    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["system"] + [c for m in metrics for c in (m, f"{m}_rank")])
        for i, s in enumerate(systems):
            row = [s]
            for m in metrics:
                v = results[s].get(m)
                row += ["" if v is None else f"{v:.{precision}f}", "" if ranks[m][i] is None else ranks[m][i]]
            w.writerow(row)
        return buf.getvalue()

    arrows = {True: "↑", False: "↓"}
    header = ["Models"] + [f"{m} {arrows[higher_is_better[m]]}" for m in metrics]
    rows = []
    for i, s in enumerate(systems):
        cells = [s]
        for m in metrics:
            v, r = results[s].get(m), ranks[m][i]
            if v is None:
                cells.append("-")
            else:
                cells.append(f"{'*' if r == 1 else ''}{v:.{precision}f} ({r})")
        rows.append(cells)
    widths = [max(len(r[c]) for r in [header] + rows) for c in range(len(header))]
    line = lambda cells: "  ".join(c.ljust(w) if k == 0 else c.rjust(w)  # noqa: E731
                                   for k, (c, w) in enumerate(zip(cells, widths))).rstrip()
    sep = "-" * len(line(header))
    return "\n".join([line(header), sep] + [line(r) for r in rows]) + "\n"
