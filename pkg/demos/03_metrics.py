"""
EER, UAR and the results table
==============================
"""

import numpy as np

from vqanon.evaluation import (EmotionPredictions, TrialScores, compute_eer, compute_uar,
                               confusion_to_predictions, render_results_table)

rng = np.random.default_rng(0)


def trials(shift, n=500):
    tar, non = rng.normal(shift, 1, n), rng.normal(0, 1, n)
    return TrialScores([f"t{i}" for i in range(2 * n)], list(tar) + list(non),
                       ["target"] * n + ["nontarget"] * n)


###########################################################################
# Weaker attackers separate the scores less, so EER climbs towards 50 %.

for shift in (4.0, 2.0, 1.0, 0.0):
    eer, thr = compute_eer(trials(shift))
    print(f"separation {shift}: EER {eer:5.2f} %  threshold {thr:+.3f}")

###########################################################################
# UAR from a confusion matrix, rows are true classes.

print("UAR", compute_uar(confusion_to_predictions([[8, 2], [4, 6]])))
p = EmotionPredictions(["a", "b", "c", "d"], ["neu", "neu", "neu", "ang"], ["neu", "hap", "sad", "ang"])
print("UAR", compute_uar(p))

###########################################################################
# Ranked table. Higher EER is better privacy, lower WER is better.

results = {
    "System 1": {"EER": compute_eer(trials(1.0))[0], "UAR": 41.0, "WER": 5.2},
    "System 2": {"EER": compute_eer(trials(0.6))[0], "UAR": 44.9, "WER": 5.4},
    "System 3": {"EER": compute_eer(trials(0.8))[0], "UAR": None, "WER": 5.1},
}
print(render_results_table(results, {"EER": True, "UAR": True, "WER": False}))
print(render_results_table(results, {"EER": True, "UAR": True, "WER": False}, fmt="csv"))
