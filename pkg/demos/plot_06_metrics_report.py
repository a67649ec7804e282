"""
Metrics and the comparison table
================================

Recompute the published MRNet multiview averages and render them.
"""

from mskview.metrics import MULTIVIEW, MetricsRow, macro_average, render_report, summarize

rows = [
    MetricsRow("AlexNet", MULTIVIEW, "Abnormal", 0.8914, 0.9789, 0.4000, 0.8583),
    MetricsRow("AlexNet", MULTIVIEW, "ACL", 0.9388, 0.6852, 0.9545, 0.8333),
    MetricsRow("AlexNet", MULTIVIEW, "Meniscus", 0.8060, 0.6923, 0.8088, 0.7583),
]
print(macro_average(rows))
print(render_report(rows))

# %%
# The Abnormal row is reproduced by 93 true positives, 2 false negatives,
# 10 true negatives and 15 false positives on 120 exams.
scores = [0.9] * 93 + [0.1] * 2 + [0.2] * 10 + [0.8] * 15
labels = [1] * 95 + [0] * 25
print({k: round(v, 4) for k, v in summarize(scores, 0.5, labels=labels).items()})
