"""
How the retrieval metrics score a ranking
=========================================

Builds a five-image gallery by hand, ranks it for a single query, and
traces the junk-filtering rule and the average-precision sum before
letting `compute_cmc_map` do the same thing.

    python3 demos/retrieval_metrics.py
"""

import numpy as np

from pedmae import FeatureMatrix, compute_cmc_map, format_report

# the query: identity 7 seen by camera 0                (unit-norm features)
query = FeatureMatrix(np.array([[1.0, 0.0]]), np.array([7]), np.array([0]))

# the gallery, already in descending similarity order for readability:
#   rank  id  cam  note
#    1     7   0   same id AND same camera -> junk, dropped from the ranking
#   2     7   1   relevant
#   3     1   0   distractor
#   4     7   2   relevant
#   5     3   0   distractor
gallery = FeatureMatrix(
    np.array([[1.0, 0.0],
              [0.9, np.sqrt(0.19)],
              [0.8, 0.6],
              [0.7, np.sqrt(0.51)],
              [0.6, 0.8]]),
    np.array([7, 7, 1, 7, 3]),
    np.array([0, 1, 0, 2, 0]),
)

sims = (query.features @ gallery.features.T)[0]
print("similarities:", np.round(sims, 3))

# after the junk entry is removed the relevant items sit at ranks 1 and 3,
# so AP = (1/1 + 2/3) / 2
expected_ap = (1.0 + 2.0 / 3.0) / 2.0
print(f"hand-computed AP: {expected_ap:.4f}")

report = compute_cmc_map(query, gallery, max_rank=4)
print(f"compute_cmc_map:  {report.map_score:.4f}  (rank-1 {report.rank1:.1f})")

print("\nfull report:")
print(format_report(report))
