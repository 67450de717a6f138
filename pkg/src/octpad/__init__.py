"""octpad: presentation attack detection for OCT fingerprint B-scans.

Pipeline stages: preprocessing (non-local means, dilation, Otsu
thresholding), depth-profile patch extraction, CNN spoofness scoring,
score aggregation and cross-validated evaluation, plus evidence-backtracking
heatmaps.  A built-in phantom generator makes the whole pipeline runnable at
desk scale without real captures.
"""

__version__ = "0.1.0"
