"""OOD detection toolkit: centroid-target training, subspace-projection
scoring, SVM fusion, and ROC-style evaluation."""

__version__ = "0.1.0"
