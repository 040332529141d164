"""FLIM: learn convolutional filter banks from user-drawn image markers.

Filters are centroids of clustered, standardized marker patches; no
backpropagation touches the convolutional layers. The package covers the
whole interactive loop: dataset loading, markers, filter learning, the
forward network, SVM/MLP classifiers, t-SNE projections, a CLI, and an
HTTP service for the browser UI.
"""

__version__ = "0.1.0"
