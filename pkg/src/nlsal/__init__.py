"""Non-local attention saliency networks, desk scale.

A small numpy-backed library: tape-based reverse-mode autodiff, an
embedded-Gaussian non-local block, static and dynamic fully-convolutional
saliency networks, SGD training, a benchmark metric suite (PR / ROC / AUC /
MAE), synthetic datasets, and a command-line front end.
"""

__version__ = "0.1.0"
