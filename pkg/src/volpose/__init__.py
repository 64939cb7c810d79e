"""Multi-view LiDAR-camera 3D human pose toolkit.

Synthetic scene generation, LiDAR scan simulation, volumetric heatmap
fusion, entropy-gated pseudo labels, the unsupervised loss stack and
evaluation metrics.
"""

__version__ = "0.1.0"
