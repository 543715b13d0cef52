"""Floorplan-to-3D-scene pipeline.

Submodules: floorplan (data model and free space), layout_encoding
(per-pixel ray encodings), attention (pose-conditioned score kernels),
pose_graph (view planning), generator (procedural RGB-D oracle and the
gen/1 protocol), fusion (TSDF + mesh), evaluation (consistency and
layout metrics), pipeline/cli (orchestration).
"""

__version__ = "0.1.0"
