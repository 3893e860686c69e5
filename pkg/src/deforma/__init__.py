"""Learned surrogate pipeline for soft-tissue deformation.

Subpackages cover phantom mesh generation (:mod:`deforma.meshgen`),
hyperelastic finite elements (:mod:`deforma.hyperfem`), randomized load
cases (:mod:`deforma.loadcase`), mesh-to-graph conversion
(:mod:`deforma.meshgraph`), the GraphSAGE surrogate
(:mod:`deforma.sagenet`), evaluation metrics (:mod:`deforma.evalkit`),
and the command-line pipeline (:mod:`deforma.cli`).
"""

__version__ = "0.1.0"
