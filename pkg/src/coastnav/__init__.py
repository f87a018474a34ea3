"""Radar and chart based ship positioning with GNSS residual change detection.

Modules:
    geodesy    WGS84 tangent-plane conversions
    chart      shorelines, landmarks and nearest-shoreline distances
    radarsim   simulated radar scans and static-target detections
    lfm        likelihood-field scan matching (first stage) and EM fitting
    landmark   two-landmark resection and fusion (second stage)
    detect     Gaussian and KDE GLRT change detectors
    scenario   fault injection, Monte Carlo runs and detector tuning
    cli        the ``coastnav`` command
"""

__version__ = "0.1.0"
