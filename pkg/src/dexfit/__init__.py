"""dexfit: body-and-hand pose fitting from 2D keypoints with learned and biomechanical priors."""
from __future__ import annotations

__version__ = "0.1.0"
