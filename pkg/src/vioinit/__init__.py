"""Visual-inertial initialization with joint extrinsic and time-offset calibration."""

__version__ = "0.1.0"
