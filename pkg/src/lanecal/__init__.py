"""Online extrinsic calibration of a front-facing camera from lane boundaries."""

__version__ = "0.1.0"
