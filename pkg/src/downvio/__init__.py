"""Downfacing visual-inertial odometry toolkit.

Planar (translation + yaw + height) odometry from a ground-facing camera,
an IMU and a time-of-flight ranger.  Three interchangeable feature trackers
(integer ORB, block-matching optical flow, SuperPoint tensor post-processing)
feed a rigid-body motion decomposition and an extended Kalman filter.
Includes a synthetic ground-truth sequence generator and trajectory metrics.
"""

__version__ = "0.1.0"
