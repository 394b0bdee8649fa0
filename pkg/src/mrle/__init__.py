"""Maximum regularized likelihood estimation: tensor algebra, gauges, three
model families with exact KL losses, proximal solvers, tuning-parameter
calibration, and a Monte Carlo simulation harness."""

__version__ = "0.1.0"
