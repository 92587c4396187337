"""Inertial-conditioned aerial video toolkit.

Synthetic flight clips with analytic IMU ground truth, a trainable latent
physics probe, action-alignment and consistency metrics, an optical-flow
evaluator, and a probe-regularized toy generator, all on numpy/scipy.
"""

__version__ = "0.1.0"
