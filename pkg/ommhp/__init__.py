"""
Online learning of mixtures of multivariate Hawkes processes.

This package contains the Hawkes model, the simulator, the interval
discretizer, the online sequence and network learners, evaluation metrics and
the file formats used by the ommhp command line.
"""
