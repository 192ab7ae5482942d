"""Emulator stand-ins with a known mean and variance surface."""
import numpy as np

from l2calib.emulator import Design, Emulator


class MockSlice:
    def __init__(self, f, nodes, var):
        self.f, self.nodes, self.var = f, np.asarray(nodes, float), var

    def mean(self, theta):
        return np.asarray(self.f(self.nodes, theta), float)

    def mean_variance(self, theta):
        return np.broadcast_to(np.asarray(self.var(self.nodes, theta), float), self.nodes.shape)

    def variance(self, theta, include_noise=True):
        return self.mean_variance(theta)

    def integrated_variance(self, theta, weights, include_noise=True):
        return float(np.asarray(weights) @ self.mean_variance(theta))


class MockEmulator(Emulator):
    """Mean exactly ``f``, variance ``var(x, theta)`` (zero by default)."""

    def __init__(self, f, var=None, lower=(0.0, 0.0), upper=(1.0, 1.0)):
        self.f = f
        self.var = var or (lambda x, th: 0.0 * x)
        self.design = Design(np.array([lower]), lower, upper)

    def at_nodes(self, x_nodes):
        return MockSlice(self.f, x_nodes, self.var)
