"""GAN-based dust and scratch removal for film scans."""

from . import arch, cli, data, degrade, loss, metrics, tensorops, train  # noqa: F401

__version__ = "0.1.0"
