"""cfalearn: joint learning of camera color-filter-array patterns and a
neural demosaicking network, with baseline patterns and a PSNR evaluation
harness."""

__version__ = "0.1.0"

from . import autodiff, data, evaluate, patterns, reconnet, sensor, train  # noqa: F401
