"""Tri-modal (video, text, audio) diffusion transformer on a numpy autodiff core."""

__version__ = "0.1.0"
