"""Diffusion-prior motion planning: learned trajectory priors with guided
reverse-diffusion sampling, plus RRT-Connect and GPMP baselines.
"""

__version__ = "0.1.0"
