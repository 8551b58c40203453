"""
PGRD - Prior-Guided Residual Diffusion
Probabilistic segmentation with a frozen prior, residual v-prediction diffusion
and deep diffusion supervision
"""

__version__ = "0.1.0"
