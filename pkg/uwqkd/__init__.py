"""
Underwater CV-QKD link engine with virtual photon subtraction.
"""

__version__ = "1.0.0"
