# relaxed-bubbles/src/__init__.py
"""
Relaxed Bubbles - solver toolkit for spherical bubbles in an incompressible fluid
"""

__version__ = "1.0.0"
__author__ = "Relaxed Bubbles Developers"
