"""FBSDE Lab - forward-backward SDEs with jumps in a random environment"""

__version__ = "0.1.0"
