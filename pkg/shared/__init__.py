# Shared models and physics of the cfmm simulator
__version__ = "0.1.0"
