"""
burstfuse - Handheld multi-frame super-resolution
Merges bursts of Bayer raw frames into full-RGB images by kernel regression
"""
__version__ = "1.0.0"
