"""Behavior-shift features from search and video-watch histories around a cutoff date."""

__version__ = "0.1.0"
