"""Shared settings, logging, errors and codecs."""
