"""Tests package for lfr-augment."""
