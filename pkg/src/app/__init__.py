"""Command-line front end of lfr-augment."""
