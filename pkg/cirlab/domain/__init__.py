"""One sub-package per part of the continual-learning lab."""
