"""Random Lorenz-like maps: escape and return partitions, random towers, quenched statistics."""

__version__ = "0.1.0"
