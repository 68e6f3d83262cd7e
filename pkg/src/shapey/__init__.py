"""shapey: masked nearest-neighbor shape-recognition benchmarking for embeddings."""

__version__ = "0.1.0"
