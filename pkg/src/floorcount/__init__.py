"""Floor-count dataset tooling: image ingestion, footprint matching, quality
filtering, capture planning, hierarchical floor heads and evaluation."""
from importlib import resources

__version__ = "0.1.0"


def data_path(*parts):
    """Path to a bundled fixture under ``floorcount/data``."""
    return resources.files(__name__).joinpath("data", *parts)
