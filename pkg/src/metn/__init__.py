"""Maximum-entropy temporal network ensembles in continuous time."""

from importlib.resources import files

from .events import EventLog, SplitSpec, load_events, split, sufficient_stats, write_events
from .ensemble import EnsembleModel, assemble, joint_log_likelihood, sample

__all__ = [
    "EventLog", "SplitSpec", "load_events", "split", "sufficient_stats", "write_events",
    "EnsembleModel", "assemble", "joint_log_likelihood", "sample", "data_path",
]


def data_path(name: str):
    """Path of a bundled dataset file (``synthetic_events.csv``, ``synthetic_blocks.csv``)."""
    return files(__name__) / "data" / name
