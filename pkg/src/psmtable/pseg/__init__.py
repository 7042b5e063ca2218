"""Parallel segment storage manager: collective writer, prefetching reader."""

from .format import DATA_DIR_NAME, VarRecord, read_index
from .reader import PrefetchCache, PsegReader
from .writer import AggregationPlan, PsegOptions, PsegWriter

bind = PsegWriter.bind

__all__ = [
    "AggregationPlan",
    "DATA_DIR_NAME",
    "PrefetchCache",
    "PsegOptions",
    "PsegReader",
    "PsegWriter",
    "VarRecord",
    "bind",
    "read_index",
]
