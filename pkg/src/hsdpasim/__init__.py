"""Single-cell HSDPA simulator comparing FIFO, TSP and enhanced TSP MAC-hs buffer management."""
from .config import RunConfig
from .simulation import Cell, RunResult, RunSummary, run

__all__ = ["RunConfig", "Cell", "RunResult", "RunSummary", "run"]
__version__ = "0.1.0"
