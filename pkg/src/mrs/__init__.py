"""mrs: a miniature distributed MapReduce framework.

Replicated block file system, simulated cluster with failure injection,
streaming external-process workers, a fault-tolerant job engine, and a
Hadoop-Streaming-compatible command line, all small enough to run on one
machine and test exhaustively.
"""

from .client import DaemonClient
from .config import Config
from .jobd import Daemon
from .models import CacheEntry, JobPhase, JobSpec, JobStatus, Record

__version__ = "0.1.0"

__all__ = ["Config", "Daemon", "DaemonClient", "CacheEntry", "JobPhase",
           "JobSpec", "JobStatus", "Record", "__version__"]
