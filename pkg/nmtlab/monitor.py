"""Process resource monitoring for long training runs."""
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import psutil

_LOGGER = logging.getLogger(__name__)

_MIB = 1024.0 * 1024.0


@dataclass
class ResourceSample:
    """One reading of process and system load."""

    cpu_percent: float
    rss_mib: float
    memory_percent: float


class ResourceMonitor:
    """Samples CPU and memory through psutil and keeps a bounded window."""

    def __init__(self, sample_window: int = 10, pid: Optional[int] = None) -> None:
        """Initialize the monitor for ``pid`` (default: this process)."""
        self._process = psutil.Process(pid)
        self._sample_window = max(1, sample_window)
        self._history: List[ResourceSample] = []
        # first call primes the counter and always reports 0.0
        self._process.cpu_percent(None)

    def snapshot(self) -> ResourceSample:
        """Take a sample and append it to the history window."""
        sample = ResourceSample(
            cpu_percent=float(self._process.cpu_percent(None)),
            rss_mib=self._process.memory_info().rss / _MIB,
            memory_percent=float(psutil.virtual_memory().percent),
        )
        self._history.append(sample)
        if len(self._history) > self._sample_window:
            self._history.pop(0)
        _LOGGER.debug("Resource sample: %s", sample)
        return sample

    @property
    def history(self) -> List[ResourceSample]:
        """Samples currently in the window, oldest first."""
        return list(self._history)

    def get_stats(self) -> Dict[str, float]:
        """Averages and peaks over the window."""
        if not self._history:
            return {"samples": 0}
        count = len(self._history)
        return {
            "samples": count,
            "cpu_percent_avg": sum(s.cpu_percent for s in self._history) / count,
            "rss_mib_max": max(s.rss_mib for s in self._history),
            "memory_percent_avg": sum(s.memory_percent for s in self._history) / count,
            **{f"last_{k}": v for k, v in asdict(self._history[-1]).items()},
        }
