import time
import shutil
import logging
from typing import Dict, Any, Deque
from collections import deque
from datetime import datetime, timezone

logger = logging.getLogger("MetricsTracker")

class RunMetrics:
    """
    Process-wide counters for a pooling run.
    Singleton pattern so quadrature, sampling and the grid runner aggregate into one place.
    """
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(RunMetrics, cls).__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        if self._initialized:
            return

        self._initialized = True
        self._start_time = time.time()

        # Cell outcomes
        self._cells_ok = 0
        self._cells_failed = 0

        # Cell wall times (rolling window of the last 1000 cells)
        self._cell_times: Deque[float] = deque(maxlen=1000)

        # Numeric work
        self._quadrature_calls = 0
        self._quadrature_failures = 0
        self._quadrature_evaluations = 0
        self._mc_draws = 0

        # Worker Stats
        self._active_workers = 0
        self._total_workers = 0

    def record_cell(self, duration: float, success: bool):
        """
        Record one scenario cell outcome.
        """
        self._cell_times.append(duration)
        if success:
            self._cells_ok += 1
        else:
            self._cells_failed += 1

    def record_quadrature(self, evaluations: int, converged: bool = True):
        self._quadrature_calls += 1
        self._quadrature_evaluations += evaluations
        if not converged:
            self._quadrature_failures += 1

    def record_draws(self, count: int):
        self._mc_draws += count

    def numeric_counts(self) -> Dict[str, int]:
        return {
            "quadrature_calls": self._quadrature_calls,
            "quadrature_failures": self._quadrature_failures,
            "quadrature_evaluations": self._quadrature_evaluations,
            "mc_draws": self._mc_draws,
        }

    def merge_numeric_counts(self, counts: Dict[str, int]):
        """
        Add counters gathered in another process (a grid worker).
        """
        self._quadrature_calls += counts.get("quadrature_calls", 0)
        self._quadrature_failures += counts.get("quadrature_failures", 0)
        self._quadrature_evaluations += counts.get("quadrature_evaluations", 0)
        self._mc_draws += counts.get("mc_draws", 0)

    def update_worker_stats(self, active: int, total: int):
        """
        Update current worker saturation.
        """
        self._active_workers = active
        self._total_workers = total

    def get_run_status(self) -> Dict[str, Any]:
        """
        Summary embedded into manifest.json.
        """
        now = time.time()
        total_cells = self._cells_ok + self._cells_failed
        success_rate = (self._cells_ok / total_cells * 100) if total_cells > 0 else 100.0
        avg_cell = (sum(self._cell_times) / len(self._cell_times)) if self._cell_times else 0.0
        max_cell = max(self._cell_times) if self._cell_times else 0.0

        # Disk Space
        try:
            _, _, free = shutil.disk_usage(".")
            free_mb = free // (1024 * 1024)
        except Exception:
            free_mb = 0

        # Alerts
        alerts = []
        if self._cells_failed > 0:
            alerts.append(f"WARNING: {self._cells_failed} cell(s) failed")
        if self._quadrature_failures > 0:
            alerts.append(f"WARNING: {self._quadrature_failures} quadrature(s) did not converge")

        return {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "uptime_seconds": int(now - self._start_time),
            "cells": {
                "ok": self._cells_ok,
                "failed": self._cells_failed,
                "success_rate_percent": round(success_rate, 2),
                "avg_wall_time_sec": round(avg_cell, 3),
                "max_wall_time_sec": round(max_cell, 3),
            },
            "numerics": self.numeric_counts(),
            "workers": {
                "active": self._active_workers,
                "total": self._total_workers,
            },
            "system": {
                "disk_free_mb": free_mb
            },
            "alerts": alerts
        }

# Global Accessor
def get_metrics_tracker() -> RunMetrics:
    return RunMetrics()
