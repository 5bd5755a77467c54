"""
JSON Lines cycle trace.

One record per visited multigrid level: level, smoothing counts and the residual
before and after the visit. Write failures are logged and never interrupt a solve.
"""

import json
import os
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from loguru import logger


class CycleTrace:
    """Append `{"event": ..., **payload}` lines to a file, or collect them in memory."""

    def __init__(self, path: Optional[Union[str, Path]] = None) -> None:
        self.path = str(path) if path is not None else None
        self.records: List[Dict[str, Any]] = []
        self._lock = threading.Lock()
        if self.path:
            try:
                d = os.path.dirname(self.path)
                if d:
                    os.makedirs(d, exist_ok=True)
            except Exception as e:
                logger.warning(f"[Trace] cannot create directory for {self.path}: {e}")

    def send(self, event: str, payload: Dict[str, Any]) -> None:
        rec = dict(payload or {})
        rec["event"] = event
        with self._lock:
            self.records.append(rec)
            if not self.path:
                return
            try:
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(rec) + "\n")
            except Exception as e:
                logger.warning(f"[Trace] write failed: {e}")

    def cycle_level(self, level: int, n_pre: int, n_post: int, res_before: float, res_after: float,
                    system: str = "saddle") -> None:
        self.send("cycle_level", {
            "system": system,
            "level": level,
            "n_pre": n_pre,
            "n_post": n_post,
            "res_before": res_before,
            "res_after": res_after,
        })


def read_trace(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Parse a trace file back into records (blank lines skipped)."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out
