"""
Separation System Utilities
Seeding, content hashing, structured operation logging and timing
"""
import functools
import hashlib
import json
import logging
import random
from collections import deque
from datetime import datetime
from typing import Dict, Any, List

import numpy as np
import torch

logger = logging.getLogger(__name__)

_OPERATION_LOG: deque = deque(maxlen=50)


def seed_everything(seed: int) -> np.random.Generator:
    """Seed python, numpy and torch; return a numpy generator for the caller"""

    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    logger.info(f"🔄 Seed set to {seed}")
    return np.random.default_rng(seed)


def generate_content_hash(payload: Any) -> str:
    """Stable short hash of a JSON-serialisable payload or raw bytes"""

    if isinstance(payload, (bytes, bytearray)):
        data = bytes(payload)
    else:
        data = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(data).hexdigest()[:16]


def log_operation(operation: str, details: Dict[str, Any] = None, level: str = "info"):
    """Structured log record for pipeline milestones"""

    log_entry = {
        "timestamp": datetime.now().isoformat(),
        "operation": operation,
        "system": "Scene-Aware Separation",
        "level": level,
        "details": details or {},
    }

    if level == "error":
        logger.error(f"Operation Error: {operation} - {log_entry}")
    elif level == "warning":
        logger.warning(f"Operation Warning: {operation} - {log_entry}")
    else:
        logger.info(f"Operation: {operation} - {log_entry}")

    _OPERATION_LOG.append(log_entry)
    return log_entry


def get_operation_log() -> List[Dict[str, Any]]:
    """Most recent operation records (at most 50)"""
    return list(_OPERATION_LOG)


def measure_performance(operation_name: str):
    """Decorator to measure performance of operations"""

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = datetime.now()

            try:
                result = func(*args, **kwargs)
            except Exception as e:
                duration = (datetime.now() - start_time).total_seconds()
                log_operation(
                    f"performance_measurement_{operation_name}",
                    {"duration_seconds": duration, "status": "error", "error": str(e)},
                    level="error",
                )
                raise

            duration = (datetime.now() - start_time).total_seconds()
            log_operation(
                f"performance_measurement_{operation_name}",
                {"duration_seconds": duration, "status": "success"},
            )
            return result

        return wrapper
    return decorator
