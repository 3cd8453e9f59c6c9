import datetime
import math
import uuid
from fractions import Fraction
from pathlib import Path

import numpy as np


def make_json_safe(obj):
    """
    Recursively convert UUIDs, datetimes, paths, numpy values, fractions and
    complex numbers so obj is json-serializable. Works for nested dicts/lists.
    Complex values become [re, im]; non-finite floats become None.
    """
    if isinstance(obj, uuid.UUID):
        return str(obj)
    if isinstance(obj, (datetime.date, datetime.datetime)):
        return obj.isoformat()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): make_json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [make_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return make_json_safe(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [make_json_safe(float(obj.real)), make_json_safe(float(obj.imag))]
    if isinstance(obj, Fraction):
        return float(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj
