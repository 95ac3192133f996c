# utils.py
import json
import os
from pathlib import Path

import numpy as np
import pandas as pd
from dotenv import load_dotenv

load_dotenv()

MINCON_SEED = int(os.getenv("MINCON_SEED", "20240101"))
MINCON_THREADS = int(os.getenv("MINCON_THREADS", "1"))
MINCON_OUT = os.getenv("MINCON_OUT", "results")
MINCON_LOG_LEVEL = os.getenv("MINCON_LOG_LEVEL", "INFO")

# Work is split into chunks of this many samples regardless of thread count,
# so seeded streams and reductions never depend on --threads.
CHUNK_SIZE = 8192


def make_rng(seed):
    """Counter-based generator for one explicit 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def spawn_rngs(seed, count):
    """Independent Philox streams, one per chunk."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def chunk_bounds(total, chunk_size=CHUNK_SIZE):
    """Split range(total) into consecutive (start, stop) pairs."""
    return [(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]


def geometric_ladder(start, ratio=2 ** 0.25, rungs=16):
    """Radii start, start*ratio, ..., strictly increasing."""
    if start <= 0 or ratio <= 1 or rungs < 2:
        raise ValueError(f"invalid ladder: start={start}, ratio={ratio}, rungs={rungs}")
    return start * ratio ** np.arange(rungs)


def to_builtin(value):
    """Convert numpy scalars/arrays inside a report into JSON-native values."""
    if isinstance(value, dict):
        return {str(key): to_builtin(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no inf/nan
        return value if np.isfinite(value) else None
    return value


def dumps_report(report):
    """Single-line JSON object, newline-terminated, keys in insertion order."""
    return json.dumps(to_builtin(report), ensure_ascii=False) + "\n"


def write_json(path, report):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = dumps_report(report)
    path.write_text(text, encoding="utf-8")
    return text


def write_csv(path, rows, columns):
    """Write rows (list of dicts) with a fixed column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(rows), columns=list(columns))
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def read_csv(path):
    return pd.read_csv(path)
