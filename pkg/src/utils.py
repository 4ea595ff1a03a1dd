import io
import logging
import os
import tempfile

import pandas as pd

from src.config import CSV_FLOAT_FORMAT, LOG_FORMAT, LOG_LEVEL


def setup_logging(level=LOG_LEVEL):
    """Configure the root logger once with a single stream handler"""
    root = logging.getLogger()
    if not any(getattr(h, "_admm_invert", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._admm_invert = True
        root.addHandler(handler)
    root.setLevel(level)


def ensure_directories(*paths):
    """Create directories if they don't exist"""
    for path in paths:
        os.makedirs(path, exist_ok=True)


def atomic_write_bytes(path, data):
    """Write bytes to path via a temp file in the same directory and a rename"""
    directory = os.path.dirname(os.path.abspath(path))
    ensure_directories(directory)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def atomic_write_text(path, text):
    return atomic_write_bytes(path, text.encode("utf-8"))


def save_dataframe(df, path):
    """Save a DataFrame to CSV atomically with a fixed float format"""
    buffer = io.StringIO()
    df.to_csv(buffer, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, buffer.getvalue())


def load_dataframe(path):
    return pd.read_csv(path)
