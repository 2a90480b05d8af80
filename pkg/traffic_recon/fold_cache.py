"""
fold_cache.py - Cache of per-fold models for cross-validation

Models are keyed by (fold, λ, data fingerprint). Without a database path the
cache lives in memory for one run; with one it is an SQLite table that later
runs reuse.
"""

import hashlib
import json
import logging
import sqlite3

import numpy as np

from .errors import ReconError
from .file_formats import model_from_dict, model_to_dict

logger = logging.getLogger(__name__)

CACHE_TABLE = "fold_models"


def data_fingerprint(train, g, epsilon, learn_cfg):
    """Hash of everything a fold fit depends on apart from the fold number and λ."""
    digest = hashlib.sha256()
    digest.update(g.fingerprint().encode("utf-8"))
    digest.update(np.ascontiguousarray(np.asarray(train, dtype=np.float64)).tobytes())
    digest.update(np.asarray(np.shape(train), dtype=np.int64).tobytes())
    settings_blob = json.dumps({
        "epsilon": float(epsilon),
        "step_size": learn_cfg.step_size,
        "max_steps": learn_cfg.max_steps,
        "grad_tolerance": learn_cfg.grad_tolerance,
        "max_log_eta": learn_cfg.max_log_eta,
    }, sort_keys=True)
    digest.update(settings_blob.encode("utf-8"))
    return digest.hexdigest()


def connect_to_db(db_path):
    """Open the cache database and make sure the model table exists."""
    try:
        conn = sqlite3.connect(db_path)
    except sqlite3.Error as e:
        raise ReconError(f"Failed to open fold cache {db_path}: {e}") from e
    conn.execute(
        f"""
        CREATE TABLE IF NOT EXISTS {CACHE_TABLE} (
            fold INTEGER NOT NULL,
            lambda REAL NOT NULL,
            fingerprint TEXT NOT NULL,
            model TEXT NOT NULL,
            PRIMARY KEY (fold, lambda, fingerprint)
        )
        """
    )
    conn.commit()
    logger.info(f"Connected to fold cache: {db_path}")
    return conn


class FoldModelCache:
    """Per-fold model store, in memory or backed by SQLite."""

    def __init__(self, db_path=None):
        self.db_path = db_path
        self._memory = {}
        self._conn = connect_to_db(db_path) if db_path else None
        self.hits = 0
        self.misses = 0

    def get(self, fold, lam, fingerprint):
        key = (int(fold), float(lam), fingerprint)
        if key in self._memory:
            self.hits += 1
            return self._memory[key]
        if self._conn is not None:
            row = self._conn.execute(
                f"SELECT model FROM {CACHE_TABLE} WHERE fold = ? AND lambda = ? AND fingerprint = ?",
                key,
            ).fetchone()
            if row is not None:
                model = model_from_dict(json.loads(row[0]))
                self._memory[key] = model
                self.hits += 1
                return model
        self.misses += 1
        return None

    def put(self, fold, lam, fingerprint, model):
        key = (int(fold), float(lam), fingerprint)
        self._memory[key] = model
        if self._conn is not None:
            try:
                self._conn.execute(
                    f"INSERT OR REPLACE INTO {CACHE_TABLE} (fold, lambda, fingerprint, model) VALUES (?, ?, ?, ?)",
                    (*key, json.dumps(model_to_dict(model))),
                )
                self._conn.commit()
            except sqlite3.Error as e:
                logger.warning(f"Could not store fold {fold} model in {self.db_path}: {e}")

    def __len__(self):
        return len(self._memory)

    def close(self):
        if self._conn is not None:
            self._conn.close()
            self._conn = None
            logger.debug("Fold cache connection closed.")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
