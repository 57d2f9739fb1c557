"""Shared helpers: a content-addressed cache for expensive training runs.

Acceptance-level experiments need twelve full desk-scale runs. cached_train
stores each run's best checkpoint and log under a key derived from the
package source and the full run config, so re-running the suite after any
source change retrains from scratch while an unchanged tree reuses results
bit-for-bit (training is deterministic).
"""

import hashlib
import json
import os
import sys
import time
from glob import glob

sys.path.insert(0, os.path.dirname(__file__))  # make oracles importable

from daunet.checkpoint import load_checkpoint, restore_model, save_checkpoint
from daunet.config import config_to_flat
from daunet.model import build_model
from daunet.trainer import TrainResult, train

CACHE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                         ".cache", "acceptance")


def source_digest():
    """Hash of every package source file; any edit invalidates the cache."""
    root = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                        "src", "daunet")
    h = hashlib.sha1()
    for path in sorted(glob(os.path.join(root, "*.py"))):
        h.update(os.path.basename(path).encode())
        with open(path, "rb") as f:
            h.update(f.read())
    return h.hexdigest()


def run_key(cfg):
    blob = json.dumps({"src": source_digest(), "cfg": config_to_flat(cfg)},
                      sort_keys=True)
    return hashlib.sha1(blob.encode()).hexdigest()[:16]


def cache_paths(cfg, tag):
    key = run_key(cfg)
    return (os.path.join(CACHE_DIR, f"{tag}_{key}.ckpt"),
            os.path.join(CACHE_DIR, f"{tag}_{key}.json"))


def run_meta(cfg, tag):
    """Cached run metadata (log rows, best epoch, wall_seconds) or None."""
    meta_path = cache_paths(cfg, tag)[1]
    if not os.path.exists(meta_path):
        return None
    with open(meta_path) as f:
        return json.load(f)


def cached_train(cfg, tag, progress=None):
    """train(cfg) with an on-disk cache; returns a TrainResult either way."""
    os.makedirs(CACHE_DIR, exist_ok=True)
    ckpt_path, meta_path = cache_paths(cfg, tag)
    if os.path.exists(ckpt_path) and os.path.exists(meta_path):
        ckpt = load_checkpoint(ckpt_path)
        model = restore_model(ckpt, build_model(cfg.model, seed=cfg.seed))
        with open(meta_path) as f:
            meta = json.load(f)
        return TrainResult(model=model, best_state=ckpt,
                           log_rows=[tuple(r) for r in meta["log_rows"]],
                           best_val_dsc=meta["best_val_dsc"],
                           best_epoch=meta["best_epoch"])
    t0 = time.monotonic()
    result = train(cfg, progress=progress)
    wall = time.monotonic() - t0
    save_checkpoint(result.best_state, ckpt_path)
    with open(meta_path, "w") as f:
        json.dump({"log_rows": result.log_rows,
                   "best_val_dsc": result.best_val_dsc,
                   "best_epoch": result.best_epoch,
                   "wall_seconds": wall}, f)
    return result
