"""Pre-warm the acceptance-test training cache.

Usage: python3 scripts/precompute.py [seed ...]
Trains the four ablation variants of the desk profile for each seed given
(default: 0 1 2) through the same cached_train helper the test suite uses,
so the subsequent pytest run reuses the results.
"""

import os
import sys
import time
from dataclasses import replace

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                "tests"))

from conftest import cached_train, run_key
from daunet.config import desk_profile
from daunet.experiments import ABLATION_ORDER, ablation_configs
from daunet.trainer import evaluate, generate_dataset


def main(argv):
    seeds = [int(a) for a in argv] or [0, 1, 2]
    base = desk_profile()
    _, _, test, _ = generate_dataset(base.data, base.n_train, base.n_val, base.n_test)
    for seed in seeds:
        for cfg in ablation_configs(replace(base, seed=seed)):
            b = cfg.model.use_deform_bottleneck
            s = cfg.model.use_simam
            tag = f"desk_s{seed}_b{int(b)}a{int(s)}"
            t0 = time.time()
            result = cached_train(cfg, tag)
            report = evaluate(result.model, test, batch_size=cfg.batch_size)
            print(f"{tag} key={run_key(cfg)} best_val={result.best_val_dsc:.4f} "
                  f"test_dsc={report.mean_dsc:.4f} hd95={report.mean_hd95:.3f} "
                  f"asd={report.mean_asd:.3f} params={result.model.param_count()} "
                  f"({time.time() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    main(sys.argv[1:])
