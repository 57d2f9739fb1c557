"""Ablation and quadrant-robustness experiment drivers.

run_ablation trains the four (bottleneck, simam) flag combinations on shared
seed and data and reports test-set DSC/HD95/ASD plus parameter counts, one row
per combination. run_robustness compares two trained models on clean inputs
versus each zeroed quadrant and reports the DSC drop per condition, exporting
the deformable bottleneck's offset fields along the way.
"""

import csv
import os
from dataclasses import dataclass, replace

from .deform import export_offsets
from .phantoms import QUADRANTS, quadrant_mask
from .tensor import no_grad
from .trainer import batch_tensors, evaluate, generate_dataset, train

# Row order mirrors the ablation table: baseline first, both additions last.
ABLATION_ORDER = ((False, False), (False, True), (True, False), (True, True))

ABLATION_HEADER = ["bottleneck", "simam", "dsc", "hd95", "asd", "param"]
ROBUSTNESS_HEADER = ["model", "condition", "mean_dsc", "drop"]

CONDITIONS = ("clean",) + QUADRANTS


@dataclass(frozen=True)
class AblationRow:
    bottleneck: bool
    simam: bool
    dsc: float
    hd95: float
    asd: float
    param: int


@dataclass(frozen=True)
class RobustnessRow:
    model: str
    condition: str
    mean_dsc: float
    drop: float


def ablation_configs(base_cfg):
    """The four flag combinations of base_cfg, in table order."""
    out = []
    for bottleneck, simam in ABLATION_ORDER:
        model_cfg = replace(base_cfg.model, use_deform_bottleneck=bottleneck,
                            use_simam=simam)
        out.append(replace(base_cfg, model=model_cfg))
    return out


def run_ablation(base_cfg, progress=None):
    """Train all four variants on shared seed/data; returns table-order rows."""
    _, _, test, _ = generate_dataset(base_cfg.data, base_cfg.n_train,
                                     base_cfg.n_val, base_cfg.n_test)
    rows = []
    for cfg in ablation_configs(base_cfg):
        flags = (cfg.model.use_deform_bottleneck, cfg.model.use_simam)
        if progress is not None:
            progress(f"training bottleneck={flags[0]} simam={flags[1]}")
        result = train(cfg)
        report = evaluate(result.model, test, batch_size=cfg.batch_size)
        rows.append(AblationRow(
            bottleneck=flags[0], simam=flags[1],
            dsc=report.mean_dsc, hd95=report.mean_hd95, asd=report.mean_asd,
            param=result.model.param_count()))
    return rows


def write_ablation_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ABLATION_HEADER)
        for r in rows:
            w.writerow([str(r.bottleneck).lower(), str(r.simam).lower(),
                        repr(float(r.dsc)), repr(float(r.hd95)),
                        repr(float(r.asd)), r.param])
    return path


def read_ablation_csv(path):
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ABLATION_HEADER:
            raise ValueError(f"unexpected ablation header {header}")
        for rec in reader:
            rows.append(AblationRow(
                bottleneck=rec[0] == "true", simam=rec[1] == "true",
                dsc=float(rec[2]), hd95=float(rec[3]), asd=float(rec[4]),
                param=int(rec[5])))
    return rows


def _masked(quadrant):
    return lambda x: quadrant_mask(x, quadrant)


def run_robustness(daunet_model, unet_model, samples, offset_dir=None,
                   batch_size=16):
    """Clean-versus-quadrant DSC table for two models over one sample list.

    Returns (rows, offset_files). The clean condition is a plain evaluate()
    pass, so its mean DSC matches standalone evaluation exactly. When
    offset_dir is given, the deformable bottleneck's offsets on the first
    sample are exported per condition as CSV + PGM heatmap pairs.
    """
    rows = []
    for name, model in (("daunet", daunet_model), ("unet", unet_model)):
        clean = evaluate(model, samples, batch_size=batch_size).mean_dsc
        rows.append(RobustnessRow(name, "clean", clean, 0.0))
        for quadrant in QUADRANTS:
            masked = evaluate(model, samples, batch_size=batch_size,
                              corrupt=_masked(quadrant)).mean_dsc
            rows.append(RobustnessRow(name, quadrant, masked, clean - masked))
    offset_files = []
    if offset_dir is not None:
        offset_files = export_condition_offsets(daunet_model, samples[0], offset_dir)
    return rows, offset_files


def export_condition_offsets(model, sample, out_dir):
    """Bottleneck offset fields for one sample under every input condition."""
    model.eval()
    x, _ = batch_tensors([sample])
    files = []
    with no_grad():
        for condition in CONDITIONS:
            inp = x if condition == "clean" else quadrant_mask(x, condition)
            offsets = model.bottleneck_offsets(inp)
            if offsets is None:
                return []
            path_csv = os.path.join(out_dir, f"offsets_{condition.lower()}.csv")
            path_pgm = os.path.join(out_dir, f"offsets_{condition.lower()}.pgm")
            export_offsets(offsets, path_csv, path_pgm)
            files.extend([path_csv, path_pgm])
    return files


def write_robustness_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ROBUSTNESS_HEADER)
        for r in rows:
            w.writerow([r.model, r.condition, repr(float(r.mean_dsc)),
                        repr(float(r.drop))])
    return path


def read_robustness_csv(path):
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ROBUSTNESS_HEADER:
            raise ValueError(f"unexpected robustness header {header}")
        for rec in reader:
            rows.append(RobustnessRow(rec[0], rec[1], float(rec[2]), float(rec[3])))
    return rows


def mean_drop(rows, model):
    """Average DSC drop over the four quadrant conditions for one model."""
    drops = [r.drop for r in rows if r.model == model and r.condition != "clean"]
    if len(drops) != len(QUADRANTS):
        raise ValueError(f"expected {len(QUADRANTS)} quadrant rows for {model!r}, "
                         f"got {len(drops)}")
    return float(sum(drops)) / len(drops)
