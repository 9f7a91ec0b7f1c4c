"""Variant x seed ablation over the hybrid training loop.

The five rows mirror the component ablation: the self-training base, each
fusion variant, regional weights alone, and fusion plus regional weights.
"""

from __future__ import annotations

import csv
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .errors import ConfigError
from .pipeline import resolve_datasets, train

log = logging.getLogger(__name__)

VARIANTS = {
    "Base": {"fusion_variant": "none", "prw_enabled": False},
    "Base+DDF(cnn)": {"fusion_variant": "cnn", "prw_enabled": False},
    "Base+DDF(efficient)": {"fusion_variant": "efficient", "prw_enabled": False},
    "Base+PRW": {"fusion_variant": "none", "prw_enabled": True},
    "Base+DDF+PRW": {"fusion_variant": "efficient", "prw_enabled": True},
}

SOURCE_ONLY = {"fusion_variant": "none", "prw_enabled": False, "target_loss_weight": 0.0}


@dataclass
class AblationSpec:
    base: RunConfig
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    report_dir: str = "ablation"
    variants: dict = field(default_factory=lambda: dict(VARIANTS))

    def __post_init__(self):
        if len(self.seeds) < 3:
            raise ConfigError("ablation needs at least 3 seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("ablation seeds must be distinct")


@dataclass
class AblationRow:
    variant: str
    miou: list
    mf1: list

    @property
    def mean(self) -> float:
        return statistics.fmean(self.miou)

    @property
    def stdev(self) -> float:
        return statistics.stdev(self.miou) if len(self.miou) > 1 else 0.0

    @property
    def mf1_mean(self) -> float:
        return statistics.fmean(self.mf1)


def variant_config(base: RunConfig, overrides: dict, seed: int, out_dir: Path) -> RunConfig:
    return base.replace(seed=seed, output_dir=str(out_dir), **overrides)


def run_ablation(spec: AblationSpec, datasets=None, figures: bool = True) -> list[AblationRow]:
    """Train every variant for every seed and write the report twins.

    Outputs in ``spec.report_dir``: ``ablation.csv``, ``ablation.md``,
    ``ablation.png`` and one run directory per ``(variant, seed)``.
    """
    out = Path(spec.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    if datasets is None:
        datasets = resolve_datasets(spec.base)
    rows = []
    for name, overrides in spec.variants.items():
        mious, mf1s = [], []
        for seed in spec.seeds:
            run_dir = out / "runs" / f"{_slug(name)}_seed{seed}"
            cfg = variant_config(spec.base, overrides, seed, run_dir)
            res = train(cfg, datasets=datasets, figures=False)
            mious.append(res.report.miou)
            mf1s.append(res.report.mf1)
            log.info("%s seed %d: mIoU %.4f", name, seed, res.report.miou)
        rows.append(AblationRow(name, mious, mf1s))
    write_reports(rows, spec.seeds, out)
    if figures:
        from . import plotting

        plotting.plot_ablation([(r.variant, r.miou) for r in rows], out / "ablation.png")
    return rows


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_").lower()


def write_reports(rows: list[AblationRow], seeds, out: Path) -> None:
    header = ["variant"] + [f"seed_{s}" for s in seeds] + ["mean", "stdev"]
    with (out / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([r.variant] + [f"{v:.6f}" for v in r.miou] + [f"{r.mean:.6f}", f"{r.stdev:.6f}"])
    lines = [
        "| Variant | " + " | ".join(f"seed {s}" for s in seeds) + " | mIoU (mean ± sd) | mF1 (mean) |",
        "|---" * (len(seeds) + 3) + "|",
    ]
    for r in rows:
        cells = " | ".join(f"{100 * v:.2f}" for v in r.miou)
        lines.append(
            f"| {r.variant} | {cells} | {100 * r.mean:.2f} ± {100 * r.stdev:.2f} | {100 * r.mf1_mean:.2f} |"
        )
    (out / "ablation.md").write_text("\n".join(lines) + "\n")


def read_report(path) -> list[list[str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.reader(fh))
