"""Skill reports per run or fold, and their cross-validation summary."""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from flarecast.exceptions import DataError, UndefinedScoreError

from .scores import DEFAULT_THRESHOLD, ConfusionMatrix, format_recall, hss, predicted_label, tss
from .subgroups import CLASS_ROWS, OVERALL, SubgroupTable, subgroup_recall_table

logger = logging.getLogger(__name__)


def _score(fn, cm):
    try:
        return fn(cm)
    except UndefinedScoreError as exc:
        logger.warning("%s", exc)
        return None


@dataclass
class SkillReport:
    confusion: ConfusionMatrix
    subgroups: SubgroupTable
    threshold: float = DEFAULT_THRESHOLD
    fold: Optional[int] = None
    config: Dict = field(default_factory=dict)

    @property
    def tss(self) -> Optional[float]:
        return _score(tss, self.confusion)

    @property
    def hss(self) -> Optional[float]:
        return _score(hss, self.confusion)

    def to_dict(self):
        return {
            'fold': self.fold,
            'threshold': self.threshold,
            'confusion': self.confusion.as_dict(),
            'tss': self.tss,
            'hss': self.hss,
            'subgroups': self.subgroups.as_dict(),
            'config': self.config,
        }

    @classmethod
    def from_dict(cls, data) -> 'SkillReport':
        try:
            return cls(
                confusion=ConfusionMatrix(**data['confusion']),
                subgroups=SubgroupTable.from_dict(data['subgroups']),
                threshold=data['threshold'],
                fold=data.get('fold'),
                config=data.get('config', {}),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"not a skill report: missing {exc}") from exc

    def render(self) -> str:
        cm = self.confusion
        title = 'Skill report' if self.fold is None else f"Skill report, fold {self.fold}"
        lines = [
            title,
            f"decision threshold: {self.threshold}",
            f"TP {cm.tp}  FP {cm.fp}  TN {cm.tn}  FN {cm.fn}",
            f"TSS: {_fmt(self.tss)}",
            f"HSS: {_fmt(self.hss)}",
            '',
            self.subgroups.render(),
        ]
        return '\n'.join(lines)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding='utf-8')
        logger.info("skill report for fold %s saved to %s", self.fold, path)
        return path


def _fmt(value, places=4):
    return 'undefined' if value is None else f"{value:.{places}f}"


def build_skill_report(records, threshold: float = DEFAULT_THRESHOLD, fold: Optional[int] = None,
                       config: Optional[Dict] = None) -> SkillReport:
    records = list(records)
    for record in records:
        expected = predicted_label(record.fl_probability, threshold)
        if record.predicted_label != expected:
            raise DataError(
                f"record at {record.timestamp}: predicted {record.predicted_label} "
                f"with probability {record.fl_probability} at threshold {threshold}"
            )
    return SkillReport(
        confusion=ConfusionMatrix.from_records(records),
        subgroups=subgroup_recall_table(records),
        threshold=threshold,
        fold=fold,
        config=config or {},
    )


@dataclass
class CrossValidationSummary:
    per_fold: List[Dict]
    excluded: List[int]
    mean_tss: float
    mean_hss: float
    std_tss: float
    std_hss: float
    pooled: SubgroupTable
    failed: Dict[int, str] = field(default_factory=dict)

    def to_dict(self):
        return {
            'per_fold': self.per_fold,
            'excluded': self.excluded,
            'failed': {str(k): v for k, v in self.failed.items()},
            'mean_tss': self.mean_tss,
            'mean_hss': self.mean_hss,
            'std_tss': self.std_tss,
            'std_hss': self.std_hss,
            'subgroups': self.pooled.as_dict(),
        }

    @classmethod
    def from_dict(cls, data) -> 'CrossValidationSummary':
        try:
            return cls(
                per_fold=list(data['per_fold']),
                excluded=list(data['excluded']),
                mean_tss=data['mean_tss'],
                mean_hss=data['mean_hss'],
                std_tss=data['std_tss'],
                std_hss=data['std_hss'],
                pooled=SubgroupTable.from_dict(data['subgroups']),
                failed={int(k): v for k, v in data.get('failed', {}).items()},
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"not a cross-validation summary: missing {exc}") from exc

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding='utf-8')
        return path

    def render(self) -> str:
        lines = [f"{'fold':>4}  {'TSS':>8}  {'HSS':>8}"]
        for entry in self.per_fold:
            lines.append(f"{entry['fold']:>4}  {_fmt(entry['tss'], 2):>8}  {_fmt(entry['hss'], 2):>8}")
        lines.append(f"{'mean':>4}  {self.mean_tss:>8.2f}  {self.mean_hss:>8.2f}")
        lines.append(f"{'std':>4}  {self.std_tss:>8.2f}  {self.std_hss:>8.2f}")
        if self.excluded:
            lines.append(f"excluded folds (undefined score): {', '.join(map(str, self.excluded))}")
        for fold, reason in sorted(self.failed.items()):
            lines.append(f"fold {fold} failed: {reason}")
        lines += ['', self.pooled.render()]
        overall = ', '.join(f"{row} {format_recall(self.pooled.recall(row, OVERALL))}" for row in CLASS_ROWS)
        lines.append(f"overall recall: {overall}")
        return '\n'.join(lines)


def cross_validation_summary(reports: Sequence[SkillReport], failed: Optional[Dict[int, str]] = None
                             ) -> CrossValidationSummary:
    """Mean and spread of per-fold TSS/HSS; folds with an undefined score are left out."""
    if not reports:
        raise DataError("cross-validation summary needs at least one fold")
    per_fold, excluded = [], []
    for position, report in enumerate(reports, start=1):
        fold = report.fold if report.fold is not None else position
        entry = {'fold': fold, 'tss': report.tss, 'hss': report.hss}
        per_fold.append(entry)
        if entry['tss'] is None or entry['hss'] is None:
            excluded.append(fold)
    kept = [e for e in per_fold if e['fold'] not in excluded]
    if not kept:
        raise UndefinedScoreError("every fold has an undefined skill score")
    tss_values = np.array([e['tss'] for e in kept])
    hss_values = np.array([e['hss'] for e in kept])
    pooled = reports[0].subgroups
    for report in reports[1:]:
        pooled = pooled + report.subgroups
    return CrossValidationSummary(
        per_fold=per_fold,
        excluded=excluded,
        mean_tss=float(tss_values.mean()),
        mean_hss=float(hss_values.mean()),
        std_tss=float(tss_values.std()),
        std_hss=float(hss_values.std()),
        pooled=pooled,
        failed=dict(failed or {}),
    )


def load_report(path):
    """A saved SkillReport or CrossValidationSummary, whichever the file holds."""
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
    if isinstance(data, dict) and 'per_fold' in data:
        return CrossValidationSummary.from_dict(data)
    return SkillReport.from_dict(data)
