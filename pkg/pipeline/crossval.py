"""Folds over the tri-monthly partitions: train on three, evaluate on the fourth."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from evaluation.records import make_record, write_records
from evaluation.reports import SkillReport, build_skill_report, cross_validation_summary
from evaluation.spatial import spatial_recall_grid
from flarecast.exceptions import DataError, FlarecastError
from network.model import Model
from network.weights import save_weights

from .datasets import ImageSet
from .serializers import RunConfig
from .trainer import TrainingHistory, fl_probabilities, train

logger = logging.getLogger(__name__)

PARTITIONS = (1, 2, 3, 4)


@dataclass
class FoldResult:
    partition: int
    model: Model
    history: TrainingHistory
    records: list
    report: SkillReport


def split_fold(images: ImageSet, partition: int):
    """(training, validation) ImageSets; raises if a timestamp lands in both."""
    training = images.select([p for p in PARTITIONS if p != partition])
    validation = images.select([partition])
    shared = {s.timestamp for s in training.samples} & {s.timestamp for s in validation.samples}
    if shared:
        raise DataError(f"fold {partition}: {len(shared)} timestamps in both training and validation")
    if not len(validation):
        raise DataError(f"fold {partition}: validation partition is empty")
    return training, validation


def evaluate_model(model: Model, images: ImageSet, threshold: float, fold: int = 0, run: str = '',
                   config: Optional[dict] = None):
    """One PredictionRecord per image and the SkillReport over them."""
    probabilities = fl_probabilities(model, images.images)
    records = [make_record(sample, p, threshold, fold=fold, run=run)
               for sample, p in zip(images.samples, probabilities)]
    report = build_skill_report(records, threshold=threshold, fold=fold or None, config=config)
    return records, report


def write_evaluation(records, report: SkillReport, out_dir, stem: str = 'validation') -> Path:
    out_dir = Path(out_dir)
    write_records(records, out_dir / f"{stem}_records.csv")
    spatial_recall_grid(records).export(out_dir / f"{stem}_grid.csv")
    return report.save(out_dir / f"{stem}_report.json")


def run_fold(config: RunConfig, images: ImageSet, partition: int, run: str = '') -> FoldResult:
    config = config.for_fold(partition)
    training, validation = split_fold(images, partition)
    logger.info("fold %d: %d training, %d validation images", partition, len(training), len(validation))
    model, history = train(config, training.images, training.targets, validation.images, validation.targets)
    records, report = evaluate_model(model, validation, config.threshold, fold=partition, run=run,
                                     config=config.to_dict())
    return FoldResult(partition, model, history, records, report)


def run_crossval(config: RunConfig, images: ImageSet, out_dir=None, run: str = ''):
    """Every fold in turn; failed folds are logged and left out of the summary."""
    folds: List[FoldResult] = []
    failed = {}
    for partition in PARTITIONS:
        try:
            fold = run_fold(config, images, partition, run=run)
        except FlarecastError as exc:
            logger.error("fold %d failed: %s", partition, exc)
            failed[partition] = str(exc)
            continue
        folds.append(fold)
        if out_dir is not None:
            fold_dir = Path(out_dir) / f"fold{partition}"
            save_weights(fold.model, fold_dir / 'weights.bin')
            fold.history.save(fold_dir / 'history.json')
            write_evaluation(fold.records, fold.report, fold_dir)
    if not folds:
        raise DataError(f"every fold failed: {failed}")
    summary = cross_validation_summary([f.report for f in folds], failed=failed)
    if out_dir is not None:
        summary.save(Path(out_dir) / 'crossval_summary.json')
    return folds, summary
