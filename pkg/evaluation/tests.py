import json
import random
import tempfile
from collections import Counter
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from catalog.models import FlareEvent, LabeledSample
from flarecast.exceptions import DataError, UndefinedScoreError

from .models import PredictionRecord
from .records import make_record, read_records, write_records
from .reports import (CrossValidationSummary, SkillReport, build_skill_report,
                      cross_validation_summary, load_report)
from .scores import (ConfusionMatrix, aggregate_ar_probability, format_recall, hss, recall,
                     tss)
from .spatial import GRID_CELLS, cell_bounds, cell_index, spatial_recall_grid
from .subgroups import CENTRAL, COMBINED, NEAR_LIMB, OVERALL, subgroup_recall_table

T0 = datetime(2015, 1, 1, tzinfo=timezone.utc)


def fl_record(letter, lon, hit, lat=10.0, n=0):
    return PredictionRecord(
        timestamp=T0 + timedelta(hours=n), true_label='FL', predicted_label='FL' if hit else 'NF',
        fl_probability=0.9 if hit else 0.1, event_class=letter, hgs_latitude=lat, hgs_longitude=lon,
    )


def nf_record(hit, n=0):
    return PredictionRecord(
        timestamp=T0 + timedelta(hours=n), true_label='NF', predicted_label='NF' if hit else 'FL',
        fl_probability=0.1 if hit else 0.9,
    )


def table_one_records():
    """FL records reproducing the published central / near-limb counts."""
    counts = {
        ('X', 0.0): (597, 71),
        ('M', 0.0): (4464, 1366),
        ('X', 80.0): (164, 48),
        ('M', -85.0): (1197, 1093),
    }
    records = []
    for (letter, lon), (tp, fn) in counts.items():
        records += [fl_record(letter, lon, True) for _ in range(tp)]
        records += [fl_record(letter, lon, False) for _ in range(fn)]
    return records


class SkillScoreTests(SimpleTestCase):
    def test_tss_examples(self):
        self.assertEqual(tss(ConfusionMatrix(tp=5, fp=0, tn=7, fn=0)), 1.0)
        self.assertEqual(tss(ConfusionMatrix(tp=10, fp=5, tn=5, fn=10)), 0.0)
        self.assertAlmostEqual(tss(ConfusionMatrix(tp=3, fp=2, tn=4, fn=1)), 0.75 - 1 / 3, places=12)

    def test_tss_undefined_without_a_class(self):
        with self.assertRaises(UndefinedScoreError):
            tss(ConfusionMatrix(tp=0, fp=2, tn=4, fn=0))
        with self.assertRaises(UndefinedScoreError):
            tss(ConfusionMatrix(tp=3, fp=0, tn=0, fn=1))

    def test_hss_examples(self):
        self.assertEqual(hss(ConfusionMatrix(tp=5, fp=0, tn=7, fn=0)), 1.0)
        self.assertEqual(hss(ConfusionMatrix(tp=0, fp=0, tn=7, fn=3)), 0.0)
        self.assertAlmostEqual(hss(ConfusionMatrix(tp=3, fp=2, tn=4, fn=1)), 0.4, places=12)
        with self.assertRaises(UndefinedScoreError):
            hss(ConfusionMatrix())

    def test_negative_counts_rejected(self):
        with self.assertRaises(DataError):
            ConfusionMatrix(tp=-1)

    def test_balanced_tss_equals_hss(self):
        rng = np.random.default_rng(11)
        for _ in range(2000):
            size = int(rng.integers(1, 500))
            tp, tn = int(rng.integers(0, size + 1)), int(rng.integers(0, size + 1))
            cm = ConfusionMatrix(tp=tp, fp=size - tn, tn=tn, fn=size - tp)
            self.assertAlmostEqual(tss(cm), hss(cm), delta=1e-12)

    def test_recall(self):
        self.assertEqual(round(recall(597, 71), 2), 0.89)
        self.assertEqual(round(recall(1197, 1093), 2), 0.52)
        self.assertEqual(round(recall(5061, 1437), 2), 0.78)
        self.assertIsNone(recall(0, 0))
        self.assertEqual(format_recall(recall(0, 0)), 'NA')
        self.assertEqual(format_recall(recall(0, 4)), '0.00')

    def test_matches_single_pass_recount(self):
        rng = random.Random(5)
        for _ in range(10000):
            pairs = [(rng.choice('FN'), rng.choice('FN')) for _ in range(rng.randint(1, 25))]
            labels = [('FL' if t == 'F' else 'NF', 'FL' if p == 'F' else 'NF') for t, p in pairs]
            tally = Counter(labels)
            cm = ConfusionMatrix.from_labels(labels)
            self.assertEqual(
                (cm.tp, cm.fp, cm.tn, cm.fn),
                (tally[('FL', 'FL')], tally[('NF', 'FL')], tally[('NF', 'NF')], tally[('FL', 'NF')]),
            )
            self.assertEqual(cm.total, len(labels))
            p, n = cm.tp + cm.fn, cm.tn + cm.fp
            if p and n:
                self.assertAlmostEqual(tss(cm), tally[('FL', 'FL')] / p - tally[('NF', 'FL')] / n, places=12)

    def test_order_does_not_matter(self):
        records = [fl_record('M', 10, i % 3 == 0, n=i) for i in range(30)]
        records += [nf_record(i % 4 != 0, n=i) for i in range(50)]
        before = build_skill_report(records)
        random.Random(2).shuffle(records)
        after = build_skill_report(records)
        self.assertEqual(before.confusion, after.confusion)
        self.assertEqual(before.subgroups.as_dict(), after.subgroups.as_dict())


class AggregateProbabilityTests(SimpleTestCase):
    def test_examples(self):
        self.assertAlmostEqual(aggregate_ar_probability([0.3]), 0.3)
        self.assertAlmostEqual(aggregate_ar_probability([0.5, 0.5]), 0.75)
        self.assertEqual(aggregate_ar_probability([0.2, 1.0, 0.4]), 1.0)
        self.assertEqual(aggregate_ar_probability([]), 0.0)

    def test_out_of_range(self):
        with self.assertRaises(DataError):
            aggregate_ar_probability([0.2, 1.5])
        with self.assertRaises(DataError):
            aggregate_ar_probability([float('nan')])


class SubgroupTableTests(SimpleTestCase):
    def test_published_counts(self):
        table = subgroup_recall_table(table_one_records() + [nf_record(True, n=i) for i in range(10)])
        central = [round(table.recall(row, CENTRAL), 2) for row in ('X', 'M', COMBINED)]
        limb = [round(table.recall(row, NEAR_LIMB), 2) for row in ('X', 'M', COMBINED)]
        self.assertEqual(central, [0.89, 0.77, 0.78])
        self.assertEqual(limb, [0.77, 0.52, 0.54])
        self.assertEqual((table.tp(COMBINED, CENTRAL), table.fn(COMBINED, CENTRAL)), (5061, 1437))
        self.assertEqual((table.tp(COMBINED, NEAR_LIMB), table.fn(COMBINED, NEAR_LIMB)), (1361, 1141))
        self.assertEqual(round(table.recall('X', OVERALL), 2), 0.86)
        self.assertEqual(round(table.recall('M', OVERALL), 2), 0.70)
        self.assertIn('Total (X&M)', table.render())

    def test_central_band_only(self):
        table = subgroup_recall_table([fl_record('X', 0.0, True), fl_record('M', 0.0, False)])
        for row in ('X', 'M', COMBINED):
            self.assertIsNone(table.recall(row, NEAR_LIMB))
        self.assertIn('NA', table.render())

    def test_seventy_degrees_is_central(self):
        table = subgroup_recall_table([fl_record('M', 70.0, True), fl_record('M', -70.0, True),
                                       fl_record('M', 70.5, True)])
        self.assertEqual(table.tp('M', CENTRAL), 2)
        self.assertEqual(table.tp('M', NEAR_LIMB), 1)

    def test_unlocated_bucket(self):
        record = fl_record('X', None, True)
        record.hgs_latitude = None
        table = subgroup_recall_table([record, fl_record('X', 5.0, False)])
        self.assertEqual(table.unlocated['X']['tp'], 1)
        self.assertEqual(table.tp('X', CENTRAL), 0)
        self.assertEqual(table.recall('X', OVERALL), 0.5)

    def test_fl_record_needs_class(self):
        with self.assertRaises(DataError):
            subgroup_recall_table([fl_record('', 0.0, True)])


class SpatialGridTests(SimpleTestCase):
    def test_cell_arithmetic(self):
        self.assertEqual(cell_bounds(*cell_index(0.0, 0.0)), ((0.0, 5.0), (0.0, 5.0)))
        self.assertEqual(cell_bounds(*cell_index(12.0, -63.0)), ((10.0, 15.0), (-65.0, -60.0)))
        self.assertEqual(cell_index(-90.0, 90.0), (0, GRID_CELLS - 1))
        self.assertEqual(cell_index(90.0, -90.0), (GRID_CELLS - 1, 0))

    def test_out_of_range_rejected(self):
        with self.assertRaises(DataError):
            cell_index(10.0, 91.0)

    def test_record_error_names_record(self):
        with self.assertRaisesMessage(DataError, '2015-01-01'):
            spatial_recall_grid([fl_record('M', 95.0, True)])

    def test_mixed_cell_recall(self):
        grid = spatial_recall_grid([fl_record('M', 1.0, True, lat=1.0), fl_record('M', 2.0, False, lat=3.0)])
        i, j = cell_index(1.0, 1.0)
        self.assertEqual(grid.recall('M', i, j), 0.5)
        self.assertIsNone(grid.recall('X', i, j))
        self.assertIsNone(grid.recall('M', 0, 0))

    def test_conservation(self):
        rng = np.random.default_rng(9)
        records = [fl_record(rng.choice(['X', 'M']), float(rng.uniform(-90, 90)), bool(rng.random() < 0.7),
                             lat=float(rng.uniform(-40, 40))) for _ in range(500)]
        grid = spatial_recall_grid(records + [nf_record(False)])
        letters = Counter(r.event_class for r in records)
        self.assertEqual(grid.totals('X'), letters['X'])
        self.assertEqual(grid.totals('M'), letters['M'])
        self.assertEqual(grid.totals(COMBINED), 500)

    def test_export_marks_empty_cells(self):
        grid = spatial_recall_grid([fl_record('X', 12.0, False, lat=-33.0)])
        dataset = grid.to_dataset()
        self.assertEqual(len(dataset), 3 * GRID_CELLS * GRID_CELLS)
        self.assertEqual(dataset.headers, ['lat_bin', 'lon_bin', 'subclass', 'tp', 'fn', 'recall'])
        rows = {(r[0], r[1], r[2]): r for r in dataset}
        self.assertEqual(rows[(-35, 10, 'X')][3:], (0, 1, '0.0'))
        self.assertEqual(rows[(0, 0, 'X')][5], 'NA')
        self.assertEqual(grid.zero_hit_cells('X'), [cell_index(-33.0, 12.0)])
        self.assertTrue(np.isnan(grid.recall_map('M')).all())


class CrossValidationTests(SimpleTestCase):
    def report(self, tp, fp, fold, positives=100, negatives=100):
        return SkillReport(ConfusionMatrix(tp=tp, fp=fp, tn=negatives - fp, fn=positives - tp),
                           subgroup_recall_table([]), fold=fold)

    def test_mean_of_folds(self):
        reports = [self.report(70, 30, 1), self.report(70, 20, 2), self.report(75, 20, 3), self.report(79, 20, 4)]
        summary = cross_validation_summary(reports)
        self.assertAlmostEqual(summary.mean_tss, 0.51, places=12)
        self.assertEqual([round(e['tss'], 2) for e in summary.per_fold], [0.4, 0.5, 0.55, 0.59])

    def test_single_and_identical_folds(self):
        single = cross_validation_summary([self.report(60, 10, 1)])
        self.assertAlmostEqual(single.mean_tss, 0.5)
        same = cross_validation_summary([self.report(60, 10, k) for k in (1, 2, 3)])
        self.assertEqual(same.std_tss, 0.0)
        self.assertEqual(same.std_hss, 0.0)

    def test_undefined_fold_is_flagged(self):
        summary = cross_validation_summary([self.report(60, 10, 1), self.report(0, 10, 2, positives=0)])
        self.assertEqual(summary.excluded, [2])
        self.assertAlmostEqual(summary.mean_tss, 0.5)
        self.assertIn('excluded folds', summary.render())
        with self.assertRaises(UndefinedScoreError):
            cross_validation_summary([self.report(0, 10, 1, positives=0)])
        with self.assertRaises(DataError):
            cross_validation_summary([])


class ReportFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_skill_report_round_trip(self):
        records = table_one_records()[:500] + [nf_record(i % 5 != 0, n=i) for i in range(400)]
        report = build_skill_report(records, threshold=0.5, config={'seed': 1})
        loaded = load_report(report.save(self.dir / 'report.json'))
        self.assertIsInstance(loaded, SkillReport)
        self.assertEqual(loaded.confusion, report.confusion)
        self.assertEqual(loaded.config, {'seed': 1})
        self.assertEqual(loaded.render(), report.render())

    def test_saved_report_has_no_wall_clock_field(self):
        records = [fl_record('X', 0, True), nf_record(True)]
        first = build_skill_report(records, fold=1).save(self.dir / 'a.json').read_bytes()
        second = build_skill_report(records, fold=1).save(self.dir / 'b.json').read_bytes()
        self.assertEqual(first, second)
        self.assertNotIn('created', json.loads(first))

    def test_summary_round_trip(self):
        summary = cross_validation_summary([
            build_skill_report([fl_record('X', 0, True), nf_record(True)], fold=1),
            build_skill_report([fl_record('M', 80, False), fl_record('M', 80, True), nf_record(False)], fold=2),
        ])
        loaded = load_report(summary.save(self.dir / 'crossval.json'))
        self.assertIsInstance(loaded, CrossValidationSummary)
        self.assertEqual(loaded.render(), summary.render())

    def test_threshold_recorded_in_report_must_match_records(self):
        record = fl_record('X', 0, True)
        record.fl_probability = 0.6
        with self.assertRaises(DataError):
            build_skill_report([record], threshold=0.7)

    def test_records_file_round_trip(self):
        event = FlareEvent(start_time=T0, peak_time=T0 + timedelta(hours=2), peak_flux=2.1e-5,
                           class_label='M2.1', hgs_latitude=-14.0, hgs_longitude=77.0)
        samples = [
            LabeledSample(timestamp=T0, label='FL', partition=1, responsible_event=event),
            LabeledSample(timestamp=T0 + timedelta(hours=1), label='NF', partition=1),
        ]
        records = [make_record(samples[0], 0.93, fold=2), make_record(samples[1], 0.25, fold=2)]
        self.assertEqual(records[0].event_class, 'M')
        path = write_records(records, self.dir / 'records.csv')
        self.assertTrue(path.read_text().startswith('timestamp,true,pred,prob,class,lat,lon,fold'))
        loaded = read_records(path)
        self.assertEqual([(r.true_label, r.predicted_label, r.fl_probability) for r in loaded],
                         [('FL', 'FL', 0.93), ('NF', 'NF', 0.25)])
        self.assertEqual(loaded[0].hgs_longitude, 77.0)
        self.assertIsNone(loaded[1].hgs_latitude)
