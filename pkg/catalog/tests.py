import math
import tempfile
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from autodiff.tensor import Tensor
from flarecast.exceptions import CatalogError, ConfigError, DataError

from .augment import augment, hflip, rotate, vflip
from .goes import flux_to_class, parse_flare_class
from .labeling import (FL, NF, EventIndex, assign_partition, build_samples, class_weights,
                       generate_timeline, label_timestamp, summarize)
from .models import FlareEvent, LabeledSample
from .tables import read_catalog, read_manifest, write_catalog, write_manifest


def utc(*args):
    return datetime(*args, tzinfo=timezone.utc)


def event(peak, label, lat=10.0, lon=-20.0, ar=None):
    return FlareEvent(start_time=peak - timedelta(minutes=12), peak_time=peak,
                      peak_flux=parse_flare_class(label), class_label=label,
                      hgs_latitude=lat, hgs_longitude=lon, noaa_ar=ar)


class FlareClassTests(SimpleTestCase):
    def test_decades(self):
        self.assertEqual(parse_flare_class('M1.0'), 1.0e-5)
        self.assertTrue(math.isclose(parse_flare_class('X2.3'), 2.3e-4))
        self.assertTrue(math.isclose(parse_flare_class('C8.5'), 8.5e-6))
        self.assertTrue(math.isclose(parse_flare_class('A1.0'), 1e-8))

    def test_round_trip_letter(self):
        for letter in 'ABCMX':
            for multiplier in ('1.0', '2.3', '5.5', '9.9'):
                label = f"{letter}{multiplier}"
                self.assertEqual(flux_to_class(parse_flare_class(label)), label)

    def test_rounding_up_to_next_decade(self):
        self.assertEqual(flux_to_class(9.96e-6), 'M1.0')
        self.assertEqual(flux_to_class(1.5e-3), 'X15.0')

    def test_bad_labels(self):
        for label in ('Z1.0', 'M0', 'M-1.0', 'M', '', 'M1.0x'):
            with self.subTest(label=label), self.assertRaises(CatalogError):
                parse_flare_class(label)
        with self.assertRaises(CatalogError):
            flux_to_class(0.0)


class LabelTimestampTests(SimpleTestCase):
    t = utc(2014, 2, 15, 6)

    def test_strongest_event_in_window(self):
        c3 = event(self.t + timedelta(hours=2), 'C3.0')
        m12 = event(self.t + timedelta(hours=10), 'M1.2')
        result = label_timestamp([c3, m12], self.t)
        self.assertEqual(result.label, FL)
        self.assertIs(result.event, m12)
        self.assertFalse(result.tie)

    def test_below_threshold(self):
        result = label_timestamp([event(self.t + timedelta(hours=1), 'C9.9')], self.t)
        self.assertEqual(result.label, NF)
        self.assertEqual(result.event.class_label, 'C9.9')

    def test_empty_window(self):
        result = label_timestamp([event(self.t - timedelta(hours=1), 'X1.0')], self.t)
        self.assertEqual((result.label, result.event), (NF, None))
        self.assertEqual(label_timestamp([], self.t).label, NF)

    def test_window_is_half_open(self):
        at_start = event(self.t, 'M1.0')
        at_end = event(self.t + timedelta(hours=24), 'X5.0')
        self.assertIs(label_timestamp([at_start, at_end], self.t).event, at_start)
        self.assertEqual(label_timestamp([at_end], self.t).label, NF)

    def test_tie_goes_to_earliest_peak(self):
        late = event(self.t + timedelta(hours=5), 'M2.0')
        early = event(self.t + timedelta(hours=3), 'M2.0')
        result = label_timestamp([late, early], self.t)
        self.assertIs(result.event, early)
        self.assertTrue(result.tie)

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(42)
        origin = utc(2012, 1, 1)
        span = 3 * 365 * 86400
        offsets = np.sort(rng.choice(span, size=1000, replace=False))
        letters = rng.choice(list('BCMX'), size=1000)
        multipliers = rng.integers(10, 99, size=1000) / 10
        events = [event(origin + timedelta(seconds=int(s)), f"{l}{m:.1f}")
                  for s, l, m in zip(offsets, letters, multipliers)]
        fluxes = np.array([e.peak_flux for e in events])
        index = EventIndex(events)
        for s in rng.integers(-86400, span, size=10000):
            t = origin + timedelta(seconds=int(s))
            inside = np.flatnonzero((offsets >= s) & (offsets < s + 86400))
            result = label_timestamp(index, t)
            if inside.size == 0:
                self.assertEqual((result.label, result.event), (NF, None))
                continue
            best = inside[np.argmax(fluxes[inside])]
            self.assertIs(result.event, events[best])
            self.assertEqual(result.label, FL if fluxes[best] >= 1e-5 else NF)


class TimelineTests(SimpleTestCase):
    def test_two_days(self):
        self.assertEqual(len(generate_timeline(utc(2010, 12, 1, 0), utc(2010, 12, 2, 23))), 48)

    def test_single_instant(self):
        self.assertEqual(generate_timeline(utc(2011, 3, 1, 5), utc(2011, 3, 1, 5)), [utc(2011, 3, 1, 5)])

    def test_aligned_to_whole_hours(self):
        timeline = generate_timeline(utc(2011, 3, 1, 5, 30), utc(2011, 3, 1, 8))
        self.assertEqual(timeline, [utc(2011, 3, 1, 6), utc(2011, 3, 1, 7), utc(2011, 3, 1, 8)])

    def test_full_study_grid(self):
        grid = generate_timeline(utc(2010, 12, 1, 0), utc(2018, 12, 31, 23))
        self.assertEqual(len(grid), 2953 * 24)
        self.assertGreaterEqual(len(grid), 63649)

    def test_reversed_range(self):
        with self.assertRaises(DataError):
            generate_timeline(utc(2011, 1, 2), utc(2011, 1, 1))

    def test_naive_timestamps_rejected(self):
        with self.assertRaises(DataError):
            generate_timeline(datetime(2011, 1, 1), datetime(2011, 1, 2))


class PartitionTests(SimpleTestCase):
    def test_examples(self):
        self.assertEqual(assign_partition(utc(2014, 2, 15, 6)), 1)
        self.assertEqual(assign_partition(utc(2013, 7, 1, 0)), 3)
        self.assertEqual(assign_partition(utc(2010, 12, 31, 23)), 4)

    def test_partitions_tile_the_year(self):
        months = {p: [m for m in range(1, 13) if assign_partition(utc(2015, m, 1)) == p] for p in (1, 2, 3, 4)}
        self.assertEqual(months, {1: [1, 2, 3], 2: [4, 5, 6], 3: [7, 8, 9], 4: [10, 11, 12]})


class ClassWeightTests(SimpleTestCase):
    def test_direct_formula(self):
        weights = class_weights({FL: 4, NF: 12})
        self.assertEqual(weights[FL], 2.0)
        self.assertAlmostEqual(weights[NF], 0.6667, places=4)

    def test_balanced(self):
        self.assertEqual(class_weights({FL: 7, NF: 7}), {FL: 1.0, NF: 1.0})

    def test_post_augmentation_counts(self):
        weights = class_weights({FL: 36000, NF: 54649})
        self.assertAlmostEqual(weights[FL], 1.259, places=3)
        self.assertAlmostEqual(weights[NF], 0.829, places=3)

    def test_zero_count(self):
        with self.assertRaises(DataError):
            class_weights({FL: 0, NF: 5})


class SummaryTests(SimpleTestCase):
    def test_study_totals(self):
        samples = [LabeledSample(label=FL, partition=1 + i % 4) for i in range(9000)]
        samples += [LabeledSample(label=NF, partition=1 + i % 4) for i in range(54649)]
        summary = summarize(samples)
        self.assertEqual(summary.totals[FL], 9000)
        self.assertEqual(summary.totals[NF], 54649)
        self.assertEqual(round(summary.imbalance), 6)
        self.assertEqual(summary.as_rows()[-1], ('Total', 9000, 54649))

    def test_build_samples_labels_and_partitions(self):
        t0 = utc(2013, 6, 30, 20)
        samples = build_samples([event(utc(2013, 7, 1, 2), 'M3.1')], generate_timeline(t0, t0 + timedelta(hours=6)),
                                image_ref=lambda t: f"{t:%Y%m%d%H}.png")
        self.assertEqual([s.label for s in samples], [FL] * 7)
        self.assertEqual([s.partition for s in samples], [2, 2, 2, 2, 3, 3, 3])
        self.assertEqual(samples[0].image_ref, '2013063020.png')


class AugmentTests(SimpleTestCase):
    def setUp(self):
        self.image = Tensor(np.random.default_rng(1).uniform(-1, 1, size=(1, 9, 12)))

    def test_vflip_is_involution(self):
        np.testing.assert_array_equal(vflip(vflip(self.image)).data, self.image.data)

    def test_hflip_preserves_values(self):
        np.testing.assert_array_equal(np.sort(hflip(self.image).data, axis=None), np.sort(self.image.data, axis=None))

    def test_zero_rotation_is_identity(self):
        np.testing.assert_allclose(rotate(self.image, 0.0).data, self.image.data, atol=1e-6)

    def test_rotation_fills_corners_with_zero(self):
        ones = Tensor(np.ones((1, 32, 32)))
        rotated = rotate(ones, 5.0).data[0]
        self.assertLess(rotated[0, 0], 1.0)
        self.assertAlmostEqual(rotated[16, 16], 1.0, places=6)

    def test_one_output_per_kind_and_deterministic(self):
        first = augment(self.image, ('vflip', 'hflip', 'rotate'), seed=3)
        second = augment(self.image, ('vflip', 'hflip', 'rotate'), seed=3)
        self.assertEqual(len(first), 3)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.data, b.data)

    def test_bad_kinds(self):
        with self.assertRaises(ConfigError):
            augment(self.image, ())
        with self.assertRaises(ConfigError):
            augment(self.image, ('shear',))


class TableFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_catalog_round_trip(self):
        events = [event(utc(2014, 2, 15, 8, 14), 'M1.2', lat=-12.5, lon=61.0, ar=11974),
                  event(utc(2014, 2, 16, 1), 'C4.0', lat=None, lon=None)]
        path = write_catalog(events, self.dir / 'events.csv')
        self.assertTrue(path.read_text().startswith('start_time,peak_time,peak_flux,class,hgs_lat,hgs_lon,noaa_ar'))
        loaded = read_catalog(path)
        self.assertEqual([e.peak_time for e in loaded], [e.peak_time for e in events])
        self.assertEqual([e.peak_flux for e in loaded], [e.peak_flux for e in events])
        self.assertEqual(loaded[0].noaa_ar, 11974)
        self.assertIsNone(loaded[1].hgs_longitude)

    def test_catalog_errors_report_line(self):
        path = self.dir / 'bad.csv'
        path.write_text(
            'start_time,peak_time,peak_flux,class,hgs_lat,hgs_lon,noaa_ar\n'
            '2014-02-15T08:00:00Z,2014-02-15T08:14:00Z,1.2e-05,M1.2,-12,61,\n'
            '2014-02-16T00:00:00Z,2014-02-16T01:00:00Z,4e-06,Q4.0,5,5,\n'
        )
        with self.assertRaisesMessage(CatalogError, 'line 3'):
            read_catalog(path)

    def test_missing_column(self):
        path = self.dir / 'bad.csv'
        path.write_text('start_time,peak_time\n2014-02-15T08:00:00Z,2014-02-15T08:14:00Z\n')
        with self.assertRaisesMessage(CatalogError, 'peak_flux'):
            read_catalog(path)

    def test_manifest_round_trip(self):
        t0 = utc(2014, 2, 15, 0)
        samples = build_samples([event(utc(2014, 2, 15, 8), 'X1.1'), event(utc(2014, 2, 15, 9), 'C2.0')],
                                generate_timeline(t0, t0 + timedelta(hours=10)))
        path = write_manifest(samples, self.dir / 'manifest.csv')
        loaded = read_manifest(path)
        self.assertEqual([s.label for s in loaded], [s.label for s in samples])
        self.assertEqual(loaded[0].responsible_event.class_label, 'X1.1')
        self.assertEqual(loaded[-1].responsible_event, None)
        self.assertEqual(loaded[9].responsible_event.class_label, 'C2.0')
        self.assertEqual(loaded[9].label, NF)
