from django.core.exceptions import ValidationError
from django.db import models

from .goes import M_THRESHOLD, flare_letter, parse_flare_class


class FlareEvent(models.Model):
    start_time = models.DateTimeField()
    peak_time = models.DateTimeField(db_index=True)
    peak_flux = models.FloatField(help_text='W m^-2')
    class_label = models.CharField(max_length=8)
    hgs_latitude = models.FloatField(null=True, blank=True)
    hgs_longitude = models.FloatField(null=True, blank=True)
    noaa_ar = models.PositiveIntegerField(null=True, blank=True)

    class Meta:
        ordering = ['peak_time', 'start_time']

    def __str__(self):
        return f"{self.class_label} {self.peak_time:%Y-%m-%dT%H:%M}Z"

    @property
    def letter(self):
        return flare_letter(self.peak_flux)

    @property
    def is_flare(self):
        return self.peak_flux >= M_THRESHOLD

    @property
    def is_located(self):
        return self.hgs_latitude is not None and self.hgs_longitude is not None

    def clean(self):
        if not self.peak_flux or self.peak_flux <= 0:
            raise ValidationError({'peak_flux': 'peak flux must be positive'})
        if self.start_time and self.peak_time and self.start_time > self.peak_time:
            raise ValidationError({'start_time': 'start time is after peak time'})
        for field in ('hgs_latitude', 'hgs_longitude'):
            value = getattr(self, field)
            if value is not None and not -90.0 <= value <= 90.0:
                raise ValidationError({field: 'must lie in [-90, 90] degrees'})
        parse_flare_class(self.class_label)


class LabeledSample(models.Model):
    FL = 'FL'
    NF = 'NF'
    LABEL_CHOICES = [
        (FL, 'Flare'),
        (NF, 'No flare'),
    ]

    timestamp = models.DateTimeField(unique=True)
    image_ref = models.CharField(max_length=300, blank=True)
    label = models.CharField(max_length=2, choices=LABEL_CHOICES)
    responsible_event = models.ForeignKey(FlareEvent, on_delete=models.SET_NULL, null=True, blank=True,
                                          related_name='samples')
    partition = models.PositiveSmallIntegerField()
    # Several events shared the window's maximum flux.
    tie = models.BooleanField(default=False)

    class Meta:
        ordering = ['timestamp']

    def __str__(self):
        return f"{self.timestamp:%Y-%m-%dT%H}Z {self.label} p{self.partition}"

    @property
    def target(self):
        """Class index used by the network: FL -> 0, NF -> 1."""
        return 0 if self.label == self.FL else 1
