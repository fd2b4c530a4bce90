from django.db import models


class PredictionRecord(models.Model):
    LABEL_CHOICES = [
        ('FL', 'Flare'),
        ('NF', 'No flare'),
    ]

    run = models.CharField(max_length=100, blank=True, db_index=True)
    fold = models.PositiveSmallIntegerField(default=0)
    timestamp = models.DateTimeField()
    true_label = models.CharField(max_length=2, choices=LABEL_CHOICES)
    predicted_label = models.CharField(max_length=2, choices=LABEL_CHOICES)
    fl_probability = models.FloatField()
    # Responsible event; set for FL records only.
    event_class = models.CharField(max_length=1, blank=True)
    hgs_latitude = models.FloatField(null=True, blank=True)
    hgs_longitude = models.FloatField(null=True, blank=True)

    class Meta:
        ordering = ['run', 'fold', 'timestamp']

    def __str__(self):
        return f"{self.timestamp:%Y-%m-%dT%H}Z {self.true_label}->{self.predicted_label} ({self.fl_probability:.2f})"

    @property
    def is_located(self):
        return self.hgs_latitude is not None and self.hgs_longitude is not None

    @property
    def correct(self):
        return self.true_label == self.predicted_label
