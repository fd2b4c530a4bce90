from django.contrib import admin
from import_export.admin import ImportExportModelAdmin

from .models import PredictionRecord
from .records import PredictionRecordResource


class PredictionRecordAdmin(ImportExportModelAdmin, admin.ModelAdmin):
    resource_class = PredictionRecordResource
    list_display = ('timestamp', 'run', 'fold', 'true_label', 'predicted_label', 'fl_probability', 'event_class')
    list_filter = ('run', 'fold', 'true_label', 'predicted_label', 'event_class')


admin.site.register(PredictionRecord, PredictionRecordAdmin)
