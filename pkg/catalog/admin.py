from django.contrib import admin
from import_export.admin import ImportExportModelAdmin

from .models import FlareEvent, LabeledSample
from .resources import FlareEventResource, LabeledSampleResource


class FlareEventAdmin(ImportExportModelAdmin, admin.ModelAdmin):
    resource_class = FlareEventResource
    list_display = ('class_label', 'peak_time', 'peak_flux', 'hgs_latitude', 'hgs_longitude', 'noaa_ar')
    list_filter = ('class_label',)
    date_hierarchy = 'peak_time'


class LabeledSampleAdmin(ImportExportModelAdmin, admin.ModelAdmin):
    resource_class = LabeledSampleResource
    list_display = ('timestamp', 'label', 'partition', 'responsible_event', 'tie')
    list_filter = ('label', 'partition', 'tie')
    raw_id_fields = ('responsible_event',)


admin.site.register(FlareEvent, FlareEventAdmin)
admin.site.register(LabeledSample, LabeledSampleAdmin)
