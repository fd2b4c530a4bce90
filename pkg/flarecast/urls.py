"""
URL configuration for flarecast.

The pipeline is driven from management commands; the admin is the only web
surface, for browsing the event catalog, labeled samples and predictions.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
