import logging

from celery import shared_task
from django.utils.dateparse import parse_datetime

from flarecast.exceptions import FetchError

from .helioviewer import MISSING, FetchSpec, HelioviewerClient

logger = logging.getLogger(__name__)


@shared_task(bind=True, retry_backoff=True, max_retries=3)
def fetch_magnetogram(self, timestamp, cache_dir=None):
    """Fetch one magnetogram into the cache; returns its fetch-manifest row.

    HTTP-level retries happen inside the session; a result still missing
    afterwards is retried by the worker with backoff, and reported as
    missing once the retries are used up.
    """
    t = parse_datetime(timestamp)
    if t is None:
        raise FetchError(f"bad timestamp {timestamp!r}")
    result = HelioviewerClient(FetchSpec.from_settings(cache_dir=cache_dir)).fetch(t)
    if result.status == MISSING and self.request.retries < self.max_retries and not self.request.is_eager:
        raise self.retry(exc=FetchError(result.error), countdown=5)
    return result.as_dict()
