"""Rate-limited, caching client for full-disk magnetograms from the Helioviewer API."""
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from io import BytesIO
from pathlib import Path
from typing import Iterable, List, Optional

import requests
import tablib
from django.conf import settings
from django.utils.dateparse import parse_datetime
from PIL import Image
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from catalog.resources import ISO_UTC
from flarecast.exceptions import CatalogError, FetchError

from .datasets import image_name

logger = logging.getLogger(__name__)

FETCH_HEADERS = ('requested', 'observed', 'image_ref', 'status', 'image_scale', 'error')
OK, CACHED, MISSING = 'ok', 'cached', 'missing'
RETRY_STATUSES = (429, 500, 502, 503, 504)


@dataclass(frozen=True)
class FetchSpec:
    """Where and how to fetch; defaults come from the FLARECAST settings."""

    cache_dir: Path
    base_url: str
    source_id: int
    size: int = 512
    spacing: float = 1.0
    retries: int = 3
    timeout: float = 30.0
    max_in_flight: int = 4

    @classmethod
    def from_settings(cls, **overrides) -> 'FetchSpec':
        conf = settings.FLARECAST
        values = dict(
            cache_dir=Path(conf['CACHE_DIR']),
            base_url=conf['HELIOVIEWER_URL'],
            source_id=conf['HELIOVIEWER_SOURCE_ID'],
            size=conf['IMAGE_SIZE'],
            spacing=conf['REQUEST_SPACING'],
            retries=conf['REQUEST_RETRIES'],
            timeout=conf['REQUEST_TIMEOUT'],
            max_in_flight=conf['MAX_IN_FLIGHT'],
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        values['cache_dir'] = Path(values['cache_dir'])
        return cls(**values)


@dataclass(frozen=True)
class FetchResult:
    requested: datetime
    status: str
    observed: Optional[datetime] = None
    image_ref: str = ''
    image_scale: Optional[float] = None
    error: str = ''

    @property
    def available(self) -> bool:
        return self.status != MISSING

    def as_row(self):
        return (
            self.requested.strftime(ISO_UTC),
            self.observed.strftime(ISO_UTC) if self.observed else '',
            self.image_ref,
            self.status,
            '' if self.image_scale is None else repr(self.image_scale),
            self.error,
        )

    def as_dict(self):
        return dict(zip(FETCH_HEADERS, self.as_row()))

    @classmethod
    def from_dict(cls, row, line=None) -> 'FetchResult':
        requested = parse_datetime(row['requested'] or '')
        if requested is None:
            raise CatalogError(f"bad requested time {row['requested']!r}", line=line)
        if row['status'] not in (OK, CACHED, MISSING):
            raise CatalogError(f"unknown status {row['status']!r}", line=line)
        observed = parse_datetime(row['observed']) if row['observed'] else None
        try:
            scale = float(row['image_scale']) if row['image_scale'] else None
        except ValueError:
            raise CatalogError(f"bad image scale {row['image_scale']!r}", line=line) from None
        return cls(requested, row['status'], observed, row['image_ref'], scale, row['error'])


def build_session(retries: int) -> requests.Session:
    """Session retrying connection errors and 429/5xx with exponential backoff."""
    retry = Retry(
        total=retries,
        backoff_factor=1.0,
        status_forcelist=RETRY_STATUSES,
        allowed_methods=('GET',),
        raise_on_status=False,
    )
    session = requests.Session()
    session.mount('https://', HTTPAdapter(max_retries=retry))
    session.mount('http://', HTTPAdapter(max_retries=retry))
    session.headers.update({'Accept': 'application/json', 'User-Agent': 'flarecast/1.0'})
    return session


def observation_path(image_path) -> Path:
    """Sidecar next to a cached image holding its observed time and image scale."""
    return Path(image_path).with_suffix('.json')


def write_observation(image_path, observed: datetime, image_scale: float) -> Path:
    path = observation_path(image_path)
    path.write_text(json.dumps({'observed': observed.strftime(ISO_UTC), 'image_scale': image_scale}),
                    encoding='utf-8')
    return path


def read_observation(image_path):
    """(observed, image_scale) recorded when the image was fetched; (None, None) if unknown."""
    path = observation_path(image_path)
    if not path.exists():
        return None, None
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
        observed = parse_datetime(data['observed'])
        scale = float(data['image_scale'])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        logger.warning("ignoring unreadable observation record %s: %s", path, exc)
        return None, None
    return observed, scale


class HelioviewerClient:
    """Nearest-in-time magnetogram per timestamp, cached as 8-bit gray PNG."""

    def __init__(self, spec: FetchSpec, session: Optional[requests.Session] = None):
        self.spec = spec
        self.session = session or build_session(spec.retries)
        self._lock = threading.Lock()
        self._last_request = 0.0

    def _throttle(self):
        with self._lock:
            wait = self._last_request + self.spec.spacing - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_request = time.monotonic()

    def _get(self, endpoint: str, params) -> requests.Response:
        self._throttle()
        url = f"{self.spec.base_url.rstrip('/')}/{endpoint}/"
        try:
            response = self.session.get(url, params=params, timeout=self.spec.timeout)
            response.raise_for_status()
        except requests.RequestException as exc:
            raise FetchError(f"{endpoint}: {exc}") from exc
        return response

    def closest_image(self, t: datetime) -> dict:
        response = self._get('getClosestImage', {
            'date': t.strftime('%Y-%m-%dT%H:%M:%S.000Z'),
            'sourceId': self.spec.source_id,
        })
        try:
            info = response.json()
        except ValueError as exc:
            raise FetchError(f"getClosestImage returned non-JSON: {exc}") from exc
        if not isinstance(info, dict):
            raise FetchError(f"getClosestImage returned {type(info).__name__}, not an object")
        if 'error' in info or 'date' not in info:
            raise FetchError(f"getClosestImage: {info.get('error', 'no image date in response')}")
        return info

    def screenshot(self, observed: datetime, image_scale: float) -> bytes:
        response = self._get('takeScreenshot', {
            'date': observed.strftime('%Y-%m-%dT%H:%M:%S.000Z'),
            'imageScale': image_scale,
            'layers': f"[{self.spec.source_id},1,100]",
            'x0': 0,
            'y0': 0,
            'width': self.spec.size,
            'height': self.spec.size,
            'display': 'true',
            'watermark': 'false',
        })
        return response.content

    def cached_path(self, t: datetime) -> Path:
        return self.spec.cache_dir / image_name(t)

    def fetch(self, t: datetime) -> FetchResult:
        """Image for requested time ``t``; a cached file short-circuits the network."""
        path = self.cached_path(t)
        if path.exists() and path.stat().st_size > 0:
            observed, scale = read_observation(path)
            return FetchResult(t, CACHED, observed=observed, image_ref=path.name, image_scale=scale)
        try:
            observed, scale = self._observation(self.closest_image(t))
            payload = self.screenshot(observed, scale)
            self._store(payload, path)
        except FetchError as exc:
            logger.warning("fetch %s failed: %s", t.strftime(ISO_UTC), exc)
            return FetchResult(t, MISSING, error=str(exc))
        write_observation(path, observed, scale)
        logger.info("fetched %s (observed %s)", t.strftime(ISO_UTC), observed.strftime(ISO_UTC))
        return FetchResult(t, OK, observed=observed, image_ref=path.name, image_scale=scale)

    def _observation(self, info: dict):
        """(observed time, image scale for the requested frame) from a getClosestImage payload."""
        try:
            observed = parse_datetime(info['date'].replace(' ', 'T'))
            if observed is None:
                raise FetchError(f"unreadable observation time {info['date']!r}")
            if observed.tzinfo is None:
                observed = observed.replace(tzinfo=timezone.utc)
            # Full disk into the requested frame, at the service's native scale otherwise.
            scale = float(info.get('scale', 0.6)) * float(info.get('width', 4096)) / self.spec.size
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise FetchError(f"getClosestImage: malformed response {info!r}: {exc}") from exc
        if not scale > 0:
            raise FetchError(f"getClosestImage: image scale {scale} is not positive")
        return observed, scale

    def _store(self, payload: bytes, path: Path):
        try:
            with Image.open(BytesIO(payload)) as image:
                gray = image.convert('L')
                if gray.size != (self.spec.size, self.spec.size):
                    gray = gray.resize((self.spec.size, self.spec.size), Image.Resampling.BILINEAR)
        except OSError as exc:
            raise FetchError(f"response is not an image: {exc}") from exc
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix('.part')
        gray.save(tmp, format='PNG')
        tmp.replace(path)

    def fetch_all(self, timestamps: Iterable[datetime]) -> List[FetchResult]:
        """Fetch with at most ``max_in_flight`` concurrent requests; results keep request order."""
        timestamps = list(timestamps)
        with ThreadPoolExecutor(max_workers=max(1, self.spec.max_in_flight)) as pool:
            return list(pool.map(self.fetch, timestamps))


def write_fetch_manifest(results: Iterable[FetchResult], path) -> Path:
    dataset = tablib.Dataset(headers=FETCH_HEADERS)
    for result in results:
        dataset.append(result.as_row())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dataset.export('csv'), encoding='utf-8')
    logger.info("wrote fetch manifest %s (%d rows)", path, len(dataset))
    return path


def read_fetch_manifest(path) -> List[FetchResult]:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as exc:
        raise CatalogError(f"cannot read fetch manifest {path}: {exc}") from exc
    dataset = tablib.Dataset().load(text, format='csv')
    missing = [h for h in FETCH_HEADERS if h not in (dataset.headers or [])]
    if missing:
        raise CatalogError(f"{path}: missing columns {', '.join(missing)}", line=1)
    return [FetchResult.from_dict(row, line=line) for line, row in enumerate(dataset.dict, start=2)]
