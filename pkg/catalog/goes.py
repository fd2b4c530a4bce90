"""NOAA/GOES flare classes and their peak X-ray flux (W m^-2)."""
import re

from flarecast.exceptions import CatalogError

FLARE_DECADES = {
    'A': 1e-8,
    'B': 1e-7,
    'C': 1e-6,
    'M': 1e-5,
    'X': 1e-4,
}
# Lower bound of the FL class.
M_THRESHOLD = FLARE_DECADES['M']

_CLASS_RE = re.compile(r'^([A-Za-z])\s*([+-]?(?:\d+(?:\.\d*)?|\.\d+))$')


def parse_flare_class(label: str) -> float:
    """'M1.2' -> 1.2e-5."""
    match = _CLASS_RE.match(label.strip()) if isinstance(label, str) else None
    if match is None:
        raise CatalogError(f"not a flare class: {label!r}")
    letter, multiplier = match.group(1), float(match.group(2))
    if letter not in FLARE_DECADES:
        raise CatalogError(f"unknown flare class letter {letter!r} in {label!r}")
    if multiplier <= 0:
        raise CatalogError(f"flare class multiplier must be positive, got {label!r}")
    return multiplier * FLARE_DECADES[letter]


def flare_letter(flux: float) -> str:
    if not flux > 0:
        raise CatalogError(f"peak flux must be positive, got {flux!r}")
    letter = 'A'
    for candidate, base in FLARE_DECADES.items():
        # Products like 1.0 * 1e-6 may land a hair below the decade.
        if flux >= base * (1 - 1e-9):
            letter = candidate
    return letter


def flux_to_class(flux: float) -> str:
    """Inverse of parse_flare_class, one decimal: 2.3e-4 -> 'X2.3'."""
    letter = flare_letter(flux)
    multiplier = round(flux / FLARE_DECADES[letter], 1)
    if multiplier >= 10.0 and letter != 'X':
        letter = 'BCMX'['ABCM'.index(letter)]
        multiplier = round(flux / FLARE_DECADES[letter], 1)
    return f"{letter}{multiplier:.1f}"
