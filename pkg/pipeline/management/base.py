"""Shared plumbing for the flarecast management commands."""
import logging
from argparse import ArgumentTypeError
from datetime import timezone

from django.core.management.base import BaseCommand, CommandError
from django.utils.dateparse import parse_datetime

from flarecast.exceptions import (DataError, FetchError, FlarecastError, NonFiniteError, PropertyViolation,
                                  UndefinedScoreError)

logger = logging.getLogger('pipeline')

USAGE, DATA, PROPERTY = 1, 2, 3


def exit_code(exc: FlarecastError) -> int:
    if isinstance(exc, PropertyViolation):
        return PROPERTY
    if isinstance(exc, (DataError, UndefinedScoreError, FetchError, NonFiniteError)):
        return DATA
    return USAGE


def parse_utc(value: str):
    """Argument type for ISO-8601 times; naive values are taken as UTC."""
    parsed = parse_datetime(value)
    if parsed is None:
        raise ArgumentTypeError(f"not an ISO-8601 time: {value!r}")
    return parsed if parsed.tzinfo else parsed.replace(tzinfo=timezone.utc)


class FlarecastCommand(BaseCommand):
    """Runs ``run()`` and turns flarecast errors into exit codes 1 (usage), 2 (data), 3 (property)."""

    def handle(self, *args, **options):
        try:
            return self.run(*args, **options)
        except FlarecastError as exc:
            logger.error("%s failed: %s", self.__module__.rsplit('.', 1)[-1], exc)
            raise CommandError(f"{type(exc).__name__}: {exc}", returncode=exit_code(exc)) from exc

    def run(self, *args, **options):
        raise NotImplementedError

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        exit_ = parser.exit
        # argparse exits with 2 on bad arguments; 2 means a data error here.
        parser.exit = lambda status=0, message=None: exit_(USAGE if status == 2 else status, message)
        return parser

    def table(self, header, rows):
        widths = [max(len(str(v)) for v in column) for column in zip(header, *rows)]
        for row in (header, *rows):
            self.stdout.write('  '.join(str(v).rjust(w) for v, w in zip(row, widths)))

    def summary(self, summary):
        self.table(('', 'FL', 'NF'), summary.as_rows())
