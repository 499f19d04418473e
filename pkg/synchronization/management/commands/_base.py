"""
Shared plumbing of the funnelsync management commands.

Exit codes: 0 success, 2 funnel breach, 3 invalid input or failed validation, 64 usage.
"""
from __future__ import annotations

import sys
from functools import partial
from typing import Any, Dict, List, Optional

from django.core.management.base import BaseCommand, CommandError

from synchronization.models import SimulationRun
from synchronization.services.artifacts import record_run
from synchronization.services.errors import FunnelBreach, FunnelSyncError

EXIT_OK = 0
EXIT_BREACH = 2
EXIT_INVALID = 3
EXIT_USAGE = 64


def usage_error(message: str) -> CommandError:
    return CommandError(f"Error: {message}", returncode=EXIT_USAGE)


def _parser_error(parser, message: str):
    if getattr(parser, "called_from_command_line", False):
        parser.print_usage(sys.stderr)
        parser.exit(EXIT_USAGE, f"{parser.prog}: error: {message}\n")
    raise usage_error(message)


def float_list(text: Optional[str], flag: str, allow_empty: bool = False) -> List[float]:
    """'1, 2.5,3' -> [1.0, 2.5, 3.0]; bad or empty lists are usage errors."""
    items = [part.strip() for part in (text or "").split(",") if part.strip()]
    if not items and not allow_empty:
        raise usage_error(f"{flag} needs a comma-separated list of numbers")
    try:
        return [float(item) for item in items]
    except ValueError:
        raise usage_error(f"{flag}: cannot read {text!r} as numbers") from None


class FunnelCommand(BaseCommand):
    """Maps domain errors to exit codes and records one SimulationRun per invocation."""

    persists = True

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.error = partial(_parser_error, parser)
        return parser

    def add_dry_run(self, parser) -> None:
        parser.add_argument("--dry-run", action="store_true", help="Do not write a SimulationRun audit row")

    def handle(self, *args, **options):
        self.audit: Dict[str, Any] = {"scenario_name": "", "scenario_digest": "", "output_dir": ""}
        self.persist = self.persists and not options.get("dry_run", False)
        try:
            summary = self.run(**options)
        except FunnelBreach as exc:
            self._record(SimulationRun.STATUS_BREACH, exc.record.summary() if exc.record else {}, str(exc))
            raise CommandError(str(exc), returncode=EXIT_BREACH) from exc
        except (FunnelSyncError, ValueError) as exc:
            self._record(SimulationRun.STATUS_INVALID, {}, str(exc))
            raise CommandError(str(exc), returncode=EXIT_INVALID) from exc
        self._record(SimulationRun.STATUS_OK, summary or {}, "")

    def run(self, **options) -> Optional[Dict[str, Any]]:
        raise NotImplementedError

    def _record(self, status: str, summary: Dict[str, Any], message: str) -> None:
        record_run(
            self.command_name,
            status,
            summary,
            message=message,
            persist=self.persist,
            **self.audit,
        )

    @property
    def command_name(self) -> str:
        return self.__class__.__module__.rsplit(".", 1)[-1]
