"""Input-script front end: parser, style registry, integrator, bench."""

from .script import Command, ParseError, Script, parse_script, serialize
from .registry import RegistryError, StyleRegistry, resolve_style
from .simulation import RunConfig, RunError, Simulation, run_script
from .bench import BenchResult, bench_saturation

__all__ = [
    "Command",
    "ParseError",
    "Script",
    "parse_script",
    "serialize",
    "RegistryError",
    "StyleRegistry",
    "resolve_style",
    "RunConfig",
    "RunError",
    "Simulation",
    "run_script",
    "BenchResult",
    "bench_saturation",
]
