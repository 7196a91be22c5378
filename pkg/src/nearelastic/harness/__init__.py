"""Configuration, command line, manifests and the validation suite."""

from .config import Config, load_config, parse_config
from .manifest import RunManifest
from .validate import validate

__all__ = ["Config", "RunManifest", "load_config", "parse_config", "validate"]
