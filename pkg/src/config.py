"""
Configuration loading for the hallucination detector.

Defaults come from config/config.json. A flat ``key = value`` file given with
``--config`` overrides them, and command-line flags override both.
"""

import copy
import json
import logging
import logging.handlers
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

try:
    from .exceptions import DomainError
except ImportError:
    from exceptions import DomainError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "config.json"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def load_config(path: Optional[str] = None) -> Dict[str, Dict[str, Any]]:
    """Load the sectioned JSON defaults."""
    config_path = Path(path) if path else DEFAULT_CONFIG_PATH
    with open(config_path, 'r', encoding='utf-8') as f:
        return json.load(f)


def _coerce(raw: str, default: Any, key: str) -> Any:
    """Convert a flat-file string to the type of the default it replaces."""
    text = raw.strip()
    if text.lower() in ('null', 'none', ''):
        return None
    if isinstance(default, bool):
        if text.lower() in ('true', 'yes', '1'):
            return True
        if text.lower() in ('false', 'no', '0'):
            return False
        raise DomainError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise DomainError(f"{key}: cannot parse {raw!r}") from None
    if default is None:
        # Untyped defaults (e.g. vocab_size) accept numbers, else strings
        for cast in (int, float):
            try:
                return cast(text)
            except ValueError:
                pass
    return text


def load_flat_config(path: str, defaults: Dict[str, Dict[str, Any]]) -> Dict[str, Dict[str, Any]]:
    """Read ``section.key = value`` lines and return them as overrides."""
    overrides: Dict[str, Dict[str, Any]] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            stripped = line.split('#', 1)[0].strip()
            if not stripped:
                continue
            if '=' not in stripped:
                raise DomainError(f"{path}:{line_number}: expected 'key = value'")
            key, value = (part.strip() for part in stripped.split('=', 1))
            if '.' not in key:
                raise DomainError(f"{path}:{line_number}: key {key!r} must be 'section.name'")
            section, name = key.split('.', 1)
            if section not in defaults or name not in defaults[section]:
                raise DomainError(f"{path}:{line_number}: unknown key {key!r}")
            overrides.setdefault(section, {})[name] = _coerce(value, defaults[section][name], key)
    return overrides


def merge_config(base: Dict[str, Dict[str, Any]],
                 *layers: Optional[Dict[str, Dict[str, Any]]]) -> Dict[str, Dict[str, Any]]:
    """Overlay layers onto a copy of base; None values in a layer are skipped."""
    merged = copy.deepcopy(base)
    for layer in layers:
        if not layer:
            continue
        for section, values in layer.items():
            for key, value in values.items():
                if value is not None:
                    merged.setdefault(section, {})[key] = value
    return merged


@dataclass
class RunConfig:
    """Merged configuration of one CLI invocation."""
    input_path: Optional[str] = None
    output_path: Optional[str] = None
    model_path: Optional[str] = None
    sections: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def section(self, name: str) -> Dict[str, Any]:
        return self.sections.get(name, {})

    def validate(self) -> None:
        if self.input_path is not None and not os.path.exists(self.input_path):
            raise DomainError(f"input path does not exist: {self.input_path}")
        threshold = self.section('render').get('threshold', 0.5)
        if not 0.0 < threshold < 1.0:
            raise DomainError(f"render threshold must lie in (0, 1), got {threshold}")


def build_run_config(cli_overrides: Optional[Dict[str, Dict[str, Any]]] = None,
                     config_file: Optional[str] = None,
                     input_path: Optional[str] = None,
                     output_path: Optional[str] = None,
                     model_path: Optional[str] = None,
                     defaults_path: Optional[str] = None) -> RunConfig:
    """Apply precedence flags > flat config file > JSON defaults."""
    defaults = load_config(defaults_path)
    file_layer = load_flat_config(config_file, defaults) if config_file else None
    sections = merge_config(defaults, file_layer, cli_overrides)
    return RunConfig(
        input_path=input_path,
        output_path=output_path,
        model_path=model_path,
        sections=sections,
    )


def setup_logging(logging_section: Dict[str, Any], log_file: Optional[str] = None) -> None:
    """Configure the root logger from the logging section."""
    level = getattr(logging, str(logging_section.get('level', 'INFO')).upper(), logging.INFO)
    handlers = [logging.StreamHandler()]

    file_path = log_file if log_file is not None else logging_section.get('file')
    if file_path:
        os.makedirs(os.path.dirname(file_path) or '.', exist_ok=True)
        handlers.append(logging.handlers.RotatingFileHandler(
            file_path,
            maxBytes=int(logging_section.get('max_size_mb', 100)) * 1024 * 1024,
            backupCount=int(logging_section.get('backup_count', 5)),
            encoding='utf-8',
        ))

    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)
