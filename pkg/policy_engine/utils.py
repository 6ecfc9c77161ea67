from typing import Any, Dict, Iterable, List, Sequence
import csv
import hashlib
import json
import logging
import os

from django.core.exceptions import ImproperlyConfigured

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_DIR = os.path.join(os.path.dirname(__file__), 'default_configs')


def engine_setting(key: str, default: Any) -> Any:
    """
    Read a value from the POLICY_ENGINE settings dictionary.

    Falls back to the default when Django settings are not configured, so the
    numerical modules stay importable from plain scripts.
    """
    try:
        from django.conf import settings
        return getattr(settings, 'POLICY_ENGINE', {}).get(key, default)
    except ImproperlyConfigured:
        return default


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def config_hash(config: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of a resolved experiment config."""
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()


def load_json(path: str) -> Dict[str, Any]:
    with open(path, 'r') as f:
        return json.load(f)


def write_json(path: str, data: Any):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def format_cell(value: Any) -> str:
    """Full-precision text for CSV cells (shortest round-trip repr for floats)."""
    if isinstance(value, bool):
        return '1' if value else '0'
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, 'item'):
        return format_cell(value.item())
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """Write a CSV with a header row; returns the number of data rows."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    count = 0
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
            count += 1
    logger.debug(f"Wrote {count} rows to {path}")
    return count


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, 'r', newline='') as f:
        return list(csv.DictReader(f))
