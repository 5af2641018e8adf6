import csv
import io
import json
import numpy as np
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

SIGNIFICANT_DIGITS = 9


def significant(value: Any) -> Any:
    """Rounds floats to nine significant digits, recursing into dicts, lists and tuples"""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not np.isfinite(value):
            return str(value)
        return float(f'{value:.{SIGNIFICANT_DIGITS}g}')
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, dict):
        return {key: significant(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [significant(item) for item in value]
    return value


def render_json(payload: Dict[str, Any]) -> str:
    return json.dumps(significant(payload), indent=2, sort_keys=True)


def render_csv(rows: Sequence[Dict[str, Any]], fieldnames: Optional[List[str]] = None) -> str:
    """
    Renders report rows as CSV with a header line

    :param rows: One dict per row
    :param fieldnames: Column order; the keys of the first row when None
    :return: CSV text
    """
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator='\n')
    writer.writeheader()
    for row in rows:
        writer.writerow({key: significant(item) for key, item in row.items()})
    return buffer.getvalue()


def render(payload: Dict[str, Any], rows: Sequence[Dict[str, Any]], as_csv: bool) -> str:
    """JSON of the whole payload, or CSV of its table rows"""
    return render_csv(rows) if as_csv else render_json(payload)


def write_report(text: str, path: Optional[Path]) -> None:
    if path is not None:
        Path(path).write_text(text if text.endswith('\n') else text + '\n', encoding='utf-8')
