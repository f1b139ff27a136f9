# Lower Snell Toolkit - Check Reports
# ============================================================================

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List

from config import TOOL_VERSION


@dataclass
class CheckReport:
    """Outcome of one verification check; failures are data, not exceptions."""

    name: str
    passed: bool
    details: Dict[str, Any] = field(default_factory=dict)
    skipped: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'passed': self.passed,
            'skipped': self.skipped,
            'details': to_jsonable(self.details),
        }


def skipped_report(name: str, reason: str) -> CheckReport:
    """Report for a check that was not run; counted as skipped, never as passed."""
    return CheckReport(name, passed=True, details={'reason': reason}, skipped=True)


def to_jsonable(value: Any) -> Any:
    """Convert report payloads (rationals, stopping times, measures) to JSON values."""
    if hasattr(value, 'to_json'):
        return value.to_json()
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, bool) or value is None or isinstance(value, (int, float, str)):
        return value
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (set, frozenset)):
        return [to_jsonable(v) for v in sorted(value)]
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if hasattr(value, 'item'):  # numpy scalars
        return value.item()
    return str(value)


def dump_json(document: Dict[str, Any]) -> str:
    """Deterministic UTF-8 JSON rendering used for every CLI report."""
    return json.dumps(to_jsonable(document), indent=2, sort_keys=True, ensure_ascii=False)


def with_provenance(document: Dict[str, Any], model_hash: str) -> Dict[str, Any]:
    """Stamp a report with the model hash and the tool version."""
    document = dict(document)
    document['model_hash'] = model_hash
    document['tool_version'] = TOOL_VERSION
    return document


def summarize(reports: List[CheckReport]) -> Dict[str, int]:
    """Counts of checks, passes, failures and skips."""
    return {
        'checks': len(reports),
        'passed': sum(1 for r in reports if r.passed and not r.skipped),
        'failed': sum(1 for r in reports if not r.passed),
        'skipped': sum(1 for r in reports if r.skipped),
    }
