"""Typed subset of FHIR R4 resources.

Covers Patient, Condition, MedicationRequest, Observation, Procedure plus
Bundle and OperationOutcome. Parsing is lenient by default (unknown members
ignored, unknown resourceTypes flow through as raw values); strict mode
rejects unknown resourceTypes. Display text follows the CodeableConcept
ladder: text, then first coding display, then first coding code.

Dates are validated but kept as strings: prompts need display fidelity,
not arithmetic, and FHIR permits partial dates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Union

GENDERS = ("male", "female", "other", "unknown")

_DATE_RE = re.compile(r"^\d{4}(-\d{2}(-\d{2})?)?$")
_DATETIME_RE = re.compile(r"^\d{4}(-\d{2}(-\d{2}(T\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:\d{2})?)?)?)?$")
_REFERENCE_RE = re.compile(r"^[A-Za-z]+/[A-Za-z0-9\-\.]{1,64}$")

UNNAMED = "(unnamed)"


class MissingResourceType(ValueError):
    """Input JSON has no resourceType member."""


class UnsupportedResourceType(ValueError):
    """Strict parsing met a resourceType outside the typed subset."""


class SchemaViolation(ValueError):
    """A member failed validation; path is a JSON pointer to it."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class TotalMismatch(ValueError):
    """A searchset declared a total that the merged pages do not add up to."""


def _require_str(raw: dict, key: str, path: str) -> str:
    value = raw.get(key)
    if not isinstance(value, str) or not value:
        raise SchemaViolation(f"{path}/{key}", "expected a non-empty string")
    return value


def _opt_str(raw: dict, key: str, path: str) -> str | None:
    value = raw.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise SchemaViolation(f"{path}/{key}", "expected a string")
    return value


def _opt_date(raw: dict, key: str, path: str) -> str | None:
    value = _opt_str(raw, key, path)
    if value is not None and not _DATE_RE.match(value):
        raise SchemaViolation(f"{path}/{key}", f"not a valid date: {value!r}")
    return value


def _opt_datetime(raw: dict, key: str, path: str) -> str | None:
    value = _opt_str(raw, key, path)
    if value is not None and not _DATETIME_RE.match(value):
        raise SchemaViolation(f"{path}/{key}", f"not a valid dateTime: {value!r}")
    return value


def codeable_text(concept: Any, path: str) -> str | None:
    """Resolve display text: text, then first coding display, then code."""
    if concept is None:
        return None
    if not isinstance(concept, dict):
        raise SchemaViolation(path, "expected a CodeableConcept object")
    text = concept.get("text")
    if isinstance(text, str) and text:
        return text
    codings = concept.get("coding")
    if isinstance(codings, list) and codings:
        first = codings[0]
        if isinstance(first, dict):
            for key in ("display", "code"):
                value = first.get(key)
                if isinstance(value, str) and value:
                    return value
    return None


def _subject_ref(raw: dict, path: str) -> str:
    subject = raw.get("subject")
    if not isinstance(subject, dict):
        raise SchemaViolation(f"{path}/subject", "expected a Reference object")
    ref = subject.get("reference")
    if not isinstance(ref, str) or not _REFERENCE_RE.match(ref):
        raise SchemaViolation(f"{path}/subject/reference", f"malformed reference: {ref!r}")
    return ref


@dataclass(frozen=True)
class PatientRecord:
    resource_type = "Patient"
    id: str
    name: str
    birth_date: str | None = None
    gender: str | None = None

    @property
    def ref(self) -> str:
        return f"Patient/{self.id}"

    def to_fhir(self) -> dict[str, Any]:
        raw: dict[str, Any] = {"resourceType": "Patient", "id": self.id}
        if self.name != UNNAMED:
            raw["name"] = [{"text": self.name}]
        if self.birth_date is not None:
            raw["birthDate"] = self.birth_date
        if self.gender is not None:
            raw["gender"] = self.gender
        return raw


@dataclass(frozen=True)
class ConditionRecord:
    resource_type = "Condition"
    id: str
    subject_ref: str
    code_text: str
    clinical_status: str | None = None

    @property
    def ref(self) -> str:
        return f"Condition/{self.id}"

    def to_fhir(self) -> dict[str, Any]:
        raw: dict[str, Any] = {
            "resourceType": "Condition",
            "id": self.id,
            "subject": {"reference": self.subject_ref},
            "code": {"text": self.code_text},
        }
        if self.clinical_status is not None:
            raw["clinicalStatus"] = {"text": self.clinical_status}
        return raw


@dataclass(frozen=True)
class MedicationRecord:
    resource_type = "MedicationRequest"
    id: str
    subject_ref: str
    medication_text: str
    status: str | None = None
    authored_on: str | None = None

    @property
    def ref(self) -> str:
        return f"MedicationRequest/{self.id}"

    def to_fhir(self) -> dict[str, Any]:
        raw: dict[str, Any] = {
            "resourceType": "MedicationRequest",
            "id": self.id,
            "subject": {"reference": self.subject_ref},
            "medicationCodeableConcept": {"text": self.medication_text},
        }
        if self.status is not None:
            raw["status"] = self.status
        if self.authored_on is not None:
            raw["authoredOn"] = self.authored_on
        return raw


@dataclass(frozen=True)
class Quantity:
    value: float
    unit: str | None = None

    def render(self) -> str:
        text = format_decimal(self.value)
        return f"{text} {self.unit}" if self.unit else text


@dataclass(frozen=True)
class ObservationRecord:
    resource_type = "Observation"
    id: str
    subject_ref: str
    code_text: str
    status: str = "unknown"
    value: Union[Quantity, str, None] = None
    effective: str | None = None

    @property
    def ref(self) -> str:
        return f"Observation/{self.id}"

    def to_fhir(self) -> dict[str, Any]:
        raw: dict[str, Any] = {
            "resourceType": "Observation",
            "id": self.id,
            "status": self.status,
            "subject": {"reference": self.subject_ref},
            "code": {"text": self.code_text},
        }
        if isinstance(self.value, Quantity):
            quantity: dict[str, Any] = {"value": self.value.value}
            if self.value.unit is not None:
                quantity["unit"] = self.value.unit
            raw["valueQuantity"] = quantity
        elif isinstance(self.value, str):
            raw["valueString"] = self.value
        if self.effective is not None:
            raw["effectiveDateTime"] = self.effective
        return raw


@dataclass(frozen=True)
class ProcedureRecord:
    resource_type = "Procedure"
    id: str
    subject_ref: str
    code_text: str
    status: str = "unknown"
    performed: str | None = None

    @property
    def ref(self) -> str:
        return f"Procedure/{self.id}"

    def to_fhir(self) -> dict[str, Any]:
        raw: dict[str, Any] = {
            "resourceType": "Procedure",
            "id": self.id,
            "status": self.status,
            "subject": {"reference": self.subject_ref},
            "code": {"text": self.code_text},
        }
        if self.performed is not None:
            raw["performedDateTime"] = self.performed
        return raw


FhirResource = Union[PatientRecord, ConditionRecord, MedicationRecord, ObservationRecord, ProcedureRecord]


def format_decimal(value: float) -> str:
    """Render a FHIR decimal the way it reads: integers without a fraction."""
    if isinstance(value, int):
        return str(value)
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def render_name(raw_patient: dict[str, Any]) -> str:
    """Join the first name's given parts and family; absent renders (unnamed)."""
    names = raw_patient.get("name")
    if not isinstance(names, list) or not names:
        return UNNAMED
    first = names[0]
    if not isinstance(first, dict):
        return UNNAMED
    text = first.get("text")
    if isinstance(text, str) and text:
        return text
    parts: list[str] = []
    given = first.get("given")
    if isinstance(given, list):
        parts.extend(g for g in given if isinstance(g, str) and g)
    family = first.get("family")
    if isinstance(family, str) and family:
        parts.append(family)
    return " ".join(parts) if parts else UNNAMED


def _parse_patient(raw: dict) -> PatientRecord:
    gender = _opt_str(raw, "gender", "")
    if gender is not None and gender not in GENDERS:
        raise SchemaViolation("/gender", f"not a valid administrative gender: {gender!r}")
    return PatientRecord(
        id=_require_str(raw, "id", ""),
        name=render_name(raw),
        birth_date=_opt_date(raw, "birthDate", ""),
        gender=gender,
    )


def _parse_condition(raw: dict) -> ConditionRecord:
    code_text = codeable_text(raw.get("code"), "/code")
    if code_text is None:
        raise SchemaViolation("/code", "no resolvable display text")
    return ConditionRecord(
        id=_require_str(raw, "id", ""),
        subject_ref=_subject_ref(raw, ""),
        code_text=code_text,
        clinical_status=codeable_text(raw.get("clinicalStatus"), "/clinicalStatus"),
    )


def _parse_medication(raw: dict) -> MedicationRecord:
    medication_text = codeable_text(raw.get("medicationCodeableConcept"), "/medicationCodeableConcept")
    if medication_text is None:
        raise SchemaViolation("/medicationCodeableConcept", "no resolvable display text")
    return MedicationRecord(
        id=_require_str(raw, "id", ""),
        subject_ref=_subject_ref(raw, ""),
        medication_text=medication_text,
        status=_opt_str(raw, "status", ""),
        authored_on=_opt_datetime(raw, "authoredOn", ""),
    )


def _parse_observation(raw: dict) -> ObservationRecord:
    code_text = codeable_text(raw.get("code"), "/code")
    if code_text is None:
        raise SchemaViolation("/code", "no resolvable display text")
    value: Union[Quantity, str, None] = None
    if "valueQuantity" in raw:
        quantity = raw["valueQuantity"]
        if not isinstance(quantity, dict):
            raise SchemaViolation("/valueQuantity", "expected a Quantity object")
        number = quantity.get("value")
        if isinstance(number, bool) or not isinstance(number, (int, float)):
            raise SchemaViolation("/valueQuantity/value", "expected a number")
        if number != number or number in (float("inf"), float("-inf")):
            raise SchemaViolation("/valueQuantity/value", "value must be finite")
        value = Quantity(value=number, unit=_opt_str(quantity, "unit", "/valueQuantity"))
    elif "valueString" in raw:
        value = _require_str(raw, "valueString", "")
    elif "valueCodeableConcept" in raw:
        value = codeable_text(raw.get("valueCodeableConcept"), "/valueCodeableConcept")
    return ObservationRecord(
        id=_require_str(raw, "id", ""),
        subject_ref=_subject_ref(raw, ""),
        code_text=code_text,
        status=_opt_str(raw, "status", "") or "unknown",
        value=value,
        effective=_opt_datetime(raw, "effectiveDateTime", ""),
    )


def _parse_procedure(raw: dict) -> ProcedureRecord:
    code_text = codeable_text(raw.get("code"), "/code")
    if code_text is None:
        raise SchemaViolation("/code", "no resolvable display text")
    performed = _opt_datetime(raw, "performedDateTime", "")
    if performed is None and isinstance(raw.get("performedPeriod"), dict):
        performed = _opt_datetime(raw["performedPeriod"], "start", "/performedPeriod")
    return ProcedureRecord(
        id=_require_str(raw, "id", ""),
        subject_ref=_subject_ref(raw, ""),
        code_text=code_text,
        status=_opt_str(raw, "status", "") or "unknown",
        performed=performed,
    )


_PARSERS = {
    "Patient": _parse_patient,
    "Condition": _parse_condition,
    "MedicationRequest": _parse_medication,
    "Observation": _parse_observation,
    "Procedure": _parse_procedure,
}

TYPED_RESOURCE_TYPES = frozenset(_PARSERS)


def parse_resource(raw: Any, strict: bool = False) -> FhirResource | dict[str, Any]:
    """Parse raw FHIR JSON into a typed record.

    Unknown resourceTypes pass through as the raw dict in lenient mode and
    raise UnsupportedResourceType in strict mode.
    """
    if not isinstance(raw, dict):
        raise SchemaViolation("", "resource must be a JSON object")
    resource_type = raw.get("resourceType")
    if not isinstance(resource_type, str) or not resource_type:
        raise MissingResourceType("resource has no resourceType member")
    parser = _PARSERS.get(resource_type)
    if parser is None:
        if strict:
            raise UnsupportedResourceType(f"no typed model for resourceType {resource_type!r}")
        return raw
    return parser(raw)


def render_fact(record: FhirResource) -> str:
    """One-line human fact for prompt segments."""
    if isinstance(record, ConditionRecord):
        return record.code_text
    if isinstance(record, MedicationRecord):
        return record.medication_text
    if isinstance(record, ObservationRecord):
        if record.value is None:
            return record.code_text
        rendered = record.value.render() if isinstance(record.value, Quantity) else record.value
        return f"{record.code_text}: {rendered}"
    if isinstance(record, ProcedureRecord):
        return record.code_text
    if isinstance(record, PatientRecord):
        return record.name
    raise TypeError(f"no fact rendering for {type(record).__name__}")


def operation_outcome_text(raw: Any) -> str | None:
    """First diagnostic line from an OperationOutcome, if that is what raw is."""
    if not isinstance(raw, dict) or raw.get("resourceType") != "OperationOutcome":
        return None
    issues = raw.get("issue")
    if isinstance(issues, list):
        for issue in issues:
            if isinstance(issue, dict):
                for key in ("diagnostics", "details"):
                    value = issue.get(key)
                    if isinstance(value, str) and value:
                        return value
                    if isinstance(value, dict):
                        text = value.get("text")
                        if isinstance(text, str) and text:
                            return text
    return None


@dataclass(frozen=True)
class FhirBundle:
    type: str
    entries: tuple[dict[str, Any], ...]
    total: int | None = None
    next_url: str | None = None

    @classmethod
    def parse(cls, raw: Any) -> "FhirBundle":
        if not isinstance(raw, dict) or raw.get("resourceType") != "Bundle":
            raise SchemaViolation("/resourceType", "expected a Bundle resource")
        bundle_type = raw.get("type")
        if not isinstance(bundle_type, str) or not bundle_type:
            raise SchemaViolation("/type", "bundle type required")
        total = raw.get("total")
        if total is not None and (isinstance(total, bool) or not isinstance(total, int) or total < 0):
            raise SchemaViolation("/total", "total must be a non-negative integer")
        entries: list[dict[str, Any]] = []
        raw_entries = raw.get("entry", [])
        if not isinstance(raw_entries, list):
            raise SchemaViolation("/entry", "expected an array")
        for i, entry in enumerate(raw_entries):
            resource = entry.get("resource") if isinstance(entry, dict) else None
            if not isinstance(resource, dict) or "resourceType" not in resource:
                raise SchemaViolation(f"/entry/{i}/resource", "entry resource must carry resourceType")
            entries.append(resource)
        next_url = None
        links = raw.get("link", [])
        if isinstance(links, list):
            for link in links:
                if isinstance(link, dict) and link.get("relation") == "next":
                    url = link.get("url")
                    if isinstance(url, str) and url:
                        next_url = url
                    break
        return cls(type=bundle_type, entries=tuple(entries), total=total, next_url=next_url)


def merge_pages(pages: list[FhirBundle]) -> list[dict[str, Any]]:
    """Concatenate entries of pages fetched along a next-link chain.

    Raises TotalMismatch when the first page declares a total that the
    merged entry count does not meet.
    """
    merged: list[dict[str, Any]] = []
    for page in pages:
        merged.extend(page.entries)
    if pages and pages[0].total is not None and pages[0].total != len(merged):
        raise TotalMismatch(f"bundle declared total {pages[0].total} but {len(merged)} entries were delivered")
    return merged
