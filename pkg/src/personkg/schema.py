"""Person schema: the fourteen extraction fields, their scoring methods,
the graph vocabulary, and validation of raw model/annotation JSON.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

import yaml

UNKNOWN = "未知"
DOCUMENT = "<document>"

ITEM_SEP = "；"
VALUE_SEP = "，"


class EvalMethod(str, Enum):
    EXACT_MATCH = "ExactMatch"
    VECTOR_SIMILARITY = "VectorSimilarity"


class FieldKind(str, Enum):
    SCALAR = "scalar-text"
    OBJECT_LIST = "object-list"


class SchemaError(ValueError):
    """Raised when a schema config cannot be loaded."""


@dataclass(frozen=True)
class ItemKey:
    """One sub-key of an object-list item (e.g. the location of an achievement)."""

    name: str
    zh: str
    en: str
    aliases: tuple[str, ...] = ()
    pattern: str | None = None  # regex over the raw key, e.g. 职务\d*


@dataclass(frozen=True)
class FieldSpec:
    key: str
    attr: str
    zh: str
    en: str
    kind: FieldKind
    eval_method: EvalMethod
    aliases: tuple[str, ...] = ()
    item_keys: tuple[ItemKey, ...] = ()

    @property
    def display_names(self) -> tuple[str, str]:
        return (self.zh, self.en)

    def accepted_names(self) -> tuple[str, ...]:
        return (self.zh, self.en, self.key, self.attr) + self.aliases


@dataclass(frozen=True)
class SchemaDefinition:
    fields: tuple[FieldSpec, ...]
    attribute_vocab: frozenset[str]
    relation_vocab: frozenset[str]
    entity_vocab: frozenset[str]
    attribute_aliases: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        keys = [f.key for f in self.fields]
        if len(set(keys)) != len(keys):
            raise SchemaError(f"duplicate field keys: {keys}")

    @property
    def keys(self) -> list[str]:
        return [f.key for f in self.fields]

    def field(self, key: str) -> FieldSpec:
        for spec in self.fields:
            if spec.key == key:
                return spec
        raise KeyError(f"unknown field: {key}")

    def index(self, key: str) -> int:
        return self.keys.index(key)


# Vocabularies; literal spelling kept ("hasFiled").
ATTRIBUTE_VOCAB = (
    "hasName", "hasAlias", "hasGender", "hasBirthPlace",
    "hasEthnic", "hasBirthDate", "hasDeathDate", "hasFiled",
)
RELATION_VOCAB = (
    "hasSpouse", "hasParent", "hasStudent", "hasColleague", "hasSupervisor",
    "hasSubordinate", "workFor", "Found", "belongTo", "ParticipateIn", "WinAward", "Create",
)
ENTITY_VOCAB = ("Person", "Achievements", "Works", "Relationships", "Positions")
ATTRIBUTE_ALIASES = (("hasField", "hasFiled"),)

_ACHIEVEMENT_ITEMS = (
    ItemKey("influence", "成就影响", "Achievement", ("influence", "Influence", "成就")),
    ItemKey("location", "发生地点", "Location", ("location", "地点")),
    ItemKey("time", "发生时间", "Time", ("time", "Date", "date", "时间")),
)
_RELATION_ITEMS = (
    ItemKey("person", "人物", "Person", ("person", "name", "Name", "姓名")),
    ItemKey("relation", "关系", "Relation", ("relation",)),
)
_POSITION_ITEMS = (
    ItemKey("title", "职务", "Position", ("title", "Title"), pattern=r"^(职务|Position)\s*\d*$"),
    ItemKey("start_time", "时间", "Time", ("start_time", "Date", "time", "开始时间")),
)

_S, _L = FieldKind.SCALAR, FieldKind.OBJECT_LIST
_EM, _VS = EvalMethod.EXACT_MATCH, EvalMethod.VECTOR_SIMILARITY

# Row order and methods follow the evaluation-rules table (rows 1-14).
BUILTIN_FIELDS = (
    FieldSpec("Name", "name", "姓名", "Name", _S, _EM, ("Full Name",)),
    FieldSpec("Alias", "alias", "别名", "Alias", _S, _VS, ("Aliases",)),
    FieldSpec("Gender", "gender", "性别", "Gender", _S, _EM),
    FieldSpec("Ethnicity", "ethnicity", "民族", "Ethnicity", _S, _EM, ("Ethnic",)),
    FieldSpec("Era", "era", "所处时代", "Era", _S, _VS),
    FieldSpec("Birthplace", "birthplace", "籍贯", "BirthPlace", _S, _VS, ("Place of Origin",)),
    FieldSpec("DateOfBirth", "birth_date", "出生日期", "BirthDate", _S, _EM, ("Date of Birth",)),
    FieldSpec("DateOfDeath", "death_date", "逝世日期", "DeathDate", _S, _EM, ("Date of Death",)),
    FieldSpec("Achievements", "achievements", "主要成就", "MajorAchievements", _L, _VS,
              ("Major Achievements",), _ACHIEVEMENT_ITEMS),
    FieldSpec("Works", "works", "主要作品", "MajorWorks", _S, _VS, ("Major Works",)),
    FieldSpec("SocialRelations", "social_relations", "主要社会关系", "MajorSocialRelations", _L, _VS,
              ("Social Relations", "Social Relationships", "Major Social Relations"), _RELATION_ITEMS),
    FieldSpec("FamilyRelations", "family_relations", "主要家族关系", "MajorFamilyRelations", _L, _VS,
              ("Family Relations", "Family Relationships", "Major Family Relations"), _RELATION_ITEMS),
    FieldSpec("Domain", "field_domain", "领域", "Field", _S, _VS, ("Domain",)),
    FieldSpec("Positions", "positions", "历任职务", "OfficialPositions", _L, _VS,
              ("Positions Held", "Official Positions"), _POSITION_ITEMS),
)

FIELD_KEYS = tuple(f.key for f in BUILTIN_FIELDS)


def builtin_schema() -> SchemaDefinition:
    return SchemaDefinition(
        fields=BUILTIN_FIELDS,
        attribute_vocab=frozenset(ATTRIBUTE_VOCAB),
        relation_vocab=frozenset(RELATION_VOCAB),
        entity_vocab=frozenset(ENTITY_VOCAB),
        attribute_aliases=ATTRIBUTE_ALIASES,
    )


def load_schema(config_path: str | Path = "builtin") -> SchemaDefinition:
    """Load the builtin schema, or a YAML/JSON config describing the same 14 fields.

    A config may rename display names and add key aliases. Field keys, kinds
    and evaluation methods are fixed; a config that disagrees is rejected.
    """
    if str(config_path) == "builtin":
        return builtin_schema()
    try:
        data = yaml.safe_load(Path(config_path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise SchemaError(f"cannot read schema config {config_path}: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("fields"), list):
        raise SchemaError("schema config must be a mapping with a 'fields' list")

    builtin = {f.key: f for f in BUILTIN_FIELDS}
    bad: list[str] = []
    seen: list[str] = []
    specs: dict[str, FieldSpec] = {}
    for i, entry in enumerate(data["fields"]):
        if not isinstance(entry, dict) or "key" not in entry:
            bad.append(f"fields[{i}]")
            continue
        key = str(entry["key"])
        seen.append(key)
        base = builtin.get(key)
        if base is None:
            continue
        method = entry.get("eval_method", base.eval_method.value)
        kind = entry.get("kind", base.kind.value)
        if method != base.eval_method.value:
            bad.append(f"{key}.eval_method")
        if kind != base.kind.value:
            bad.append(f"{key}.kind")
        unknown = set(entry) - {"key", "zh", "en", "aliases", "eval_method", "kind"}
        bad.extend(f"{key}.{k}" for k in sorted(unknown))
        aliases = entry.get("aliases", [])
        if not isinstance(aliases, list):
            bad.append(f"{key}.aliases")
            aliases = []
        specs[key] = replace(
            base,
            zh=str(entry.get("zh", base.zh)),
            en=str(entry.get("en", base.en)),
            aliases=base.aliases + tuple(str(a) for a in aliases),
        )
    if bad:
        raise SchemaError("schema-parse error; offending keys: " + ", ".join(bad))

    problems = [f"missing field: {k}" for k in FIELD_KEYS if k not in seen]
    problems += [f"unexpected field: {k}" for k in seen if k not in builtin]
    dupes = sorted({k for k in seen if seen.count(k) > 1})
    problems += [f"duplicate field: {k}" for k in dupes]
    if problems:
        raise SchemaError("; ".join(problems))
    return replace(builtin_schema(), fields=tuple(specs[k] for k in FIELD_KEYS))


# --- records ---------------------------------------------------------------


@dataclass(frozen=True)
class Achievement:
    influence: str = ""
    location: str = ""
    time: str = ""


@dataclass(frozen=True)
class Relation:
    person: str = ""
    relation: str = ""


@dataclass(frozen=True)
class Position:
    title: str = ""
    start_time: str = ""


_ITEM_TYPES = {"achievements": Achievement, "social_relations": Relation,
               "family_relations": Relation, "positions": Position}


@dataclass(frozen=True)
class PersonRecord:
    name: str = ""
    alias: str = ""
    gender: str = ""
    ethnicity: str = ""
    era: str = ""
    birthplace: str = ""
    birth_date: str = ""
    death_date: str = ""
    achievements: tuple[Achievement, ...] = ()
    works: str = ""
    social_relations: tuple[Relation, ...] = ()
    family_relations: tuple[Relation, ...] = ()
    field_domain: str = ""
    positions: tuple[Position, ...] = ()


@dataclass(frozen=True)
class ValidationIssue:
    field_key: str
    severity: str  # "error" | "warning"
    message: str

    @property
    def is_error(self) -> bool:
        return self.severity == "error"


def is_blank(value: str) -> bool:
    """True for values that carry no information ("" or 未知)."""
    value = value.strip()
    return not value or value == UNKNOWN


def _norm_key(key: str) -> str:
    return re.sub(r"[\s_\-]+", "", str(key)).lower()


def _match_field(schema: SchemaDefinition, raw_key: str) -> FieldSpec | None:
    nk = _norm_key(raw_key)
    for spec in schema.fields:
        if nk in {_norm_key(n) for n in spec.accepted_names()}:
            return spec
    return None


def _match_item_key(spec: FieldSpec, raw_key: str) -> ItemKey | None:
    nk = _norm_key(raw_key)
    for ik in spec.item_keys:
        if nk in {_norm_key(n) for n in (ik.name, ik.zh, ik.en) + ik.aliases}:
            return ik
        if ik.pattern and re.match(ik.pattern, raw_key.strip()):
            return ik
    return None


def _scalar_text(value: Any, where: str, issues: list[ValidationIssue]) -> str | None:
    if value is None:
        issues.append(ValidationIssue(where, "warning", "null normalized to empty string"))
        return ""
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, bool):
        issues.append(ValidationIssue(where, "error", f"expected text, got {value!r}"))
        return None
    if isinstance(value, (int, float)):
        issues.append(ValidationIssue(where, "warning", "number coerced to text"))
        return str(value)
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        issues.append(ValidationIssue(where, "warning", "list of strings joined with '、'"))
        return "、".join(v.strip() for v in value if v.strip())
    issues.append(ValidationIssue(where, "error", f"shape error: expected text, got {type(value).__name__}"))
    return None


def _list_items(spec: FieldSpec, value: Any, issues: list[ValidationIssue]) -> tuple | None:
    if value is None:
        issues.append(ValidationIssue(spec.key, "warning", "null normalized to empty list"))
        return ()
    if isinstance(value, str):
        if is_blank(value):
            issues.append(ValidationIssue(spec.key, "warning", "blank text normalized to empty list"))
            return ()
        issues.append(ValidationIssue(spec.key, "error", "shape error: expected a list of objects, got text"))
        return None
    if isinstance(value, dict):
        issues.append(ValidationIssue(spec.key, "warning", "single object wrapped into a list"))
        value = [value]
    if not isinstance(value, list):
        issues.append(ValidationIssue(
            spec.key, "error", f"shape error: expected a list of objects, got {type(value).__name__}"))
        return None

    item_type = _ITEM_TYPES[spec.attr]
    items = []
    ok = True
    for i, raw_item in enumerate(value):
        where = f"{spec.key}[{i}]"
        if not isinstance(raw_item, dict):
            issues.append(ValidationIssue(where, "error", "shape error: list item is not an object"))
            ok = False
            continue
        values: dict[str, str] = {}
        for raw_key, raw_val in raw_item.items():
            ik = _match_item_key(spec, raw_key)
            if ik is None:
                issues.append(ValidationIssue(where, "warning", f"unknown item key {raw_key!r} ignored"))
                continue
            text = _scalar_text(raw_val, f"{where}.{ik.name}", issues)
            if text is None:
                ok = False
                continue
            if ik.name in values:
                issues.append(ValidationIssue(where, "warning", f"repeated item key {raw_key!r}; first kept"))
                continue
            values[ik.name] = text
        items.append(item_type(**values))
    return tuple(items) if ok else None


def check_record(
    raw: str | dict, schema: SchemaDefinition | None = None, strict: bool = True
) -> tuple[PersonRecord | None, list[ValidationIssue]]:
    """Validate raw JSON into a PersonRecord, returning every issue found.

    With ``strict`` a missing field is an error; otherwise it is a warning and
    the field defaults to empty. A missing or empty name is always an error.
    """
    schema = schema or builtin_schema()
    issues: list[ValidationIssue] = []
    if isinstance(raw, (str, bytes)):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            return None, [ValidationIssue(DOCUMENT, "error", f"parse error: {exc}")]
    else:
        data = raw
    if not isinstance(data, dict):
        return None, [ValidationIssue(DOCUMENT, "error", "parse error: top-level value is not an object")]

    found: dict[str, Any] = {}
    for raw_key, value in data.items():
        spec = _match_field(schema, raw_key)
        if spec is None:
            issues.append(ValidationIssue(DOCUMENT, "warning", f"unknown key {raw_key!r} ignored"))
        elif spec.key in found:
            issues.append(ValidationIssue(spec.key, "warning", f"duplicate key {raw_key!r}; first kept"))
        else:
            found[spec.key] = value

    values: dict[str, Any] = {}
    failed = False
    for spec in schema.fields:
        if spec.key not in found:
            severity = "error" if strict or spec.key == "Name" else "warning"
            issues.append(ValidationIssue(spec.key, severity, f"missing key: {spec.zh} ({spec.en})"))
            failed |= severity == "error"
            continue
        if spec.kind is FieldKind.SCALAR:
            out = _scalar_text(found[spec.key], spec.key, issues)
        else:
            out = _list_items(spec, found[spec.key], issues)
        if out is None:
            failed = True
        else:
            values[spec.attr] = out

    if "Name" in found and not failed and is_blank(values.get("name", "")):
        issues.append(ValidationIssue("Name", "error", "name is empty"))
        failed = True
    if failed:
        return None, issues
    return PersonRecord(**values), issues


def validate_record(
    raw_json: str | dict, schema: SchemaDefinition | None = None, strict: bool = True
) -> PersonRecord | list[ValidationIssue]:
    """Return the validated record, or the list of issues if any is an error."""
    record, issues = check_record(raw_json, schema, strict=strict)
    return record if record is not None else issues


def record_to_dict(record: PersonRecord, schema: SchemaDefinition | None = None,
                   lang: str = "zh") -> dict[str, Any]:
    """Serialize with the template's key names (Chinese by default)."""
    schema = schema or builtin_schema()
    out: dict[str, Any] = {}
    for spec in schema.fields:
        name = spec.zh if lang == "zh" else spec.en
        value = getattr(record, spec.attr)
        if spec.kind is FieldKind.SCALAR:
            out[name] = value
            continue
        items = []
        for n, item in enumerate(value, start=1):
            obj = {}
            for ik in spec.item_keys:
                key = ik.zh if lang == "zh" else ik.en
                if ik.pattern:
                    key = f"{key}{n}"
                obj[key] = getattr(item, ik.name)
            items.append(obj)
        out[name] = items
    return out


def serialize_record(record: PersonRecord, schema: SchemaDefinition | None = None,
                     lang: str = "zh", minify: bool = True) -> str:
    data = record_to_dict(record, schema, lang)
    if minify:
        return json.dumps(data, ensure_ascii=False, separators=(",", ":"))
    return json.dumps(data, ensure_ascii=False, indent=2)


def canonicalize_field_text(record: PersonRecord, field_key: str,
                            schema: SchemaDefinition | None = None) -> str:
    """Comparable text for one field.

    Scalars are returned verbatim. Object lists join item values with
    VALUE_SEP and items with ITEM_SEP, in item-key order.
    """
    schema = schema or builtin_schema()
    try:
        spec = schema.field(field_key)
    except KeyError:
        raise KeyError(f"unknown field: {field_key}") from None
    value = getattr(record, spec.attr)
    if spec.kind is FieldKind.SCALAR:
        return value
    return ITEM_SEP.join(
        VALUE_SEP.join(getattr(item, ik.name) for ik in spec.item_keys) for item in value
    )


def errors_only(issues: Iterable[ValidationIssue]) -> list[ValidationIssue]:
    return [i for i in issues if i.is_error]
