"""Loading user records and KB knowledge, age extraction, popular-user expansion and linking."""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence

from .domain import (
    AGE_MAX,
    AGE_MIN,
    DEFAULT_REFERENCE_DATE,
    PopularUser,
    UserRecord,
)

logger = logging.getLogger(__name__)

DEFAULT_CONFIDENCE = 0.8

_AGE_PATTERNS = (
    re.compile(r"(?<!\d)(\d{2})\s*(?:years?\s*old|yrs?\s*old|y/o|yo)\b", re.IGNORECASE),
    re.compile(r"\bage[:\s]\s*(\d{2})(?!\d)", re.IGNORECASE),
    re.compile(r"(?<!\d)(\d{2})\s*años", re.IGNORECASE),
)


def extract_age(description: Optional[str]) -> Optional[int]:
    """Pull a self-reported age out of a profile description.

    Returns ``None`` when nothing matches or when the matches disagree.
    """
    if not description:
        return None
    found = set()
    for pattern in _AGE_PATTERNS:
        for match in pattern.finditer(description):
            age = int(match.group(1))
            if AGE_MIN <= age <= AGE_MAX:
                found.add(age)
    if len(found) != 1:
        return None
    return found.pop()


class ParseError(ValueError):
    """Input file is not well-formed; carries the location of the problem."""

    def __init__(self, path, line: int, column: int, msg: str):
        super().__init__(f"{path}:{line}:{column}: {msg}")
        self.path = path
        self.line = line
        self.column = column


@dataclass
class LoadResult:
    records: list
    skipped: int = 0
    problems: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def _user_from_json(obj: Mapping) -> UserRecord:
    age = obj.get("extracted_age")
    return UserRecord(
        user_id=str(obj["user_id"]),
        screen_name=obj.get("screen_name", "") or "",
        name=obj.get("name", "") or "",
        description=obj.get("description", "") or "",
        followers_count=int(obj.get("followers_count", 0)),
        friends_count=int(obj.get("friends_count", 0)),
        friend_ids=tuple(str(f) for f in obj.get("friend_ids", ())),
        extracted_age=None if age is None else int(age),
    )


def _read_jsonl(path, build: Callable[[Mapping], object]) -> LoadResult:
    path = Path(path)
    result = LoadResult(records=[])
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, exc.colno, exc.msg) from exc
            if not isinstance(obj, dict):
                raise ParseError(path, lineno, 1, "expected a JSON object")
            try:
                result.records.append(build(obj))
            except (KeyError, TypeError, ValueError) as exc:
                result.skipped += 1
                result.problems.append(f"line {lineno}: {exc}")
                logger.warning("%s:%d: skipping record: %s", path, lineno, exc)
    return result


def load_users(path) -> LoadResult:
    """Read newline-delimited JSON user records.

    Records that violate domain invariants are skipped and counted; malformed
    JSON raises :class:`ParseError`.
    """
    return _read_jsonl(path, _user_from_json)


def write_users(users: Iterable[UserRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for user in users:
            fh.write(json.dumps(user.to_json(), sort_keys=True, ensure_ascii=False) + "\n")


def _parse_date(value) -> Optional[dt.date]:
    if value is None:
        return None
    return dt.date.fromisoformat(str(value))


@dataclass(frozen=True)
class KbEntity:
    types: frozenset
    birth_date: Optional[dt.date] = None


class KbFixture(dict):
    """Entity URI -> :class:`KbEntity`; a file-backed stand-in for the KB lookups."""

    def to_json(self) -> dict:
        return {
            uri: {
                "types": sorted(ent.types),
                "birth_date": ent.birth_date.isoformat() if ent.birth_date else None,
            }
            for uri, ent in sorted(self.items())
        }


def kb_fixture_from_json(obj: Mapping) -> KbFixture:
    fixture = KbFixture()
    for uri, entry in obj.items():
        birth = None
        raw = entry.get("birth_date")
        if raw is not None:
            try:
                birth = _parse_date(raw)
            except ValueError:
                logger.warning("malformed birth_date %r for %s; treating as absent", raw, uri)
        fixture[uri] = KbEntity(types=frozenset(entry.get("types", ())), birth_date=birth)
    return fixture


def load_fixture(path) -> KbFixture:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.colno, exc.msg) from exc
    if not isinstance(obj, dict):
        raise ParseError(path, 1, 1, "expected a JSON object keyed by entity URI")
    return kb_fixture_from_json(obj)


def write_fixture(fixture: KbFixture, path) -> None:
    Path(path).write_text(json.dumps(fixture.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


# --- annotation -----------------------------------------------------------


@dataclass(frozen=True)
class Annotation:
    surface_form: str
    entity_uri: str
    offset: int

    @property
    def end(self) -> int:
        return self.offset + len(self.surface_form)


class AnnotationClient(Protocol):
    def annotate(self, text: str, confidence: float) -> list[Annotation]: ...


class FixtureAnnotationClient:
    """Exact surface-form matcher backed by a ``surface_form -> {uri, confidence}`` table.

    An annotation is emitted only when the entry's confidence is at least the
    requested threshold. Matches respect word boundaries; overlapping matches
    resolve leftmost-longest.
    """

    def __init__(self, table: Mapping[str, Mapping]):
        self.table = {
            form: (entry["uri"], float(entry.get("confidence", 1.0)))
            for form, entry in table.items()
            if form
        }
        forms = sorted(self.table, key=lambda f: (-len(f), f))
        self._pattern = (
            re.compile(r"(?<!\w)(?:" + "|".join(re.escape(f) for f in forms) + r")(?!\w)")
            if forms
            else None
        )

    @classmethod
    def from_file(cls, path) -> "FixtureAnnotationClient":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def from_kb_fixture(cls, fixture: Mapping, confidence: float = 1.0) -> "FixtureAnnotationClient":
        """Surface forms from the DBpedia-style URI local name (``Katy_Perry`` -> ``Katy Perry``)."""
        table = {}
        for uri in fixture:
            label = uri.rstrip("/").rsplit("/", 1)[-1].replace("_", " ")
            table[label] = {"uri": uri, "confidence": confidence}
        return cls(table)

    def annotate(self, text: str, confidence: float) -> list[Annotation]:
        if self._pattern is None or not text:
            return []
        out = []
        for match in self._pattern.finditer(text):
            uri, score = self.table[match.group(0)]
            if score >= confidence:
                out.append(Annotation(match.group(0), uri, match.start()))
        return out


def link_entity(
    name: str,
    description: str,
    client: AnnotationClient,
    confidence: float = DEFAULT_CONFIDENCE,
) -> Optional[str]:
    """Link a profile to a KB entity.

    The name and description are annotated together so the description can
    help disambiguation, but only an annotation lying wholly inside the name
    is accepted.
    """
    if not 0.0 < confidence <= 1.0:
        raise ValueError(f"confidence must lie in (0, 1], got {confidence}")
    if not name:
        return None
    text = name + " " + (description or "")
    try:
        annotations = client.annotate(text, confidence)
    except Exception as exc:  # noqa: BLE001 - any client failure means "no link"
        logger.warning("annotation client failed for %r: %s", name, exc)
        return None
    in_name = [a for a in annotations if a.offset >= 0 and a.end <= len(name)]
    if not in_name:
        return None
    best = min(in_name, key=lambda a: (a.offset, -len(a.surface_form)))
    return best.entity_uri


def enrich_popular(
    candidates: Sequence[UserRecord],
    fixture: Mapping[str, KbEntity],
    client: AnnotationClient,
    reference_date: dt.date = DEFAULT_REFERENCE_DATE,
    confidence: float = DEFAULT_CONFIDENCE,
) -> list[PopularUser]:
    popular = []
    for cand in candidates:
        uri = link_entity(cand.name, cand.description, client, confidence)
        entity = fixture.get(uri) if uri is not None else None
        types = entity.types if entity is not None else frozenset()
        birth = entity.birth_date if entity is not None else None
        if birth is not None and birth > reference_date:
            logger.warning("birth_date %s of %s after reference date; ignored", birth, uri)
            birth = None
        popular.append(
            PopularUser.from_entity(
                user_id=cand.user_id,
                screen_name=cand.screen_name,
                followers_count=cand.followers_count,
                kb_entity_uri=uri,
                kb_types=types,
                birth_date=birth,
                reference_date=reference_date,
            )
        )
    return popular


def expand_popular_users(
    seed: Sequence[PopularUser],
    friend_lookup: Callable[[str], Sequence[str]],
    profile_lookup: Callable[[str], UserRecord],
    max_workers: Optional[int] = None,
) -> list[UserRecord]:
    """Profiles of every friend of every seed user, exactly one hop out.

    Seeds are excluded and duplicates collapse; output is sorted by user id so
    it does not depend on the order lookups complete in.
    """
    if not seed:
        raise ValueError("seed must be nonempty")
    seed_ids = {s.user_id for s in seed}

    def friends_of(uid):
        try:
            return [str(f) for f in friend_lookup(uid)]
        except Exception as exc:  # noqa: BLE001
            logger.warning("friend lookup failed for %s: %s", uid, exc)
            return []

    ordered_seed = sorted(seed_ids)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        friend_lists = list(pool.map(friends_of, ordered_seed))
    wanted = sorted({f for friends in friend_lists for f in friends} - seed_ids)

    def profile_of(uid):
        try:
            return profile_lookup(uid)
        except Exception as exc:  # noqa: BLE001
            logger.warning("profile lookup failed for %s: %s", uid, exc)
            return None

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        profiles = list(pool.map(profile_of, wanted))
    return [p for p in profiles if p is not None]


# --- top-50 seed list -----------------------------------------------------


@dataclass(frozen=True)
class SeedAccount:
    rank: int
    screen_name: str
    wikipedia_url: str

    @property
    def dbpedia_uri(self) -> str:
        return "http://dbpedia.org/resource/" + self.wikipedia_url.rsplit("/", 1)[-1]


def load_top50(path=None) -> list[SeedAccount]:
    """The checked-in list of most-followed accounts used as the expansion seed."""
    if path is None:
        path = Path(__file__).with_name("data") / "top50.json"
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    return [SeedAccount(r["rank"], r["screen_name"], r["wikipedia_url"]) for r in rows]
