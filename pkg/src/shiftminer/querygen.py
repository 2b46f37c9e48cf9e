"""Prompt construction, completion backends, and robust query extraction.

The contract of record for completions is the fixture store: a replay
backend answers each prompt from ``fixtures/llm/<sha256(prompt)>.txt``,
so no test or offline run ever talks to a remote model. A live HTTP
backend (OpenAI-style chat endpoint, configured via environment
variables) and a recording wrapper share the same interface.

Model output is treated as untrusted text: we extract JSON query objects
from it, bind them to typed payloads, and validate; everything else,
including any generated code, is ignored.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from .series import Source
from .sources import (
    QueryFieldError,
    SourceQuery,
    dedup_queries,
    infer_source,
    payload_from_raw,
    validate_query,
    _KNOWN_FIELDS,
)

logger = logging.getLogger(__name__)

PLACEHOLDER_NAMES = ("source_name", "api_docs_summary", "rate_limit_note", "query_count")
_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDER_NAMES) + r")\}")

SOURCE_DISPLAY_NAMES = {
    Source.FRED: "FRED",
    Source.EIA: "EIA",
    Source.YAHOO: "Yahoo Finance",
    Source.TRENDS: "Google Trends",
}


class MissingBindingError(KeyError):
    """A placeholder in the template has no binding."""


class NoQueriesFoundError(Exception):
    """No parseable query object in the completion text."""


class BackendFailureError(Exception):
    """The completion backend failed."""


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt body plus ordered follow-up texts, with named placeholders."""

    name: str
    body: str
    followups: tuple[str, ...] = ()


DISCOVERY_TEMPLATE = PromptTemplate(
    name="discover_sources",
    body=(
        "I want to use general-purpose LLMs such as GPT4 to assist in constructing "
        "time series datasets, with a focus on datasets that suffer from distribution "
        "shifts. Our approach does not involve training a model, just using its "
        "empirical knowledge of past events to suggest datasets and time periods that "
        "might exhibit distributional shifts. For example, S&P500 data suffered a "
        "distribution shift during COVID-19. I want an LLM to generate query terms and "
        "data sources to build a heterogeneous time series dataset from different "
        "domains with distributional shifts. Please provide a list of open time series "
        "datasets from different contexts that can be used to query and extract time "
        "series with distribution shifts. In the list, clarify if the dataset has an "
        "API.\n"
        "Provide the list in latex tabular format with the following columns: Domain, "
        "Name of dataset, Description, API (yes/no), Link, Licence. Leave that column "
        "free if you don't have the link or license."
    ),
    followups=("Provide additional data sources in the same format.",),
)

QUERY_TEMPLATE = PromptTemplate(
    name="generate_queries",
    body=(
        "Let's focus on {source_name}. Please provide Python code to query the API to "
        "download data that might exhibit distribution shifts. I will do statistical "
        "tests to prune the data and only keep the relevant data."
    ),
    followups=(
        "Provide a list of {query_count} queries for the {source_name} dataset in "
        "Python format with the series_id and time ranges that I can use to download "
        "the data that exhibit distribution shifts.",
    ),
)


def render_text(text: str, bindings: dict[str, str]) -> str:
    """Substitute ``{placeholder}`` tokens; leaves unrelated braces alone."""

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise MissingBindingError(name)
        return str(bindings[name])

    return _PLACEHOLDER_RE.sub(substitute, text)


def render_prompt(template: PromptTemplate, bindings: dict[str, str]) -> str:
    """Body plus follow-ups rendered in order, blank-line separated."""
    parts = [render_text(template.body, bindings)]
    parts.extend(render_text(fu, bindings) for fu in template.followups)
    return "\n\n".join(parts)


# --- completion backends ----------------------------------------------------


class CompletionBackend(Protocol):
    name: str
    max_prompt_chars: int

    def complete(self, prompt: str) -> str: ...


def prompt_fingerprint(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ReplayBackend:
    """Answers prompts from ``<root>/<sha256(prompt)>.txt``; deterministic."""

    name = "replay"
    max_prompt_chars = 1_000_000

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def fixture_path(self, prompt: str) -> Path:
        return self.root / f"{prompt_fingerprint(prompt)}.txt"

    def complete(self, prompt: str) -> str:
        path = self.fixture_path(prompt)
        if not path.exists():
            raise BackendFailureError(f"no completion fixture {path}")
        return path.read_text(encoding="utf-8")


def write_completion_fixture(root: str | Path, prompt: str, completion: str) -> Path:
    path = Path(root) / f"{prompt_fingerprint(prompt)}.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(completion, encoding="utf-8")
    return path


class RecordBackend:
    """Wraps a live backend and freezes every completion for replay."""

    name = "record"

    def __init__(self, root: str | Path, inner: CompletionBackend) -> None:
        self.root = Path(root)
        self.inner = inner
        self.max_prompt_chars = inner.max_prompt_chars

    def complete(self, prompt: str) -> str:
        completion = self.inner.complete(prompt)
        write_completion_fixture(self.root, prompt, completion)
        return completion


class HttpBackend:
    """Thin chat-completions client configured entirely from the environment:
    ``LLM_ENDPOINT``, ``LLM_MODEL``, and optionally ``LLM_API_KEY``."""

    name = "http"
    max_prompt_chars = 200_000

    def __init__(self) -> None:
        self.endpoint = os.environ.get("LLM_ENDPOINT")
        self.model = os.environ.get("LLM_MODEL")
        self.api_key = os.environ.get("LLM_API_KEY")
        if not self.endpoint or not self.model:
            raise BackendFailureError("LLM_ENDPOINT and LLM_MODEL must be set for live mode")

    def complete(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                self.endpoint,
                headers=headers,
                json={"model": self.model, "messages": [{"role": "user", "content": prompt}]},
                timeout=120,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:
            raise BackendFailureError(f"completion request failed: {exc}") from exc


# --- extraction -------------------------------------------------------------

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_+-]*\n(.*?)```", re.DOTALL)


def _scan_json_values(text: str) -> list[object]:
    """Balanced-delimiter scan for top-level JSON objects and arrays."""
    decoder = json.JSONDecoder()
    found: list[object] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch not in "{[":
            i += 1
            continue
        try:
            value, end = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            i += 1
            continue
        found.append(value)
        i = end
    return found


def extract_query_objects(llm_output: str) -> list[dict]:
    """Pull raw JSON objects out of completion text, prose tolerated.

    Fenced code blocks are scanned first, then the remaining text; arrays
    are flattened into their object elements, document order preserved.
    """
    raw: list[object] = []
    for match in _FENCE_RE.finditer(llm_output):
        raw.extend(_scan_json_values(match.group(1)))
    remainder = _FENCE_RE.sub(" ", llm_output)
    raw.extend(_scan_json_values(remainder))

    objects: list[dict] = []
    for value in raw:
        if isinstance(value, dict):
            objects.append(value)
        elif isinstance(value, list):
            objects.extend(v for v in value if isinstance(v, dict))
    if not objects:
        raise NoQueriesFoundError("no JSON query objects in completion text")
    return objects


def bind_queries(
    raw_objects: Sequence[dict], source: Source | None = None
) -> tuple[list[SourceQuery], list[tuple[dict, str]]]:
    """Map raw objects to typed queries; returns (accepted, rejected).

    With ``source`` given, objects whose fields belong to a different
    source are rejected; with ``source=None`` the source is inferred from
    the field shape. Unknown extra fields are ignored with a warning.
    """
    accepted: list[SourceQuery] = []
    rejected: list[tuple[dict, str]] = []
    for raw in raw_objects:
        inferred = infer_source(raw)
        target = source or inferred
        if target is None:
            rejected.append((raw, "cannot determine source from fields"))
            continue
        if source is not None and inferred is not None and inferred is not source:
            rejected.append((raw, f"fields identify {inferred.value}, expected {source.value}"))
            continue
        extras = set(raw) - _KNOWN_FIELDS[target]
        if extras:
            logger.warning("ignoring unknown fields %s", sorted(extras))
        try:
            query = SourceQuery(
                source=target,
                payload=payload_from_raw(raw, target),
                comment=str(raw.get("comment", "")),
            )
        except QueryFieldError as exc:
            rejected.append((raw, str(exc)))
            continue
        reasons = validate_query(query)
        if reasons:
            rejected.append((raw, "; ".join(reasons)))
            continue
        accepted.append(query)
    return accepted, rejected


def generate_queries(
    source: Source,
    backend: CompletionBackend,
    query_count: int = 50,
    max_rounds: int = 2,
    template: PromptTemplate | None = None,
) -> list[SourceQuery]:
    """Prompt, extract, bind, and dedup until ``query_count`` queries hold.

    The conversation transcript grows one follow-up per round so every
    round's prompt (and therefore its fixture key) is distinct.
    """
    template = template or QUERY_TEMPLATE
    bindings = {
        "source_name": SOURCE_DISPLAY_NAMES.get(source, source.value),
        "query_count": str(query_count),
    }
    transcript = render_text(template.body, bindings)
    followups = [render_text(fu, bindings) for fu in template.followups] or [
        "Provide additional queries in the same format."
    ]

    limit = getattr(backend, "max_prompt_chars", None)
    if limit is not None and len(transcript) > limit:
        raise BackendFailureError(
            f"prompt of {len(transcript)} chars exceeds backend {backend.name} limit {limit}"
        )

    accepted: list[SourceQuery] = []
    for round_no in range(1, max_rounds + 1):
        if round_no > 1:
            grown = transcript + "\n\n" + followups[min(round_no - 2, len(followups) - 1)]
            if limit is not None and len(grown) > limit:
                logger.info("stopping at round %d: prompt would exceed backend limit", round_no)
                break
            transcript = grown
        try:
            completion = backend.complete(transcript)
        except BackendFailureError:
            raise
        except Exception as exc:
            raise BackendFailureError(f"backend {backend.name} failed: {exc}") from exc
        try:
            raw_objects = extract_query_objects(completion)
        except NoQueriesFoundError:
            logger.info("round %d produced no query objects", round_no)
            continue
        batch, rejects = bind_queries(raw_objects, source)
        for raw, reason in rejects:
            logger.info("rejected query %r: %s", raw, reason)
        accepted = dedup_queries(accepted + batch)
        if len(accepted) >= query_count:
            break
    if not accepted:
        raise NoQueriesFoundError(f"no valid {source.value} queries after {max_rounds} round(s)")
    return accepted[:query_count]


# --- source discovery catalog ------------------------------------------------

_LATEX_ROW_RE = re.compile(r"\\\\\s*$")


def parse_source_table(text: str) -> list[dict]:
    """Parse a LaTeX tabular or markdown table of candidate data sources.

    Expected columns: domain, name, description, API yes/no, link,
    license. Header and rule rows are skipped; short rows are ignored.
    """
    entries: list[dict] = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("|"):
            cells = [c.strip() for c in stripped.strip("|").split("|")]
            if len(cells) < 4 or set(cells[0]) <= {"-", ":", " "}:
                continue
        elif "&" in stripped:
            if stripped.startswith(("\\hline", "\\toprule", "\\midrule", "\\bottomrule")):
                continue
            cells = [c.strip().rstrip("\\").strip() for c in _LATEX_ROW_RE.sub("", stripped).split("&")]
        else:
            continue
        if len(cells) < 4 or cells[0].lower() in ("domain", "---"):
            continue
        cells += [""] * (6 - len(cells))
        entries.append(
            {
                "domain": cells[0],
                "name": cells[1],
                "description": cells[2],
                "has_api": cells[3].strip().lower().startswith("yes"),
                "link": cells[4],
                "license": cells[5],
            }
        )
    return entries


def discover_sources(backend: CompletionBackend, max_rounds: int = 1) -> list[dict]:
    """Run the discovery prompt and parse the returned table (informational)."""
    transcript = render_text(DISCOVERY_TEMPLATE.body, {})
    entries: list[dict] = []
    for round_no in range(1, max_rounds + 1):
        if round_no > 1:
            transcript += "\n\n" + DISCOVERY_TEMPLATE.followups[0]
        try:
            completion = backend.complete(transcript)
        except Exception as exc:
            raise BackendFailureError(f"backend {backend.name} failed: {exc}") from exc
        entries.extend(parse_source_table(completion))
    seen: set[str] = set()
    unique = []
    for entry in entries:
        if entry["name"] in seen:
            continue
        seen.add(entry["name"])
        unique.append(entry)
    return unique


def write_catalog(entries: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(list(entries), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_catalog(path: str | Path) -> list[dict]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
