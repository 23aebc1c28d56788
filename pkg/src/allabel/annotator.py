"""Annotation backends and model-output handling.

Three interchangeable backends produce completions: an HTTP client for
chat-completion endpoints, a deterministic simulator for desk-scale
experiments, and a replay backend that serves completions recorded in a
results log. All of them implement ``annotate_sample`` so the harness does
not care which one it drives.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from .corpus import AnnotatedSample, DatasetSchema, EntityRecord, Sample
from .errors import AnnotatorError, CapabilityError, DataError, OutputParseError
from .prompting import Demonstration, render_annotations

__all__ = [
    "Completion",
    "perplexity",
    "prompt_hash",
    "AnnotatorConfig",
    "Annotator",
    "HttpAnnotator",
    "annotate",
    "ParsedOutput",
    "parse_output",
    "SimulatedModel",
    "simulated_annotate",
    "SimulatedAnnotator",
    "ReplayAnnotator",
    "ResultsLog",
]

logger = logging.getLogger("allabel.annotator")


@dataclass(frozen=True)
class Completion:
    """Raw model output plus per-token log-probabilities when available."""

    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None = None
    model: str | None = None


def perplexity(completion: Completion) -> float:
    """exp of the negative mean token log-probability of the completion."""
    if not completion.token_logprobs:
        raise CapabilityError("completion carries no token log-probabilities")
    values = [lp for _, lp in completion.token_logprobs]
    return math.exp(-sum(values) / len(values))


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class Annotator(Protocol):
    """Anything that can annotate one query given its prompt."""

    annotator_id: str
    supports_logprobs: bool

    def annotate_sample(
        self, query: Sample, demonstrations: Sequence[Demonstration], prompt: str
    ) -> Completion: ...


# ---------------------------------------------------------------------------
# HTTP chat-completion backend


@dataclass(frozen=True)
class AnnotatorConfig:
    """Connection, sampling, and retry settings for the HTTP backend.

    The credential is read from the named environment variable at call time
    and never logged.
    """

    endpoint: str
    model: str
    temperature: float = 0.0
    logprobs: bool = True
    timeout: float = 60.0
    max_in_flight: int = 4
    max_attempts: int = 5
    backoff_base: float = 0.5
    backoff_multiplier: float = 2.0
    jitter: float = 0.25
    credential_env: str = "ALLABEL_API_KEY"


Transport = Callable[[str, dict, dict, float], tuple[int, object]]


def _requests_transport(endpoint: str, payload: dict, headers: dict, timeout: float):
    import requests

    resp = requests.post(endpoint, json=payload, headers=headers, timeout=timeout)
    try:
        body: object = resp.json()
    except ValueError:
        body = resp.text
    return resp.status_code, body


class HttpAnnotator:
    """Chat-completion client with bounded concurrency and retry backoff.

    Retries transport failures, 429, and 5xx responses with exponential
    backoff plus jitter; authentication failures and malformed bodies fail
    fast. At most ``max_in_flight`` requests are ever outstanding.
    """

    supports_logprobs = True

    def __init__(self, config: AnnotatorConfig, transport: Transport | None = None) -> None:
        self.config = config
        self._transport = transport or _requests_transport
        self._gate = threading.Semaphore(config.max_in_flight)
        self.annotator_id = f"live:{config.model}@{config.endpoint}"

    def _headers(self) -> dict:
        key = os.environ.get(self.config.credential_env, "")
        if not key:
            raise AnnotatorError(
                f"credential environment variable {self.config.credential_env} is not set"
            )
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _payload(self, prompt: str) -> dict:
        payload: dict = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }
        if self.config.logprobs:
            payload["logprobs"] = True
        return payload

    def annotate(self, prompt: str) -> Completion:
        cfg = self.config
        headers = self._headers()
        payload = self._payload(prompt)
        last_failure = "no attempt made"
        for attempt in range(1, cfg.max_attempts + 1):
            try:
                with self._gate:
                    status, body = self._transport(
                        cfg.endpoint, payload, headers, cfg.timeout
                    )
            except Exception as exc:
                last_failure = f"transport error: {exc}"
                status = None
            else:
                if status == 200:
                    return self._parse_body(body)
                if status in (401, 403):
                    raise AnnotatorError(
                        f"authentication rejected (HTTP {status}); check the "
                        f"{cfg.credential_env} environment variable"
                    )
                if status == 429 or 500 <= status < 600:
                    last_failure = f"HTTP {status}"
                else:
                    raise AnnotatorError(f"unexpected HTTP {status} from {cfg.endpoint}")
            if attempt < cfg.max_attempts:
                delay = cfg.backoff_base * (cfg.backoff_multiplier ** (attempt - 1))
                delay *= 1.0 + cfg.jitter * random.random()
                logger.warning(
                    "annotation attempt %d/%d failed (%s); retrying in %.2fs",
                    attempt, cfg.max_attempts, last_failure, delay,
                )
                if delay > 0:
                    time.sleep(delay)
        raise AnnotatorError(
            f"annotation failed after {cfg.max_attempts} attempts; last: {last_failure}"
        )

    def _parse_body(self, body: object) -> Completion:
        try:
            assert isinstance(body, dict)
            choice = body["choices"][0]
            text = choice["message"]["content"]
            assert isinstance(text, str)
        except (AssertionError, KeyError, IndexError, TypeError) as exc:
            raise AnnotatorError(f"malformed completion response: {exc!r}") from exc
        token_logprobs = None
        lp = choice.get("logprobs")
        if isinstance(lp, dict) and isinstance(lp.get("content"), list):
            try:
                token_logprobs = tuple(
                    (str(t["token"]), float(t["logprob"])) for t in lp["content"]
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise AnnotatorError(f"malformed logprobs payload: {exc!r}") from exc
        return Completion(text=text, token_logprobs=token_logprobs, model=self.config.model)

    def annotate_sample(
        self, query: Sample, demonstrations: Sequence[Demonstration], prompt: str
    ) -> Completion:
        return self.annotate(prompt)

    def annotate_batch(self, prompts: Sequence[str]) -> list[Completion]:
        """Annotate many prompts; results come back in input order."""
        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            return list(pool.map(self.annotate, prompts))


def annotate(prompt: str, config: AnnotatorConfig, transport: Transport | None = None) -> Completion:
    """One-shot convenience wrapper around HttpAnnotator."""
    return HttpAnnotator(config, transport=transport).annotate(prompt)


# ---------------------------------------------------------------------------
# Output parsing


@dataclass(frozen=True)
class ParsedOutput:
    """Schema-shaped annotations recovered from raw model text."""

    annotations: dict[str, tuple[EntityRecord, ...]]
    violations: tuple[str, ...]


def parse_output(text: str, schema: DatasetSchema) -> ParsedOutput:
    """Extract the first JSON array from model output and shape-check it.

    Surrounding prose and code fences are ignored. Structural failures (no
    array, elements that are not objects) raise; schema mismatches such as
    unknown entity types or attributes are collected as violations and the
    offending pieces dropped. Entity types the model never mentioned come
    back as empty lists.
    """
    decoder = json.JSONDecoder()
    payload: list | None = None
    pos = text.find("[")
    while pos != -1:
        try:
            candidate, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("[", pos + 1)
            continue
        payload = candidate
        break
    if payload is None:
        raise OutputParseError("no JSON array found in model output")
    if not isinstance(payload, list):
        raise OutputParseError("model output is not a JSON array")
    if not all(isinstance(el, dict) for el in payload):
        raise OutputParseError("model output must be an array of objects")

    known = set(schema.type_names)
    collected: dict[str, list[EntityRecord]] = {t: [] for t in schema.type_names}
    violations: list[str] = []
    for el in payload:
        for key, value in el.items():
            if key not in known:
                violations.append(f"unknown entity type {key!r}")
                continue
            if not isinstance(value, list):
                violations.append(f"records for {key!r} must be a list")
                continue
            allowed = set(schema.attributes_of(key))
            for rec in value:
                if not isinstance(rec, dict):
                    violations.append(f"record for {key!r} must be an object")
                    continue
                fields: list[tuple[str, str]] = []
                for attr, v in rec.items():
                    if attr not in allowed:
                        violations.append(f"{key!r} record has unknown attribute {attr!r}")
                        continue
                    if isinstance(v, bool):
                        fields.append((attr, "true" if v else "false"))
                    elif isinstance(v, (str, int, float)):
                        fields.append((attr, str(v)))
                    else:
                        violations.append(f"{key!r}.{attr} has a non-scalar value")
                if fields:
                    collected[key].append(EntityRecord(tuple(fields)))
                else:
                    violations.append(f"dropped a record for {key!r} with no usable fields")
    return ParsedOutput(
        annotations={t: tuple(rs) for t, rs in collected.items()},
        violations=tuple(violations),
    )


# ---------------------------------------------------------------------------
# Simulated backend

_PP_BASE = 3.5
_PP_GAIN = 3.0


@dataclass(frozen=True)
class SimulatedModel:
    """Behavior knobs of the simulated annotator.

    Per entity type, the output is correct with probability
    min(1, alpha0 + beta * mean demonstration similarity); otherwise the
    corruption rule kicks in. Synthesized token log-probabilities make the
    completion's perplexity fall as demonstration similarity rises.
    """

    alpha0: float = 0.3
    beta: float = 0.6
    seed: int = 0
    corruption: str = "drop_or_perturb"

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha0 <= 1.0:
            raise DataError("alpha0 must lie in [0, 1]")
        if self.beta < 0.0:
            raise DataError("beta must be non-negative")
        if self.corruption != "drop_or_perturb":
            raise DataError(f"unknown corruption rule {self.corruption!r}")


def _corrupt(
    records: tuple[EntityRecord, ...],
    type_name: str,
    schema: DatasetSchema,
    rng: random.Random,
) -> tuple[EntityRecord, ...]:
    """Produce a wrong value set: fabricate, drop one, or perturb one."""
    if not records:
        attrs = schema.attributes_of(type_name)
        return (
            EntityRecord(tuple((a, f"phantom {a} {rng.randrange(1000)}") for a in attrs)),
        )
    if rng.random() < 0.5:
        out = list(records)
        out.pop(rng.randrange(len(out)))
        return tuple(out)
    i = rng.randrange(len(records))
    fields = list(records[i].fields)
    j = rng.randrange(len(fields))
    attr, value = fields[j]
    fields[j] = (attr, value + "?")
    out = list(records)
    out[i] = EntityRecord(tuple(fields))
    return tuple(out)


def _mean_similarity(demonstrations: Sequence[Demonstration]) -> float:
    if not demonstrations:
        return 0.0
    clipped = [min(1.0, max(0.0, d.score)) for d in demonstrations]
    return sum(clipped) / len(clipped)


def _query_jitter(query_id: str) -> float:
    digest = hashlib.sha256(query_id.encode("utf-8")).digest()
    return (int.from_bytes(digest[:4], "big") % 1000) / 2000.0


def simulated_annotate(
    query: Sample,
    demonstrations: Sequence[Demonstration],
    gold: AnnotatedSample,
    model: SimulatedModel,
    schema: DatasetSchema,
) -> Completion:
    """Deterministic mock annotation of one query.

    The same seed, query, and demonstrations always produce the same
    completion. Higher mean demonstration similarity raises the per-type
    chance of emitting the gold records and lowers the synthesized
    perplexity.
    """
    sim = _mean_similarity(demonstrations)
    p_correct = min(1.0, model.alpha0 + model.beta * sim)
    key = f"{model.seed}|{query.id}|" + "|".join(d.id for d in demonstrations)
    rng = random.Random(key)
    predicted: dict[str, tuple[EntityRecord, ...]] = {}
    for type_name in schema.type_names:
        gold_records = gold.annotations.get(type_name, ())
        if rng.random() < p_correct:
            predicted[type_name] = tuple(gold_records)
        else:
            predicted[type_name] = _corrupt(gold_records, type_name, schema, rng)
    text = render_annotations(predicted, schema)
    exponent = _PP_BASE - _PP_GAIN * sim + _query_jitter(query.id)
    token_logprobs = tuple((tok, -exponent) for tok in text.split())
    return Completion(text=text, token_logprobs=token_logprobs, model="sim")


class SimulatedAnnotator:
    """Annotator facade over simulated_annotate for a fixed corpus."""

    supports_logprobs = True

    def __init__(
        self,
        model: SimulatedModel,
        schema: DatasetSchema,
        gold: Mapping[str, AnnotatedSample],
    ) -> None:
        self.model = model
        self.schema = schema
        self.gold = gold
        self.annotator_id = (
            f"sim:a{model.alpha0:g},b{model.beta:g},s{model.seed}"
        )

    def annotate_sample(
        self, query: Sample, demonstrations: Sequence[Demonstration], prompt: str
    ) -> Completion:
        gold = self.gold.get(query.id)
        if gold is None:
            raise DataError(f"simulated annotator has no gold annotation for {query.id!r}")
        return simulated_annotate(query, demonstrations, gold, self.model, self.schema)


# ---------------------------------------------------------------------------
# Results log and replay backend


def _completion_to_obj(completion: Completion) -> dict:
    return {
        "text": completion.text,
        "token_logprobs": (
            None
            if completion.token_logprobs is None
            else [[t, lp] for t, lp in completion.token_logprobs]
        ),
        "model": completion.model,
    }


def _completion_from_obj(obj: dict) -> Completion:
    raw = obj.get("token_logprobs")
    return Completion(
        text=str(obj["text"]),
        token_logprobs=(
            None if raw is None else tuple((str(t), float(lp)) for t, lp in raw)
        ),
        model=obj.get("model"),
    )


class ResultsLog:
    """Append-only JSON-lines record of every annotation call.

    One object per line with sample id, annotator id, prompt hash, the raw
    completion, the parsed annotations when parseable, and an error field
    otherwise. A torn final line (from a killed process) is dropped on load;
    corruption anywhere else is an error.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[tuple[str, str, str], dict] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        lines = self.path.read_bytes().splitlines(keepends=True)
        valid_end = 0
        for n, raw in enumerate(lines):
            try:
                line = raw.decode("utf-8").strip()
                rec = json.loads(line) if line else None
            except (UnicodeDecodeError, json.JSONDecodeError):
                if n == len(lines) - 1:
                    # a killed process leaves a half-written record; cut it
                    # off so later appends continue a clean file
                    logger.warning("dropping torn final line of %s", self.path)
                    with open(self.path, "r+b") as fh:
                        fh.truncate(valid_end)
                    break
                raise DataError(f"{self.path}:{n + 1}: corrupt results log line")
            if rec is not None:
                if not isinstance(rec, dict):
                    raise DataError(f"{self.path}:{n + 1}: corrupt results log line")
                self._records[self._key(rec)] = rec
            valid_end += len(raw)

    @staticmethod
    def _key(rec: dict) -> tuple[str, str, str]:
        return (str(rec.get("annotator")), str(rec.get("sample_id")), str(rec.get("prompt_hash")))

    def __len__(self) -> int:
        return len(self._records)

    def get(self, annotator_id: str, sample_id: str, phash: str) -> dict | None:
        return self._records.get((annotator_id, sample_id, phash))

    def append(
        self,
        sample_id: str,
        annotator_id: str,
        phash: str,
        completion: Completion | None,
        parsed: dict | None,
        error: str | None = None,
    ) -> dict:
        rec: dict = {
            "sample_id": sample_id,
            "annotator": annotator_id,
            "prompt_hash": phash,
            "completion": None if completion is None else _completion_to_obj(completion),
            "parsed": parsed,
        }
        if error is not None:
            rec["error"] = error
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False))
                fh.write("\n")
                fh.flush()
            self._records[self._key(rec)] = rec
        return rec


class ReplayAnnotator:
    """Serve completions recorded in a results log, keyed by prompt hash."""

    supports_logprobs = True

    def __init__(self, log_path: str | Path) -> None:
        self.path = Path(log_path)
        self.annotator_id = f"replay:{self.path.name}"
        self._by_hash: dict[str, Completion] = {}
        log = ResultsLog(self.path)
        for rec in log._records.values():
            if rec.get("completion") is not None:
                self._by_hash[str(rec["prompt_hash"])] = _completion_from_obj(rec["completion"])

    def annotate_sample(
        self, query: Sample, demonstrations: Sequence[Demonstration], prompt: str
    ) -> Completion:
        completion = self._by_hash.get(prompt_hash(prompt))
        if completion is None:
            raise AnnotatorError(
                f"replay log {self.path} has no completion for sample {query.id!r}"
            )
        return completion
