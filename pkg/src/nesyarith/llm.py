"""Prompting and scoring for an external text-completion endpoint.

Prompt building and completion parsing are pure and fully testable offline;
only :func:`query_endpoint` touches the network.  The prompt shows a single
solved demonstration terminated by a stop token, then asks the model to
complete ``<query>=``.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import requests

from . import datagen as dg
from . import expr as ex

STOP_TOKEN = "<END>"


class InvalidDemoError(ValueError):
    """The demonstration result does not equal the demonstration value."""


class NetworkError(RuntimeError):
    pass


class AuthError(RuntimeError):
    pass


class RateLimitedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ParseFailure:
    """Completion did not reduce to a bare integer; scored as wrong."""

    text: str


@dataclass(frozen=True)
class PromptSpec:
    demo_expr: str
    demo_result: int
    query_expr: str
    stop_token: str = STOP_TOKEN


DEFAULT_DEMO = ("((2+4)*6)", 36)


def build_prompt(spec: PromptSpec) -> str:
    """``{demo}={result}<END>\\n{query}=`` byte-exactly, nothing else."""
    if ex.evaluate(ex.parse(spec.demo_expr, require_chain=False)) != spec.demo_result:
        raise InvalidDemoError(
            f"{spec.demo_expr} evaluates to something other than {spec.demo_result}"
        )
    ex.parse(spec.query_expr, require_chain=False)  # raises on malformed queries
    return f"{spec.demo_expr}={spec.demo_result}{spec.stop_token}\n{spec.query_expr}="


def parse_completion(text: str) -> int | ParseFailure:
    """Truncate at the stop token, trim, and accept only a bare integer."""
    stop = text.find(STOP_TOKEN)
    if stop >= 0:
        text = text[:stop]
    text = text.strip()
    if text and (text[1:] if text[0] == "-" else text).isdigit():
        return int(text)
    return ParseFailure(text)


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    api_key: str = ""
    model: str = "text-davinci-003"
    max_tokens: int = 8
    temperature: float = 0.0
    timeout: float = 30.0
    max_attempts: int = 3
    backoff_base: float = 0.5

    @staticmethod
    def from_env(**overrides) -> "EndpointConfig":
        url = os.environ.get("LLM_ENDPOINT", "")
        if not url:
            raise ValueError("LLM_ENDPOINT is not set")
        return EndpointConfig(
            url=url, api_key=os.environ.get("LLM_API_KEY", ""), **overrides
        )


def query_endpoint(endpoint: EndpointConfig, prompt: str) -> str:
    """POST the completion request; return the first completion string.

    401/403 raise AuthError immediately; 429 and 5xx/connection problems are
    retried with exponential backoff and surface as RateLimitedError or
    NetworkError once the attempts run out.
    """
    body = {
        "model": endpoint.model,
        "prompt": prompt,
        "stop": [STOP_TOKEN],
        "max_tokens": endpoint.max_tokens,
        "temperature": endpoint.temperature,
    }
    headers = {"Content-Type": "application/json"}
    if endpoint.api_key:
        headers["Authorization"] = f"Bearer {endpoint.api_key}"

    last_error: Exception | None = None
    for attempt in range(endpoint.max_attempts):
        if attempt:
            time.sleep(endpoint.backoff_base * 2 ** (attempt - 1))
        try:
            resp = requests.post(
                endpoint.url, json=body, headers=headers, timeout=endpoint.timeout
            )
        except requests.RequestException as err:
            last_error = NetworkError(f"request failed: {err}")
            continue
        if resp.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credentials ({resp.status_code})")
        if resp.status_code == 429:
            last_error = RateLimitedError("rate limited (429)")
            continue
        if resp.status_code >= 500:
            last_error = NetworkError(f"server error ({resp.status_code})")
            continue
        if resp.status_code != 200:
            raise NetworkError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["text"]
        except (ValueError, KeyError, IndexError, TypeError) as err:
            raise NetworkError(f"malformed completion response: {err}") from err
    assert last_error is not None
    raise last_error


def evaluate_llm(
    endpoint: EndpointConfig,
    nesting_list: Sequence[int],
    n_batches: int = 10,
    batch_size: int = 10,
    rng: np.random.Generator | None = None,
    *,
    demo: tuple[str, int] = DEFAULT_DEMO,
    ratios: tuple[int, int, int] = (80, 10, 10),
    reserved: frozenset[str] = frozenset(),
    condition: str = "llm",
):
    """Score the endpoint on expression resolution, batches of 10 by default.

    A completion that fails to parse still gets character accuracy against
    its trimmed text; it simply cannot be an exact match unless the strings
    happen to agree.
    """
    from .evalharness import EvalRecord, _aggregate, _score_batch  # avoid cycle

    if rng is None:
        rng = np.random.default_rng(0)
    records: list[EvalRecord] = []
    for nesting in nesting_list:
        stats = []
        for _ in range(n_batches):
            batch = dg.sample_batch(
                rng, dg.Task.END_TO_END, [nesting], batch_size, dg.Split.TEST,
                ratios=ratios, reserved=reserved,
            )
            outputs: list[Optional[str]] = []
            for exm in batch:
                prompt = build_prompt(
                    PromptSpec(demo_expr=demo[0], demo_result=demo[1],
                               query_expr=exm.input_text)
                )
                completion = query_endpoint(endpoint, prompt)
                parsed = parse_completion(completion)
                outputs.append(
                    str(parsed) if isinstance(parsed, int) else parsed.text
                )
            stats.append(_score_batch(outputs, [e.target_text for e in batch]))
        records.append(_aggregate(condition, nesting, stats, batch_size))
    return records
