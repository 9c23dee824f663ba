"""Action-label decomposition into phase descriptions and their encoding.

The flow is: an LLM turns an action label into one description per phase
(start/middle/end from a step-by-step prompt, global from a separate
prompt), responses are cached on disk, and each description is wrapped
into a fixed video-caption template, encoded to a text vector and
projected into the shared visual-textual space, one projection per phase.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np
import torch
from filelock import FileLock

from .errors import DescriptionParseError, ProviderError
from .phases import CANONICAL_PHASES, Phase, parse_phase, temporal_phases

DECOMPOSE_TEMPLATE = (
    "Decompose the action of {action} into coherent {count} phases based on "
    "the natural temporal progression of the action. "
    "Please provide the output step by step."
)
GLOBAL_TEMPLATE = "Describe how a person does {action}."
WRAP_PREFIX = "a video of people's motion that "
_SENTENCE_LEAD = "The person would"

_COUNT_WORDS = {2: "two", 3: "three", 4: "four", 5: "five", 6: "six"}


def build_phase_prompt(action: str, n_phases: int) -> str:
    """Prompt asking for an n-way temporal decomposition of an action label."""
    if not action:
        raise ValueError("action name must be nonempty")
    if n_phases not in _COUNT_WORDS:
        raise ValueError(f"n_phases must be in [2, 6], got {n_phases}")
    return DECOMPOSE_TEMPLATE.format(action=action, count=_COUNT_WORDS[n_phases])


def build_global_prompt(action: str) -> str:
    """Prompt asking for a single holistic description of an action label."""
    if not action:
        raise ValueError("action name must be nonempty")
    return GLOBAL_TEMPLATE.format(action=action)


def wrap_description(d: str) -> str:
    """Embed a phase description into the fixed video-caption template.

    Only the first character is lower-cased; the "The person would" lead-in
    is kept verbatim.  Wrapping an already-wrapped string is rejected.
    """
    if not d:
        raise ValueError("description must be nonempty")
    if d.startswith(WRAP_PREFIX):
        raise ValueError("description is already wrapped")
    return WRAP_PREFIX + d[0].lower() + d[1:]


def merge_descriptions(pds: "PhaseDescriptionSet") -> str:
    """Concatenate all phase descriptions into one string, in phase order."""
    ordered = sorted(pds.descriptions, key=lambda p: (p.rank, p.value))
    return " ".join(pds.descriptions[p] for p in ordered)


@dataclass(frozen=True)
class PhaseDescriptionSet:
    """One description per phase for a single action class."""

    class_name: str
    descriptions: dict[Phase, str]

    def __post_init__(self):
        if not self.class_name:
            raise ValueError("class_name must be nonempty")
        for phase, text in self.descriptions.items():
            if not text:
                raise ValueError(f"empty description for {self.class_name}/{phase}")

    def to_json_obj(self) -> dict[str, str]:
        ordered = sorted(self.descriptions, key=lambda p: (p.rank, p.value))
        return {p.value: self.descriptions[p] for p in ordered}

    @classmethod
    def from_json_obj(cls, class_name: str, obj: Mapping[str, str]) -> "PhaseDescriptionSet":
        return cls(class_name, {parse_phase(tag): text for tag, text in obj.items()})


class LlmClient(Protocol):
    """Minimal completion interface; implementations must be replayable."""

    provider: str
    model: str

    def complete(self, prompt: str) -> str: ...


class ScriptedLlmClient:
    """Canned prompt -> response mapping for tests and offline runs."""

    def __init__(self, responses: Mapping[str, str], provider: str = "scripted",
                 model: str = "fixture"):
        self.provider = provider
        self.model = model
        self._responses = dict(responses)
        self.calls: list[str] = []

    def complete(self, prompt: str) -> str:
        self.calls.append(prompt)
        try:
            return self._responses[prompt]
        except KeyError:
            raise ProviderError(f"no scripted response for prompt: {prompt!r}") from None


class FailingLlmClient:
    """Client that always fails; useful to prove cache hits bypass the network."""

    def __init__(self, provider: str = "failing", model: str = "none"):
        self.provider = provider
        self.model = model

    def complete(self, prompt: str) -> str:
        raise ProviderError("client configured to fail")


class HttpLlmClient:
    """OpenAI-compatible chat-completions backend.

    Credentials come from the environment variable named by ``api_key_env``;
    nothing network-related happens until :meth:`complete` is called.
    """

    def __init__(self, model: str, base_url: str = "https://api.openai.com/v1",
                 provider: str = "openai", api_key_env: str = "OPENAI_API_KEY",
                 timeout: float = 60.0):
        self.provider = provider
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        import requests

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise ProviderError(f"environment variable {self.api_key_env} is not set")
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                headers={"Authorization": f"Bearer {api_key}"},
                json={
                    "model": self.model,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": 0,
                },
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:  # noqa: BLE001 - normalize all backend failures
            raise ProviderError(f"{self.provider}/{self.model} request failed: {exc}") from exc


# Answer shape: "In the <tag> phase, the person would <text>."
_PHASE_SENTENCE = re.compile(
    r"In the (?P<tag>start|middle|mid1|mid2|mid3|end) phase, the person would\s+"
    r"(?P<text>.+?)(?=\s*In the (?:start|middle|mid1|mid2|mid3|end) phase,|\s*$)",
    re.IGNORECASE | re.DOTALL,
)


def parse_decomposition(response: str, phases: Sequence[Phase]) -> dict[Phase, str]:
    """Parse a phase-tagged decomposition answer into full sentences.

    Expects exactly one "In the <tag> phase, the person would ..." clause per
    requested temporal phase.  Anything else is a hard parse error; no fuzzy
    repair is attempted.
    """
    found: dict[Phase, str] = {}
    for m in _PHASE_SENTENCE.finditer(response):
        phase = parse_phase(m.group("tag").lower())
        text = m.group("text").strip()
        if not text.endswith("."):
            text += "."
        if phase in found:
            raise DescriptionParseError(f"duplicate {phase} clause in response", response)
        found[phase] = f"{_SENTENCE_LEAD} {text}"
    missing = [p for p in phases if p not in found]
    if missing:
        raise DescriptionParseError(
            f"response lacks clauses for phases: {[str(p) for p in missing]}", response)
    extra = [p for p in found if p not in phases]
    if extra:
        raise DescriptionParseError(
            f"response has unexpected phase clauses: {[str(p) for p in extra]}", response)
    return {p: found[p] for p in phases}


def parse_global_description(response: str) -> str:
    """Parse the holistic answer, expected to read "The person would ..."."""
    text = response.strip()
    if not text.startswith(_SENTENCE_LEAD):
        raise DescriptionParseError(
            f'global answer must start with "{_SENTENCE_LEAD}"', response)
    if not text.endswith("."):
        text += "."
    return text


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", name)


class DescriptionCache:
    """File-backed store of decomposition results.

    One JSON file per (provider, model, phase-set size); inside, a UTF-8 map
    of class name to {phase tag: description} with classes sorted by name and
    phases in canonical order.  Writes take an exclusive file lock; reads go
    against the atomically-replaced file and need no lock.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, provider: str, model: str, n_phases: int) -> Path:
        return self.root / f"{_slug(provider)}__{_slug(model)}__phases{n_phases}.json"

    def get(self, provider: str, model: str, action: str,
            n_phases: int) -> PhaseDescriptionSet | None:
        path = self._path(provider, model, n_phases)
        if not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        if action not in data:
            return None
        return PhaseDescriptionSet.from_json_obj(action, data[action])

    def put(self, provider: str, model: str, n_phases: int,
            pds: PhaseDescriptionSet) -> None:
        path = self._path(provider, model, n_phases)
        lock = FileLock(str(path) + ".lock")
        with lock:
            data = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
            data[pds.class_name] = pds.to_json_obj()
            _dump_sorted(path, data)


def _dump_sorted(path: Path, obj: dict[str, dict[str, str]]) -> None:
    """Write class -> {phase: text} JSON atomically, classes sorted by name."""
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps({k: obj[k] for k in sorted(obj)}, indent=2,
                              ensure_ascii=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def write_description_file(path: str | Path,
                           sets: Mapping[str, PhaseDescriptionSet]) -> None:
    """Serialize class -> phase descriptions with deterministic ordering."""
    _dump_sorted(Path(path), {name: pds.to_json_obj() for name, pds in sets.items()})


def read_description_file(path: str | Path) -> dict[str, PhaseDescriptionSet]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {name: PhaseDescriptionSet.from_json_obj(name, obj) for name, obj in data.items()}


def decompose_label(action: str, client: LlmClient, cache: DescriptionCache,
                    phases: Sequence[Phase] = CANONICAL_PHASES) -> PhaseDescriptionSet:
    """Obtain phase descriptions for an action, via cache or the LLM.

    A cache hit never touches the client.  On a miss the temporal phases come
    from one decomposition prompt and the global description (if requested)
    from a second prompt; the parsed set is written back before returning.
    """
    if not action:
        raise ValueError("action name must be nonempty")
    n = len(phases)
    cached = cache.get(client.provider, client.model, action, n)
    if cached is not None:
        return cached

    descriptions: dict[Phase, str] = {}
    temporal = temporal_phases(tuple(phases))
    if temporal:
        response = client.complete(build_phase_prompt(action, len(temporal)))
        descriptions.update(parse_decomposition(response, temporal))
    if Phase.GLOBAL in phases:
        response = client.complete(build_global_prompt(action))
        descriptions[Phase.GLOBAL] = parse_global_description(response)

    pds = PhaseDescriptionSet(action, descriptions)
    cache.put(client.provider, client.model, n, pds)
    return pds


class DescriptionLibrary:
    """In-memory class -> description-set lookup used by training and inference.

    Kept as a tiny class (rather than a bare dict) so tests can substitute an
    access-tracking double and verify which classes were ever read.
    """

    def __init__(self, sets: Mapping[str, PhaseDescriptionSet]):
        self._sets = dict(sets)

    @classmethod
    def from_file(cls, path: str | Path) -> "DescriptionLibrary":
        return cls(read_description_file(path))

    def classes(self) -> list[str]:
        return sorted(self._sets)

    def get(self, class_name: str) -> PhaseDescriptionSet:
        try:
            return self._sets[class_name]
        except KeyError:
            raise KeyError(f"no descriptions for class {class_name!r}") from None


class TextEncoder(Protocol):
    """Deterministic text -> vector map; same string must give identical bits."""

    dim: int

    def encode(self, text: str) -> np.ndarray: ...


class HashedTextEncoder:
    """Offline stand-in for a pretrained text encoder.

    Each token maps to a fixed Gaussian vector derived from a stable hash of
    (seed, token); the text embedding is the mean over token vectors,
    L2-normalized.  Exact-text overrides take precedence and are how the
    synthetic benchmark couples descriptions to visual prototypes.
    """

    def __init__(self, dim: int = 32, seed: int = 0,
                 text_overrides: Mapping[str, np.ndarray] | None = None):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._overrides = {t: np.asarray(v, dtype=np.float32)
                           for t, v in (text_overrides or {}).items()}
        for text, vec in self._overrides.items():
            if vec.shape != (dim,):
                raise ValueError(f"override for {text!r} has shape {vec.shape}, want ({dim},)")
        self._token_cache: dict[str, np.ndarray] = {}

    @classmethod
    def from_overrides_file(cls, path: str | Path, seed: int = 0) -> "HashedTextEncoder":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        dims = {len(v) for v in obj.values()}
        if len(dims) != 1:
            raise ValueError("override vectors have inconsistent dimensions")
        return cls(dim=dims.pop(), seed=seed,
                   text_overrides={t: np.asarray(v) for t, v in obj.items()})

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(f"{self.seed}:{token}".encode(), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim).astype(np.float32)
            self._token_cache[token] = vec
        return vec

    def encode(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("text must be nonempty")
        override = self._overrides.get(text)
        if override is not None:
            return override.copy()
        tokens = re.findall(r"[a-z0-9]+", text.lower())
        if not tokens:
            raise ValueError(f"text has no encodable tokens: {text!r}")
        pooled = np.mean([self._token_vector(t) for t in tokens], axis=0)
        norm = float(np.linalg.norm(pooled))
        if norm > 0:
            pooled = pooled / norm
        return pooled.astype(np.float32)


@dataclass
class PhaseEmbeddingBank:
    """Per-phase matrix of class embeddings in the shared space, one row per class."""

    phase: Phase
    embeddings: torch.Tensor
    class_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.embeddings.ndim != 2 or min(self.embeddings.shape) < 1:
            raise ValueError(f"bank must be a C x D matrix, got {tuple(self.embeddings.shape)}")
        if not torch.isfinite(self.embeddings).all():
            raise ValueError("bank contains non-finite entries")

    @property
    def num_classes(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def encode_phase_bank(vocab: Sequence[str],
                      descs: Mapping[str, PhaseDescriptionSet],
                      enc: TextEncoder,
                      phase: Phase,
                      proj: torch.nn.Module) -> PhaseEmbeddingBank:
    """Encode one phase's wrapped descriptions for every class and project them.

    Row order follows ``vocab``.  ``proj`` is the phase-specific map into the
    shared space; gradients flow through it, so banks built inside a training
    step train the projection end to end.
    """
    rows = []
    for name in vocab:
        if name not in descs:
            raise KeyError(f"no description set for class {name!r}")
        per_phase = descs[name].descriptions
        if phase not in per_phase:
            raise KeyError(f"class {name!r} has no description for phase {phase}")
        rows.append(enc.encode(wrap_description(per_phase[phase])))
    params = list(proj.parameters())
    dtype = params[0].dtype if params else torch.float32
    bank = proj(torch.from_numpy(np.stack(rows)).to(dtype))
    return PhaseEmbeddingBank(phase=phase, embeddings=bank,
                              class_index={name: i for i, name in enumerate(vocab)})
