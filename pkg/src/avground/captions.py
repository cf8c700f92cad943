"""Caption providers, object-extraction prompt, response cache, and text embeddings.

The caption-audio alignment term needs, per training pair, a short phrase
naming the object that makes the sound.  That phrase comes from a three-step
pipeline: caption the image, caption the audio, then ask a language model to
name the primary sounding object given both captions.  All three steps sit
behind provider interfaces; the bundled stub providers derive deterministic
captions from dataset metadata so the whole path runs offline and every test
is reproducible.  Results are cached to a JSONL file whose embedded vectors
round-trip bitwise.
"""

from __future__ import annotations

import base64
import hashlib
import json
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import torch

from .config import CaptionConfig
from .encoders import DTYPE, ToyEncoderBank
from .errors import InputError, ProviderError, ProviderTimeout
from .synthdata import CLASS_NAMES

PROMPT_TEMPLATE = (
    "Identify the primary object in the 'image caption' most likely producing the sound "
    "like given 'audio caption', excluding background sounds which is hard to infer from "
    "given 'image caption'. Keep the answer concise and focused on general concepts, "
    "such as type. Limit the response to no more than 3 words.\n"
    "\n"
    "Image caption: {image_caption},\n"
    "Audio caption: {audio_caption}"
)

AUDIO_DESCRIPTORS = ("low", "mid", "high", "very-high")

# sound words a generic audio captioner might emit, mapped to their usual source
SOUND_WORD_OBJECTS = {
    "bark": "dog", "barking": "dog", "woof": "dog",
    "meow": "cat", "meowing": "cat", "purr": "cat",
    "engine": "car", "honk": "car", "honking": "car",
    "siren": "ambulance", "moo": "cow", "neigh": "horse",
    "chirp": "bird", "chirping": "bird", "tweet": "bird",
}

STOPWORDS = {"a", "an", "the", "on", "in", "of", "and", "with", "at", "over", "under"}

COLOR_WORDS = {"red", "green", "blue", "yellow"}
SHAPE_WORDS = {"circle", "square"}


def build_prompt(image_caption: str, audio_caption: str) -> str:
    if not image_caption or not audio_caption:
        raise InputError("both captions must be nonempty")
    return PROMPT_TEMPLATE.format(image_caption=image_caption, audio_caption=audio_caption)


def _words(text: str) -> list[str]:
    table = str.maketrans("", "", string.punctuation.replace("-", ""))
    return [w for w in text.lower().translate(table).split() if w]


def _first_object_phrase(image_caption: str) -> str:
    tokens = [w for w in _words(image_caption) if w not in STOPWORDS]
    for i in range(len(tokens) - 1):
        if tokens[i] in COLOR_WORDS and tokens[i + 1] in SHAPE_WORDS:
            return f"{tokens[i]} {tokens[i + 1]}"
    return tokens[0] if tokens else "object"


def descriptor_for_class(class_id: int) -> str:
    return AUDIO_DESCRIPTORS[class_id]


def class_for_descriptor(audio_caption: str) -> list[int]:
    """Class ids whose band descriptor appears in the caption.

    Longest descriptors are matched first and consumed, so "very-high" never
    also reads as "high".
    """
    text = audio_caption.lower()
    found = []
    for class_id in sorted(range(len(AUDIO_DESCRIPTORS)),
                           key=lambda c: -len(AUDIO_DESCRIPTORS[c])):
        needle = f"{AUDIO_DESCRIPTORS[class_id]}-frequency"
        if needle in text:
            found.append(class_id)
            text = text.replace(needle, " ")
    return sorted(found)


class Provider(Protocol):
    def image_caption(self, record: dict) -> str: ...
    def audio_caption(self, record: dict) -> str: ...
    def llm_response(self, prompt: str) -> str: ...


class StubProvider:
    """Deterministic captions derived from dataset metadata; counts every call."""

    def __init__(self) -> None:
        self.calls = {"image": 0, "audio": 0, "llm": 0}

    def image_caption(self, record: dict) -> str:
        self.calls["image"] += 1
        objects = record.get("objects", [])
        if not objects:
            return "a plain background"
        phrases = [f"a {o['color']} {o['shape']}" for o in objects]
        return " and ".join(phrases) + " on a plain background"

    def audio_caption(self, record: dict) -> str:
        self.calls["audio"] += 1
        classes = record.get("audio_classes", [])
        if not classes:
            return "silence"
        phrases = [f"a steady {descriptor_for_class(c)}-frequency tone" for c in sorted(classes)]
        return " and ".join(phrases)

    def llm_response(self, prompt: str) -> str:
        """Keyword rule standing in for a real model.

        Candidate objects come from sound words and band descriptors in the
        audio caption; a candidate wins only if the image caption mentions it,
        otherwise the answer falls back to the first object named by the image
        caption.  Silence also falls back to the image side.  The reply is
        clipped to three words per the prompt's own instruction.
        """
        self.calls["llm"] += 1
        image_caption, audio_caption = parse_prompt(prompt)
        image_words = set(_words(image_caption))
        candidates: list[str] = []
        for word in _words(audio_caption):
            if word in SOUND_WORD_OBJECTS:
                candidates.append(SOUND_WORD_OBJECTS[word])
        for class_id in class_for_descriptor(audio_caption):
            candidates.append(CLASS_NAMES[class_id])
        for candidate in candidates:
            if all(w in image_words for w in candidate.split()):
                return " ".join(candidate.split()[:3])
        return " ".join(_first_object_phrase(image_caption).split()[:3])


def parse_prompt(prompt: str) -> tuple[str, str]:
    """Recover the two caption fields from a built prompt."""
    image_key, audio_key = "Image caption: ", "Audio caption: "
    if image_key not in prompt or audio_key not in prompt:
        raise InputError("prompt does not follow the object-extraction template")
    tail = prompt.split(image_key, 1)[1]
    image_caption, rest = tail.rsplit(",\n" + audio_key, 1)
    return image_caption, rest


class UnreachableProvider:
    """Always times out; used to exercise retry and degradation paths."""

    def __init__(self) -> None:
        self.calls = {"image": 0, "audio": 0, "llm": 0}

    def image_caption(self, record: dict) -> str:
        self.calls["image"] += 1
        raise ProviderTimeout("image captioner unreachable")

    def audio_caption(self, record: dict) -> str:
        self.calls["audio"] += 1
        raise ProviderTimeout("audio captioner unreachable")

    def llm_response(self, prompt: str) -> str:
        self.calls["llm"] += 1
        raise ProviderTimeout("language model unreachable")


PROVIDER_REGISTRY: dict[str, Callable[[], object]] = {
    "stub": StubProvider,
    "unreachable": UnreachableProvider,
}


def call_with_retries(fn: Callable[[], str], max_retries: int, delay: float = 0.0) -> str:
    last: Exception | None = None
    for _attempt in range(max_retries + 1):
        try:
            return fn()
        except ProviderTimeout as err:
            last = err
            if delay:
                time.sleep(delay)
    raise ProviderError(f"provider failed after {max_retries + 1} attempts: {last}") from last


class LLMClient:
    """Prompt-hashed response cache in front of a provider."""

    def __init__(self, provider, max_retries: int = 0):
        self.provider = provider
        self.max_retries = max_retries
        self.cache: dict[str, str] = {}

    def query(self, prompt: str) -> str:
        if not prompt:
            raise InputError("prompt must be nonempty")
        key = hashlib.sha256(prompt.encode()).hexdigest()
        if key not in self.cache:
            self.cache[key] = call_with_retries(
                lambda: self.provider.llm_response(prompt), self.max_retries
            )
        return self.cache[key]


# -- text embeddings -----------------------------------------------------------------


def word_vector(word: str, d_tok: int) -> torch.Tensor:
    seed = int.from_bytes(hashlib.blake2b(f"word:{word}".encode(), digest_size=8).digest(), "little")
    gen = torch.Generator().manual_seed(seed % (2 ** 63))
    return torch.randn(d_tok, generator=gen, dtype=DTYPE)


def caption_embedding(bank: ToyEncoderBank, text: str) -> torch.Tensor:
    """Seeded bag-of-words token matrix routed through the frozen text encoder."""
    words = _words(text)
    if not words:
        raise InputError("cannot embed empty text")
    words = words[: bank.cfg.max_tokens]
    tokens = torch.stack([word_vector(w, bank.cfg.d_tok) for w in words])
    return bank.encode_text_tokens(tokens)


# -- persistent cache ------------------------------------------------------------------


@dataclass
class CaptionRecord:
    sample_id: str
    image_caption: str
    audio_caption: str
    llm_response: str
    embedding: torch.Tensor | None
    complete: bool

    def to_json(self) -> str:
        blob = None
        if self.embedding is not None:
            blob = base64.b64encode(
                self.embedding.to(DTYPE).numpy().astype("<f8").tobytes()
            ).decode("ascii")
        return json.dumps({
            "sample_id": self.sample_id,
            "image_caption": self.image_caption,
            "audio_caption": self.audio_caption,
            "llm_response": self.llm_response,
            "embedding": blob,
            "complete": self.complete,
        }, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "CaptionRecord":
        raw = json.loads(line)
        embedding = None
        if raw.get("embedding"):
            data = np.frombuffer(base64.b64decode(raw["embedding"]), dtype="<f8")
            embedding = torch.from_numpy(data.copy())
        return CaptionRecord(
            sample_id=raw["sample_id"],
            image_caption=raw["image_caption"],
            audio_caption=raw["audio_caption"],
            llm_response=raw["llm_response"],
            embedding=embedding,
            complete=raw["complete"],
        )


def save_cache(path: str | Path, records: list[CaptionRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(record.to_json() + "\n")


def load_cache(path: str | Path) -> dict[str, CaptionRecord]:
    path = Path(path)
    if not path.exists():
        return {}
    out: dict[str, CaptionRecord] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                record = CaptionRecord.from_json(line)
                out[record.sample_id] = record
    return out


def precompute_captions(
    records: list[dict],
    bank: ToyEncoderBank,
    cfg: CaptionConfig,
    provider=None,
) -> tuple[list[CaptionRecord], dict]:
    """Caption every record, extract the sounding object, embed it, and persist.

    Provider failures mark a record incomplete rather than aborting; training
    simply drops incomplete records from the caption term.
    """
    if provider is None:
        try:
            provider = PROVIDER_REGISTRY[cfg.provider]()
        except KeyError:
            raise InputError(f"unknown caption provider {cfg.provider!r}")
    client = LLMClient(provider, max_retries=cfg.max_retries)

    def process(record: dict) -> CaptionRecord:
        sample_id = record["id"]
        try:
            image_caption = call_with_retries(
                lambda: provider.image_caption(record), cfg.max_retries
            )
            audio_caption = call_with_retries(
                lambda: provider.audio_caption(record), cfg.max_retries
            )
            response = client.query(build_prompt(image_caption, audio_caption))
            embedding = caption_embedding(bank, response)
            return CaptionRecord(sample_id, image_caption, audio_caption, response,
                                 embedding, complete=True)
        except ProviderError:
            return CaptionRecord(sample_id, "", "", "", None, complete=False)

    if cfg.max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            results = list(pool.map(process, records))
    else:
        results = [process(r) for r in records]
    save_cache(cfg.cache_path, results)
    stats = {
        "total": len(results),
        "complete": sum(r.complete for r in results),
        "incomplete": sum(not r.complete for r in results),
    }
    return results, stats
