"""Synthetic prompt corpus standing in for real benchmark prompts."""
from __future__ import annotations

import json
from pathlib import Path

from ..errors import ConfigError
from ..numerics import RngStream, label_hash
from ..toymodel import Prompt

ADJECTIVES = ("small", "large", "shiny", "old", "wooden", "fluffy", "broken", "tiny", "giant", "striped")
COLORS = ("red", "blue", "green", "yellow", "black", "white", "purple", "orange")
NOUNS = ("cat", "car", "clock", "bicycle", "teapot", "dog", "umbrella", "chair", "bird", "boat",
         "lamp", "guitar")
SCENES = ("on a table", "in a forest", "at night", "on the beach", "in the snow", "in a kitchen",
          "under a bridge", "in space")


def word_token(word: str, vocab: int) -> int:
    # token 0 is reserved for padding
    return 1 + label_hash(word) % (vocab - 1)


def tokenize(text: str, n_txt: int, vocab: int) -> tuple[int, ...]:
    ids = [word_token(w, vocab) for w in text.split()][:n_txt]
    return tuple(ids + [0] * (n_txt - len(ids)))


def synthetic_prompts(count: int, seed: int, n_txt: int, vocab: int) -> list[Prompt]:
    stream = RngStream(seed).child("prompts")
    out = []
    for i in range(count):
        pick = stream.integers(4, 1 << 30)
        text = "a {} {} {} {}".format(ADJECTIVES[pick[0] % len(ADJECTIVES)], COLORS[pick[1] % len(COLORS)],
                                      NOUNS[pick[2] % len(NOUNS)], SCENES[pick[3] % len(SCENES)])
        out.append(Prompt(i, tokenize(text, n_txt, vocab), text))
    return out


def load_prompt_file(path: str | Path, n_txt: int, vocab: int) -> list[Prompt]:
    """Read a JSON list of strings or of ``{"id", "text"[, "token_ids"]}`` objects."""
    items = json.loads(Path(path).read_text())
    if not isinstance(items, list):
        raise ConfigError("prompt file must hold a JSON list")
    prompts = []
    for i, item in enumerate(items):
        if isinstance(item, str):
            prompts.append(Prompt(i, tokenize(item, n_txt, vocab), item))
            continue
        text = item.get("text", "")
        ids = item.get("token_ids")
        ids = tuple(ids) + (0,) * (n_txt - len(ids)) if ids is not None else tokenize(text, n_txt, vocab)
        prompts.append(Prompt(int(item.get("id", i)), ids, text))
    return prompts
