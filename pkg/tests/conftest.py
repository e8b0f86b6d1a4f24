import json

import numpy as np
import pytest

from chart_tir.clients import ChatClient, ScriptedTransport
from chart_tir.model import ChartImage
from chart_tir.sandbox import Sandbox


def make_image(w=64, h=48, sid="img", seed=0) -> ChartImage:
    rng = np.random.default_rng(seed)
    return ChartImage(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8), sid)


def scripted(replies, cycle=False, **kw) -> ChatClient:
    """Client over a stub transport; retries never sleep."""
    return ChatClient(ScriptedTransport(replies, cycle), model="stub", sleep=lambda s: None, **kw)


def think(text="looking"):
    return f"<think>{text}</think>"


def crop_turn(bbox, reasoning="zoom in"):
    payload = json.dumps({"name": "crop", "arguments": {"bbox": list(bbox)}})
    return f"{think(reasoning)}<tool_call>{payload}</tool_call>"


def code_turn(source, reasoning="compute"):
    payload = json.dumps({"name": "code", "arguments": {"source": source}})
    return f"{think(reasoning)}<tool_call>{payload}</tool_call>"


def answer_turn(answer, reasoning="done"):
    return f"{think(reasoning)}<answer>{answer}</answer>"


@pytest.fixture(scope="session")
def sandbox():
    return Sandbox(pool_size=4)


@pytest.fixture
def image():
    return make_image()
