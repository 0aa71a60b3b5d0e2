"""Hermetic chat-completions stub server for tests and offline pipeline runs.

Speaks the same wire shape as the real endpoint: POST with {model, messages,
temperature, max_tokens}, responding {choices:[{message:{content}}], ...}.
By default it extracts the dialogue-act script embedded in the user message
and answers with a deterministic, constraint-satisfying JSON array of turns,
so `pipeline --endpoint stub` produces valid corpora with reproducible
bytes. Tests can enqueue behaviors (error statuses, delays, canned or
mutated content) to script failure sequences.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional

STUB_MODEL_ID = "stub-chat-1"


def extract_script(messages: list[dict]) -> Optional[dict]:
    """Find the first JSON object carrying an "acts" array anywhere in the
    conversation text (robust to prompt-template rewording)."""
    decoder = json.JSONDecoder()
    for message in messages:
        content = message.get("content", "")
        for pos, ch in enumerate(content):
            if ch != "{":
                continue
            try:
                value, _ = decoder.raw_decode(content, pos)
            except json.JSONDecodeError:
                continue
            if isinstance(value, dict) and isinstance(value.get("acts"), list):
                return value
    return None


def generate_turns(script: dict) -> list[dict]:
    """Deterministic compliant realization of a script dict: every keyword
    appears in its query turn, symbols only where their acts license them,
    roles alternate starting with the user."""
    turns = []
    for act in script["acts"]:
        act_type = act.get("type", "")
        keywords = act.get("keywords", [])
        symbol = act.get("symbol")
        symbols = act.get("symbols", [])
        if act_type == "ProvideQuery":
            text = (
                "I am stuck on part of my current project and could use a pointer. "
                "The important bits are: " + ", ".join(keywords) + "."
            )
            role = "user"
        elif act_type == "ElicitInfo":
            text = f"Could you give me more detail on {symbol}?"
            role = "user"
        elif act_type == "ElicitSuggestion":
            text = "Is there another option you would recommend instead?"
            role = "user"
        elif act_type == "RejectSuggestion":
            text = f"I do not think {symbol} is quite what I need here."
            role = "user"
        elif act_type == "Accept":
            text = f"{symbol} looks like exactly what I needed, thanks."
            role = "user"
        elif act_type == "EndUser":
            text = "I will stop here for now. Thanks for the help."
            role = "user"
        elif act_type == "Suggest":
            text = f"You might take a look at {symbol}; it seems to fit what you described."
            role = "assistant"
        elif act_type == "Info":
            text = (
                f"{symbol} handles that case. Check its parameters and return "
                "value against what your code expects."
            )
            role = "assistant"
        elif act_type == "ListOptions":
            text = "A few candidates come to mind: " + ", ".join(symbols) + "."
            role = "assistant"
        elif act_type == "ElicitQuery":
            text = "Could you say a bit more about what you are trying to do?"
            role = "assistant"
        elif act_type == "EndSystem":
            text = "Happy to help. Good luck with the rest of the project!"
            role = "assistant"
        else:
            text = "Understood."
            role = "assistant"
        turns.append({"role": role, "text": text})
    return turns


@dataclass
class StubBehavior:
    """One scripted response; fields are applied in order of relevance."""

    status: int = 200
    delay: float = 0.0
    content: Optional[str] = None  # overrides generated content entirely
    mutate: Optional[Callable[[dict, list[dict]], list[dict]]] = None  # (script, turns)
    body: Optional[dict] = None  # raw response body override


@dataclass
class RecordedRequest:
    path: str
    body: dict
    headers: dict = field(default_factory=dict)


class _Handler(BaseHTTPRequestHandler):
    server: "StubServer"

    def log_message(self, *args):  # silence default stderr chatter
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw) if raw else {}
        except json.JSONDecodeError:
            body = {}
        with self.server.lock:
            self.server.requests.append(
                RecordedRequest(self.path, body, dict(self.headers))
            )
            behavior = (
                self.server.behaviors.pop(0)
                if self.server.behaviors
                else StubBehavior()
            )
            self.server.request_count += 1
            request_id = self.server.request_count

        if behavior.delay:
            time.sleep(behavior.delay)

        if behavior.status != 200:
            payload = behavior.body or {
                "error": {"message": f"stub error {behavior.status}"}
            }
            self._send(behavior.status, payload)
            return

        if behavior.body is not None:
            self._send(200, behavior.body)
            return

        if behavior.content is not None:
            content = behavior.content
        else:
            script = extract_script(body.get("messages", []))
            if script is None:
                self._send(400, {"error": {"message": "no script found in prompt"}})
                return
            turns = generate_turns(script)
            if behavior.mutate is not None:
                turns = behavior.mutate(script, turns)
            content = json.dumps(turns)

        prompt_chars = sum(len(m.get("content", "")) for m in body.get("messages", []))
        self._send(
            200,
            {
                "id": f"stub-{request_id}",
                "object": "chat.completion",
                "created": 0,
                "model": STUB_MODEL_ID,
                "choices": [
                    {
                        "index": 0,
                        "message": {"role": "assistant", "content": content},
                        "finish_reason": "stop",
                    }
                ],
                "usage": {
                    "prompt_tokens": prompt_chars // 4,
                    "completion_tokens": len(content) // 4,
                    "total_tokens": prompt_chars // 4 + len(content) // 4,
                },
            },
        )

    def _send(self, status: int, payload: dict):
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class StubServer:
    """Threaded stub endpoint; use as a context manager.

    with StubServer() as stub:
        config = EndpointConfig(base_url=stub.url, model_id=STUB_MODEL_ID)
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.lock = threading.Lock()
        self._httpd.behaviors = []
        self._httpd.requests = []
        self._httpd.request_count = 0
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    @property
    def requests(self) -> list[RecordedRequest]:
        return self._httpd.requests

    @property
    def request_count(self) -> int:
        return self._httpd.request_count

    def enqueue(self, *behaviors: StubBehavior) -> None:
        with self._httpd.lock:
            self._httpd.behaviors.extend(behaviors)

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "StubServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
