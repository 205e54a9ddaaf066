"""HTTP preference service: serves blinded compressed pairs to a listener,
records 4-option feedback durably, and exposes session progress and the final
evaluation tally.

Feedback is appended to a JSONL log (with full pair provenance) before the
request is acknowledged, so the dataset is a pure fold of that log and an
acked answer survives any crash. Pairs are rendered before they are enqueued;
request handlers never touch DSP.
"""

import io
import json
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request, Response
from fastapi.responses import RedirectResponse
from fastapi.staticfiles import StaticFiles
from scipy.io import wavfile

from .environment import PairQuery
from .errors import ListenerUnavailable

PHASE_TRAINING = "training_query"
PHASE_EVALUATION = "evaluation"
_VALID_CHOICES = ("A", "B", "EQUAL", "NEITHER")


def _wav_bytes(clip) -> bytes:
    buf = io.BytesIO()
    scaled = np.clip(clip.samples, -1.0, 1.0)
    wavfile.write(buf, clip.sample_rate_hz, (scaled * 32767.0).astype(np.int16))
    return buf.getvalue()


def _provenance_key(query: PairQuery, phase: str) -> str:
    return json.dumps(
        [phase, query.clip_id, query.noise_offset, list(query.cr_a), list(query.cr_b)]
    )


def _server_mu(choice: str, swap: bool) -> tuple | None:
    """Invert the presentation swap; returns the label in (c1, c2) order."""
    if choice == "NEITHER":
        return None
    if choice == "EQUAL":
        return (0.5, 0.5)
    preferred_first = (choice == "A") != swap
    return (1.0, 0.0) if preferred_first else (0.0, 1.0)


@dataclass
class PendingPair:
    pair_id: str
    query: PairQuery
    phase: str
    swap: bool  # True: server c2 is presented as side A
    wav_a: bytes
    wav_b: bytes
    roles: tuple | None = None  # (role of c1, role of c2) during evaluation
    session_id: str | None = None
    choice: str | None = None  # presented-order choice, once labeled
    mu: tuple | None = None  # server-order label


@dataclass
class Session:
    session_id: str
    listener: str
    phase: str
    pairs_per_block: int
    blocks: int
    served: int = 0
    labeled: int = 0
    current_pair: str | None = None

    @property
    def block(self) -> int:
        return self.labeled // self.pairs_per_block + 1

    @property
    def break_due(self) -> bool:
        return self.labeled > 0 and self.labeled % self.pairs_per_block == 0


class PairBroker:
    """Thread-safe pair queue + durable feedback log shared by the protocol
    thread and the HTTP handlers."""

    def __init__(
        self,
        log_path,
        pairs_per_block: int = 30,
        blocks: int = 7,
        side_rng: np.random.Generator | None = None,
    ):
        self.log_path = Path(log_path)
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        self.pairs_per_block = pairs_per_block
        self.blocks = blocks
        self._side_rng = side_rng or np.random.default_rng(0)
        self._lock = threading.RLock()
        self._cv = threading.Condition(self._lock)
        self.sessions: dict = {}
        self.pairs: dict = {}
        self.pending: deque = deque()
        self.active = False
        self._counter = 0
        self._replayed: dict = {}  # provenance key -> logged record
        if self.log_path.exists():
            for line in self.log_path.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._replayed[rec["provenance"]] = rec

    # -- run lifecycle -----------------------------------------------------

    def attach_run(self) -> None:
        with self._lock:
            self.active = True

    # -- pair intake (protocol side) ----------------------------------------

    def enqueue(self, query: PairQuery, phase: str, roles: tuple | None = None) -> str:
        """Add one rendered pair; if its provenance was already answered in a
        previous process life, resolve it immediately from the log."""
        with self._cv:
            self._counter += 1
            pair_id = f"p{self._counter:05d}"
            swap = bool(self._side_rng.random() < 0.5)
            first, second = (query.clip_b, query.clip_a) if swap else (query.clip_a, query.clip_b)
            pair = PendingPair(
                pair_id=pair_id,
                query=query,
                phase=phase,
                swap=swap,
                wav_a=_wav_bytes(first),
                wav_b=_wav_bytes(second),
                roles=roles,
            )
            self.pairs[pair_id] = pair
            replayed = self._replayed.get(_provenance_key(query, phase))
            if replayed is not None:
                pair.choice = replayed["choice"]
                pair.mu = tuple(replayed["server_order_mu"]) if replayed["server_order_mu"] else None
                pair.swap = bool(replayed["swap"])
                self._cv.notify_all()
            else:
                self.pending.append(pair_id)
            return pair_id

    def wait_for_label(self, pair_id: str, timeout_s: float) -> str:
        """Block until the pair is labeled; returns the server-order choice."""
        deadline = time.monotonic() + timeout_s
        with self._cv:
            while self.pairs[pair_id].choice is None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ListenerUnavailable(
                        f"no feedback for pair {pair_id} within {timeout_s:.0f}s"
                    )
                self._cv.wait(timeout=min(remaining, 0.5))
            pair = self.pairs[pair_id]
            return self._server_order_choice(pair)

    @staticmethod
    def _server_order_choice(pair: PendingPair) -> str:
        if pair.choice in ("EQUAL", "NEITHER"):
            return pair.choice
        preferred_first = (pair.choice == "A") != pair.swap
        return "A" if preferred_first else "B"

    # -- HTTP-facing operations ---------------------------------------------

    def create_session(self, listener: str = "anonymous", phase: str = PHASE_TRAINING) -> Session:
        with self._lock:
            if not self.active:
                raise LookupError("no active run attached")
            session = Session(
                session_id=uuid.uuid4().hex[:12],
                listener=listener,
                phase=phase,
                pairs_per_block=self.pairs_per_block,
                blocks=self.blocks,
            )
            self.sessions[session.session_id] = session
            return session

    def _session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise KeyError(session_id)
        return session

    def next_pair(self, session_id: str) -> PendingPair | None:
        """The session's current unlabeled pair, or the next pending one.
        Repeated calls without feedback return the same pair."""
        with self._lock:
            session = self._session(session_id)
            if session.current_pair is not None:
                current = self.pairs[session.current_pair]
                if current.choice is None:
                    return current
            while self.pending:
                pair = self.pairs[self.pending.popleft()]
                if pair.choice is None:
                    pair.session_id = session_id
                    session.current_pair = pair.pair_id
                    session.served += 1
                    return pair
            return None

    def audio(self, pair_id: str, side: str) -> bytes:
        with self._lock:
            pair = self.pairs.get(pair_id)
            if pair is None or side not in ("A", "B"):
                raise KeyError(pair_id)
            return pair.wav_a if side == "A" else pair.wav_b

    def feedback(self, session_id: str, pair_id: str, choice: str) -> dict:
        if choice not in _VALID_CHOICES:
            raise ValueError(f"choice must be one of {_VALID_CHOICES}")
        with self._cv:
            session = self._session(session_id)
            pair = self.pairs.get(pair_id)
            if pair is None or pair.session_id != session_id:
                raise KeyError(pair_id)
            if pair.choice is not None:
                raise RuntimeError("pair already labeled")
            mu = _server_mu(choice, pair.swap)
            record = {
                "session": session_id,
                "pair": pair_id,
                "phase": pair.phase,
                "choice": choice,
                "swap": pair.swap,
                "server_order_mu": list(mu) if mu else None,
                "provenance": _provenance_key(pair.query, pair.phase),
                "clip_id": pair.query.clip_id,
                "noise_offset": pair.query.noise_offset,
                "cr_a": list(pair.query.cr_a),
                "cr_b": list(pair.query.cr_b),
                "timestamp": time.time(),
            }
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
                fh.flush()
            pair.choice = choice
            pair.mu = mu
            session.labeled += 1
            if session.current_pair == pair_id:
                session.current_pair = None
            self._cv.notify_all()
            return record

    def progress(self, session_id: str) -> dict:
        with self._lock:
            session = self._session(session_id)
            return {
                "session": session_id,
                "phase": session.phase,
                "block": min(session.block, session.blocks),
                "blocks": session.blocks,
                "pairs_per_block": session.pairs_per_block,
                "pair_index": session.labeled % session.pairs_per_block + 1,
                "served": session.served,
                "labeled": session.labeled,
                "break_due": session.break_due,
                "pending": len(self.pending),
            }

    def results(self, session_id: str) -> dict:
        with self._lock:
            self._session(session_id)
            eval_pairs = [p for p in self.pairs.values() if p.phase == PHASE_EVALUATION]
            if not eval_pairs or any(p.choice is None for p in eval_pairs):
                raise RuntimeError("evaluation incomplete")
            tally = {"personalized": 0, "reference": 0, "equal": 0, "neither": 0}
            for pair in eval_pairs:
                if pair.choice == "EQUAL":
                    tally["equal"] += 1
                elif pair.choice == "NEITHER":
                    tally["neither"] += 1
                elif pair.roles:
                    preferred_first = (pair.choice == "A") != pair.swap
                    tally[pair.roles[0] if preferred_first else pair.roles[1]] += 1
            total = len(eval_pairs)
            return {
                **tally,
                "pairs": total,
                "percent": {k: 100.0 * v / total for k, v in tally.items()},
            }

    def dataset_records(self) -> list:
        """Reconstruct the preference dataset from the durable log (the log is
        authoritative; in-memory state is a cache)."""
        records = []
        if not self.log_path.exists():
            return records
        for line in self.log_path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["server_order_mu"] is not None:
                records.append(rec)
        return records


class ServiceListener:
    """Listener backed by the HTTP service; blocks until a human answers."""

    origin = "human"

    def __init__(self, broker: PairBroker, timeout_s: float = 3600.0):
        self.broker = broker
        self.timeout_s = timeout_s
        self.phase = PHASE_TRAINING

    def set_phase(self, phase: str) -> None:
        self.phase = phase

    def label(self, query: PairQuery) -> str:
        return self.label_batch([query])[0]

    def label_batch(self, queries) -> list:
        pair_ids = [
            self.broker.enqueue(q, self.phase, roles=getattr(q, "roles", None))
            for q in queries
        ]
        return [self.broker.wait_for_label(pid, self.timeout_s) for pid in pair_ids]


def create_app(broker: PairBroker, ui_dir=None) -> FastAPI:
    app = FastAPI(title="prefcomp preference service")
    app.state.broker = broker

    @app.post("/session")
    async def create_session(request: Request):
        try:
            body = await request.json()
        except Exception:
            body = {}
        try:
            session = broker.create_session(
                listener=body.get("listener", "anonymous"),
                phase=body.get("phase", PHASE_TRAINING),
            )
        except LookupError:
            raise HTTPException(status_code=409, detail="no active run attached")
        return {
            "session_id": session.session_id,
            "phase": session.phase,
            "plan": {
                "pairs_per_block": session.pairs_per_block,
                "blocks": session.blocks,
            },
            "block": session.block,
            "labeled": session.labeled,
        }

    @app.get("/pair")
    def get_pair(session: str = Query(...)):
        try:
            pair = broker.next_pair(session)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")
        if pair is None:
            return Response(status_code=204)
        return {
            "pair_id": pair.pair_id,
            "phase": pair.phase,
            "audio_a": f"/audio/{pair.pair_id}/A",
            "audio_b": f"/audio/{pair.pair_id}/B",
        }

    @app.get("/audio/{pair_id}/{side}")
    def get_audio(pair_id: str, side: str):
        try:
            data = broker.audio(pair_id, side)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown pair or side")
        return Response(content=data, media_type="audio/wav")

    @app.post("/feedback")
    async def post_feedback(request: Request):
        body = await request.json()
        try:
            record = broker.feedback(body["session"], body["pair"], body["choice"])
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session or pair")
        except RuntimeError:
            raise HTTPException(status_code=409, detail="pair already labeled")
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"ok": True, "pair": record["pair"], "choice": record["choice"]}

    @app.get("/progress")
    def get_progress(session: str = Query(...)):
        try:
            return broker.progress(session)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")

    @app.get("/results")
    def get_results(session: str = Query(...)):
        try:
            return broker.results(session)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")
        except RuntimeError:
            raise HTTPException(status_code=409, detail="evaluation incomplete")

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

        @app.get("/")
        def index():
            return RedirectResponse(url="/ui/")

    return app
