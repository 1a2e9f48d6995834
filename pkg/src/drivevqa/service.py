"""HTTP service for the review dashboard.

JSON over HTTP, stdlib server, threaded handlers.  The session replays a
recorded drive by default (or steps the frozen policy in live mode); the
model answers questions about any frame; every ask is appended to the
forensic history log.

Endpoints:
    GET  /api/session                  current frame id, sim time, category,
                                       playback state
    GET  /api/frames/{id}              PNG bytes
    POST /api/ask                      {frame_id, question} ->
                                       {answers: [{text, prob}], latency_ms}
    POST /api/control                  {command: play|pause|step|seek, arg}
    GET  /api/history                  {entries: [...]} in append order

Errors: 404 unknown frame, 400 malformed body or empty question, 503 until
the models are loaded.
"""

from __future__ import annotations

import json
import re
import threading
import time
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import dataset, vqa

TOP_K = 5


class ServiceApp:
    """Holds the model, the session frames, playback state and the history.

    Replay mode (default) pages through a recorded drive; live mode steps
    the frozen policy on demand and renders frames as it goes, auto-
    restarting the episode when it ends.
    """

    def __init__(self, model_dir, drive_dir=None, history_path="history.jsonl",
                 static_dir=None, replay_fps: float = 10.0, mode: str = "replay",
                 agent_ckpt=None, live_track: str = "track-a",
                 live_route: str = "train"):
        if mode not in ("replay", "live"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "replay" and drive_dir is None:
            raise ValueError("replay mode needs a recorded drive")
        if mode == "live" and agent_ckpt is None:
            raise ValueError("live mode needs an agent checkpoint")
        self.mode = mode
        self.model_dir = Path(model_dir)
        self.drive_dir = Path(drive_dir) if drive_dir else None
        self.agent_ckpt = agent_ckpt
        self.live_track = live_track
        self.live_route = live_route
        self.history_path = Path(history_path)
        self.static_dir = Path(static_dir) if static_dir else None
        self.replay_fps = replay_fps
        self.ready = False
        self.lock = threading.Lock()
        self.model: vqa.VqaModel | None = None
        self.track_id = ""
        self.frames: list = []
        self.entries: list[dict] = []
        self.frames_by_id = {}
        self.entries_by_id = {}
        self.index = 0
        self.playing = False
        self.history: list[dict] = []
        self._player: threading.Thread | None = None
        self._stop = threading.Event()
        self._env = None
        self._policy = None
        self._live_state = None

    def load(self):
        self.model = vqa.VqaModel.load(self.model_dir)
        if self.mode == "replay":
            drive = dataset.load_drive(self.drive_dir)
            self.track_id = drive.track_id
            self.frames = list(drive.frames)
            self.entries = list(drive.entries)
            for entry, frame in zip(self.entries, self.frames):
                self.frames_by_id[entry["frame_id"]] = frame
                self.entries_by_id[entry["frame_id"]] = entry
        else:
            self._load_live()
        if self.history_path.exists():
            self.history = [json.loads(line) for line in
                            self.history_path.read_text().splitlines() if line.strip()]
        else:
            self.history_path.parent.mkdir(parents=True, exist_ok=True)
        self.ready = True

    # -- live session -------------------------------------------------------

    def _load_live(self):
        from . import ddpg, sim, track as trackmod

        spec = trackmod.load_track(self.live_track)
        self._env = sim.make_env(spec, self.live_route)
        agent = ddpg.DdpgAgent(ddpg.obs_dim(len(self._env.route.waypoints)), 2)
        agent.load(self.agent_ckpt)
        self._policy = ddpg.ActorPolicy(agent)
        self.track_id = spec.name
        self._live_state = self._env.reset()
        self._capture_live("none")

    def _capture_live(self, event: str):
        from .render import RenderConfig, render_frame
        from .sim import project_to_route

        state = self._live_state
        s_here, _, _ = project_to_route(self._env.route, state.pose.x,
                                        state.pose.y, state.route_progress)
        category = self._env.route.category_at(s_here)
        frame_id = f"live-{len(self.frames):05d}"
        meta = {"frame_id": frame_id, "sim_time": round(self._env.sim_time, 9),
                "action_category": category}
        frame = render_frame(self._env.track, state, RenderConfig(), meta=meta)
        entry = {"frame_id": frame_id, "index": len(self.frames),
                 "sim_time": meta["sim_time"], "category": category,
                 "edge_key": self._env.route.edge_key_at(s_here),
                 "track_id": self.track_id, "drive_id": "live", "event": event}
        self.frames.append(frame)
        self.entries.append(entry)
        self.frames_by_id[frame_id] = frame
        self.entries_by_id[frame_id] = entry
        self.index = len(self.frames) - 1

    def _live_step(self):
        action = self._policy.act(self._env, self._live_state)
        outcome, truncated = self._env.step(action)
        self._live_state = outcome.next_state
        self._capture_live(outcome.event)
        if outcome.done or truncated:
            self._live_state = self._env.reset()
            self._capture_live("none")

    # -- session ------------------------------------------------------------

    def session_view(self) -> dict:
        with self.lock:
            entry = self.entries[self.index]
            return {
                "frame_id": entry["frame_id"],
                "sim_time": entry["sim_time"],
                "action_category": entry["category"],
                "index": self.index,
                "total": len(self.entries),
                "playing": self.playing,
                "mode": self.mode,
                "track_id": self.track_id,
            }

    def control(self, command: str, arg=None) -> dict:
        with self.lock:
            if command == "play":
                self.playing = True
                self._ensure_player()
            elif command == "pause":
                self.playing = False
            elif command == "step":
                self._advance()
            elif command == "seek":
                if arg is None:
                    raise ValueError("seek needs an integer frame index")
                self.index = min(max(int(arg), 0), len(self.entries) - 1)
            else:
                raise ValueError(f"unknown command {command!r}")
        return self.session_view()

    def _advance(self):
        if self.mode == "live" and self.index == len(self.entries) - 1:
            self._live_step()
        else:
            self.index = min(self.index + 1, len(self.entries) - 1)

    def _ensure_player(self):
        if self._player is None or not self._player.is_alive():
            self._player = threading.Thread(target=self._play_loop, daemon=True)
            self._player.start()

    def _play_loop(self):
        while not self._stop.is_set():
            time.sleep(1.0 / self.replay_fps)
            with self.lock:
                if not self.playing:
                    return
                at_end = self.index >= len(self.entries) - 1
                if self.mode == "replay" and at_end:
                    self.playing = False
                    return
                self._advance()

    def frame_bytes(self, frame_id: str) -> bytes:
        if self.mode == "replay":
            return (self.drive_dir / "frames" / f"{frame_id}.png").read_bytes()
        from .render import encode_frame
        return encode_frame(self.frames_by_id[frame_id])

    # -- asking -------------------------------------------------------------

    def ask(self, frame_id: str, question: str) -> dict:
        if not question or not dataset.tokenize(question):
            raise vqa.EmptyQuestion("question is empty")
        frame = self.frames_by_id.get(frame_id)
        if frame is None:
            raise KeyError(frame_id)
        t0 = time.perf_counter()
        prediction = vqa.predict_topk(frame, question, self.model, k=TOP_K)
        latency_ms = (time.perf_counter() - t0) * 1000.0
        answers = [{"text": t, "prob": p} for t, p in prediction.items]
        entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "frame_id": frame_id,
            "action_category": self.entries_by_id[frame_id]["category"],
            "question": question,
            "answers": answers,
            "chosen": prediction.answer,
        }
        with self.lock:
            self.history.append(entry)
            with open(self.history_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry) + "\n")
        return {"answers": answers, "latency_ms": latency_ms}

    def shutdown(self):
        self._stop.set()


def replay_history(app: ServiceApp, entries=None) -> bool:
    """Re-ask every logged question; True when every prediction matches."""
    entries = entries if entries is not None else list(app.history)
    for entry in entries:
        frame = app.frames_by_id[entry["frame_id"]]
        pred = vqa.predict_topk(frame, entry["question"], app.model, k=TOP_K)
        fresh = [{"text": t, "prob": p} for t, p in pred.items]
        if fresh != entry["answers"]:
            return False
    return True


# ---------------------------------------------------------------------------
# http plumbing

_FRAME_RE = re.compile(r"^/api/frames/([A-Za-z0-9_.:-]+)$")

MIME = {".html": "text/html", ".js": "text/javascript", ".css": "text/css",
        ".map": "application/json", ".png": "image/png", ".svg": "image/svg+xml"}


def make_handler(app: ServiceApp):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _json(self, code: int, payload: dict):
            blob = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(blob)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(blob)

        def _guard(self) -> bool:
            if not app.ready:
                self._json(503, {"error": "models are still loading"})
                return False
            return True

        def do_GET(self):
            if self.path.startswith("/api/"):
                if not self._guard():
                    return
                if self.path == "/api/session":
                    return self._json(200, app.session_view())
                if self.path == "/api/history":
                    return self._json(200, {"entries": list(app.history)})
                match = _FRAME_RE.match(self.path)
                if match:
                    return self._frame(match.group(1))
                return self._json(404, {"error": f"no route {self.path}"})
            return self._static()

        def _frame(self, frame_id: str):
            entry = app.entries_by_id.get(frame_id)
            if entry is None:
                return self._json(404, {"error": f"unknown frame {frame_id!r}"})
            blob = app.frame_bytes(frame_id)
            self.send_response(200)
            self.send_header("Content-Type", "image/png")
            self.send_header("Content-Length", str(len(blob)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(blob)

        def _static(self):
            if app.static_dir is None:
                return self._json(404, {"error": "no dashboard bundled"})
            rel = self.path.lstrip("/") or "index.html"
            target = (app.static_dir / rel).resolve()
            if not str(target).startswith(str(app.static_dir.resolve())) \
                    or not target.is_file():
                return self._json(404, {"error": f"no file {rel!r}"})
            blob = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", MIME.get(target.suffix, "text/plain"))
            self.send_header("Content-Length", str(len(blob)))
            self.end_headers()
            self.wfile.write(blob)

        def do_POST(self):
            if not self._guard():
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length) or b"{}")
                if not isinstance(body, dict):
                    raise ValueError("body must be a JSON object")
            except (json.JSONDecodeError, ValueError) as exc:
                return self._json(400, {"error": f"malformed body: {exc}"})

            if self.path == "/api/ask":
                try:
                    result = app.ask(str(body.get("frame_id", "")),
                                     str(body.get("question", "")))
                except vqa.EmptyQuestion as exc:
                    return self._json(400, {"error": str(exc)})
                except KeyError as exc:
                    return self._json(404, {"error": f"unknown frame {exc}"})
                return self._json(200, result)
            if self.path == "/api/control":
                try:
                    view = app.control(str(body.get("command", "")),
                                       body.get("arg"))
                except ValueError as exc:
                    return self._json(400, {"error": str(exc)})
                return self._json(200, view)
            return self._json(404, {"error": f"no route {self.path}"})

    return Handler


def make_server(app: ServiceApp, port: int = 0) -> ThreadingHTTPServer:
    return ThreadingHTTPServer(("127.0.0.1", port), make_handler(app))


def run_server(app: ServiceApp, port: int):
    server = make_server(app, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        app.shutdown()
        server.server_close()
