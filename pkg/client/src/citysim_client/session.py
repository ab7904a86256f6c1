"""Protocol session: one TCP connection, strictly increasing request ids."""

from __future__ import annotations

import json
import socket
from typing import Optional


class ProtocolError(Exception):
    """Server-side error response surfaced to the caller."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class ServerBusyError(ProtocolError):
    """The agent already has a pending action (async mode)."""


def _raise_for(error: dict) -> None:
    code = error.get("code", "error")
    message = error.get("message", "")
    if code == "busy":
        raise ServerBusyError(code, message)
    raise ProtocolError(code, message)


class ClientSession:
    """A live connection to a citysim protocol server.

    Sessions are not shareable across threads; open one per thread. Events
    pushed by the server (id 0) are collected into `notifications`.
    """

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.address = (host, port)
        self._sock = socket.create_connection(self.address, timeout=timeout)
        self._buf = b""
        self._next_id = 1
        self.agent_ids: list = []
        self.notifications: list = []

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 30.0) -> "ClientSession":
        return cls(host, port, timeout=timeout)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self) -> "ClientSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # ------------------------------------------------------------- wire

    def request(self, cmd: str, args: Optional[dict] = None) -> dict:
        """Send one protocol message; return its ok-payload or raise."""
        rid = self._next_id
        self._next_id += 1
        line = json.dumps({"id": rid, "cmd": cmd, "args": args or {}},
                          separators=(",", ":")).encode("utf-8") + b"\n"
        self._sock.sendall(line)
        while True:
            doc = self._read_message()
            if doc.get("id") == rid:
                if doc.get("status") == "ok":
                    return doc.get("data", {})
                _raise_for(doc.get("error", {}))
            elif doc.get("id") == 0:
                self.notifications.append(doc)

    def _read_message(self) -> dict:
        while b"\n" not in self._buf:
            chunk = self._sock.recv(65536)
            if not chunk:
                raise ConnectionError("server closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return json.loads(line)

    # -------------------------------------------------------- convenience

    def world_info(self) -> dict:
        return self.request("world.info")

    def register_agent(self, embodiment: str = "humanoid",
                       agent_id: Optional[str] = None,
                       spawn_waypoint: Optional[str] = None) -> str:
        args: dict = {"embodiment": embodiment}
        if agent_id is not None:
            args["id"] = agent_id
        if spawn_waypoint is not None:
            args["spawn_waypoint"] = spawn_waypoint
        aid = self.request("agent.register", args)["agent_id"]
        self.agent_ids.append(aid)
        return aid

    def observe(self, agent_id: str, include_raster: bool = False) -> dict:
        return self.request("agent.observe", {"id": agent_id,
                                              "include_raster": include_raster})

    def act(self, agent_id: str, verb: str, **verb_args) -> dict:
        return self.request("agent.act", {"id": agent_id, "verb": verb,
                                          "args": verb_args})

    def plan(self, agent_id: str, command=None, plan: Optional[dict] = None) -> dict:
        args: dict = {"id": agent_id}
        if command is not None:
            args["command"] = command
        else:
            args["plan"] = plan
        return self.request("agent.plan", args)

    def step(self, n: int = 1) -> dict:
        return self.request("sim.step", {"n": n})

    def task_status(self) -> dict:
        return self.request("task.status")
