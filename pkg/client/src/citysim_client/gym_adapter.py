"""Gym-style reset/step/plan facade over a ClientSession.

Blocking calls with explicit Busy retry; the adapter never simulates
anything locally.
"""

from __future__ import annotations

import time
from typing import Optional

from .session import ClientSession, ServerBusyError


class GymEnvAdapter:
    def __init__(self, session: ClientSession, agent_id: str,
                 busy_backoff: float = 0.02):
        self.session = session
        self.agent_id = agent_id
        self.busy_backoff = busy_backoff
        self.last_observation: Optional[dict] = None

    def reset(self) -> dict:
        """First observation for this agent (the world itself persists)."""
        data = self.session.observe(self.agent_id)
        self.last_observation = data["observation"]
        return self.last_observation

    def step(self, verb: str, **verb_args) -> tuple:
        """Execute one action; returns (observation, feedback)."""
        if self.last_observation is None:
            raise RuntimeError("step() called before reset()")
        while True:
            try:
                acted = self.session.act(self.agent_id, verb, **verb_args)
                break
            except ServerBusyError:
                time.sleep(self.busy_backoff)
        data = self.session.observe(self.agent_id)
        self.last_observation = data["observation"]
        return self.last_observation, acted["feedback"]

    def plan(self, command=None, plan: Optional[dict] = None,
             max_polls: int = 2000, ticks_per_poll: int = 10) -> dict:
        """Submit a high-level plan and poll until it finishes.

        Returns {"status", "agent_state"}; UnparseableClause and other
        server errors surface verbatim as ProtocolError.
        """
        if self.last_observation is None:
            raise RuntimeError("plan() called before reset()")
        submitted = self.session.plan(self.agent_id, command=command, plan=plan)
        status = submitted["status"]
        polls = 0
        while status == "running" and polls < max_polls:
            self.session.step(ticks_per_poll)
            status = self.session.task_status()["programs"].get(
                self.agent_id, "done")
            polls += 1
        data = self.session.observe(self.agent_id)
        self.last_observation = data["observation"]
        return {"status": status, "agent_state": data.get("state")}
