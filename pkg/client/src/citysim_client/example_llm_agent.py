"""Minimal agent loop showing where an LLM call plugs in.

Run a server first:  citysim serve --map city.json --port 9000
"""

from citysim_client import ClientSession, GymEnvAdapter


def pick_command(observation: dict) -> str:
    # An LLM call goes here: feed the observation, get a high-level command.
    # This stand-in always heads for a seat.
    del observation
    return "go to the nearest bench and sit down"


def main():
    with ClientSession.connect("127.0.0.1", 9000) as session:
        agent_id = session.register_agent("humanoid")
        env = GymEnvAdapter(session, agent_id)
        obs = env.reset()
        result = env.plan(pick_command(obs))
        print("plan finished:", result["status"],
              "seated:", result["agent_state"]["flags"]["seated"])


if __name__ == "__main__":
    main()
