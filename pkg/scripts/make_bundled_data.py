"""Regenerate the scenario files shipped in src/wbpgm/data from their seeded generators."""
import json
from pathlib import Path

from wbpgm.scenarios import three_room_scenario, two_room_world

DATA = Path(__file__).resolve().parents[1] / "src" / "wbpgm" / "data"


def dump(name, doc):
    (DATA / name).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print("wrote", DATA / name)


if __name__ == "__main__":
    dump("three_room_scenario.json", three_room_scenario(seed=7, n_waypoints=36).to_dict())
    dump("two_room_world.json", two_room_world().to_dict())
    dump("zero_reward_world.json", two_room_world(goal=None).to_dict())
