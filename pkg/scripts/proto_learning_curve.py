"""Learning curve of the proto agent on the bundled two-room world, against the hard-VI oracle."""
import argparse

import numpy as np

from wbpgm.compositions import ProtoConfig, build_proto_agent, run_proto_agent
from wbpgm.scenarios import load_agent_world
from wbpgm.suites import data_file


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--window", type=int, default=10)
    args = p.parse_args()
    world = load_agent_world(data_file("two_room_world.json"))
    agent = build_proto_agent(world, seed=args.seed, config=ProtoConfig())
    report = run_proto_agent(agent, world, args.episodes, seed=args.seed)
    trace = np.asarray(report.reward_trace)
    print(f"oracle return {report.oracle_reward:.4f}")
    for i in range(0, len(trace), args.window):
        chunk = trace[i:i + args.window]
        print(f"episodes {i + 1:>3}-{i + len(chunk):<3} mean {chunk.mean():.4f} "
              f"({chunk.mean() / report.oracle_reward:.2%} of oracle)")


if __name__ == "__main__":
    main()
