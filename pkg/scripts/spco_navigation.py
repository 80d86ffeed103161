"""Fit SpCo-lite on the bundled three-room scenario and navigate to every room word.

Prints the learned metrics, then an ASCII map per word with the planned path.
"""
import argparse

from wbpgm.compositions import SpcoConfig, fit_spco_lite, spconavi_lite
from wbpgm.scenarios import load_room_scenario
from wbpgm.suites import data_file


def render(model, path, goal):
    H, W = model.free.shape
    on_path = set(map(tuple, path))
    rows = []
    for y in range(H):
        row = ""
        for x in range(W):
            if not model.free[y, x]:
                row += "#"
            elif (x, y) == tuple(goal):
                row += "G"
            elif (x, y) in on_path:
                row += "*"
            else:
                row += "."
        rows.append(row)
    return "\n".join(rows)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", type=int, nargs=2, default=None, metavar=("X", "Y"))
    args = p.parse_args()
    sc = load_room_scenario(data_file("three_room_scenario.json"))
    model = fit_spco_lite(sc, SpcoConfig(), seed=args.seed)
    print({k: round(v, 4) for k, v in model.metrics.items()})
    for room, word in sorted(sc.room_words.items()):
        res = spconavi_lite(model, sc.vocab[word], start=tuple(args.start) if args.start else None)
        print(f"\n{sc.vocab[word]!r} (room {room}): {len(res.actions)} steps, ends at {res.end}")
        print(render(model, res.path, res.end))


if __name__ == "__main__":
    main()
