"""Train the toy GRPO policy and dump the learning curve.

    python3 scripts/run_toy_grpo.py --out-dir /tmp/grpo --steps 500 --svg
"""

import argparse
from pathlib import Path

import numpy as np

from vtagent import grpo
from vtagent.reporting import write_svg_lines


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--group", type=int, default=4)
    parser.add_argument("--eps", type=float, default=0.2)
    parser.add_argument("--lr", type=float, default=0.1)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--env-frames", type=int, default=8)
    parser.add_argument("--vocab", type=int, default=6)
    parser.add_argument("--no-tool-reward", action="store_true")
    parser.add_argument("--svg", action="store_true")
    args = parser.parse_args()

    vocab = tuple(chr(ord("a") + i) for i in range(args.vocab))
    env = grpo.make_env(args.env_frames, vocab, np.random.default_rng(3))
    config = grpo.TrainConfig(
        steps=args.steps, group_size=args.group, eps=args.eps, lr=args.lr,
        seed=args.seed, tool_reward=0.0 if args.no_tool_reward else 0.5)
    result = grpo.train([env], config)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grpo.write_curve_csv(result.curve, out_dir / "curve.csv")
    if args.svg:
        write_svg_lines(out_dir / "curve.svg",
                        {"mean_reward": [s.mean_reward for s in result.curve],
                         "tool_rate": [s.tool_rate for s in result.curve]},
                        title="toy GRPO learning curve")
    print(f"chance baseline: {grpo.chance_baseline(env):.4f}")
    print(f"final-50 accuracy: {result.final_mean_acc(50):.4f}")
    print(f"final-50 tool rate: {result.final_tool_rate(50):.4f}")
    print(f"curve written to {out_dir / 'curve.csv'}")


if __name__ == "__main__":
    main()
