"""Compare tool-use rates with and without the tool-use reward term.

Trains the toy policy over several seeds twice, once with the 0.5 bonus for
valid frame selection and once without, and prints per-seed and mean
final-window tool rates.

    python3 scripts/reward_ablation.py --seeds 5 --steps 300
"""

import argparse

import numpy as np

from vtagent import grpo


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--env-frames", type=int, default=8)
    parser.add_argument("--vocab", type=int, default=6)
    parser.add_argument("--window", type=int, default=50)
    args = parser.parse_args()

    vocab = tuple(chr(ord("a") + i) for i in range(args.vocab))
    rates_on, rates_off = [], []
    print(f"{'seed':>4}  {'tool_rate(on)':>13}  {'tool_rate(off)':>14}")
    for seed in range(args.seeds):
        env = grpo.make_env(args.env_frames, vocab, np.random.default_rng(100 + seed))
        on = grpo.train([env], grpo.TrainConfig(steps=args.steps, seed=seed,
                                                tool_reward=0.5))
        off = grpo.train([env], grpo.TrainConfig(steps=args.steps, seed=seed,
                                                 tool_reward=0.0))
        r_on = on.final_tool_rate(args.window)
        r_off = off.final_tool_rate(args.window)
        rates_on.append(r_on)
        rates_off.append(r_off)
        print(f"{seed:>4}  {r_on:>13.4f}  {r_off:>14.4f}")
    print(f"{'mean':>4}  {np.mean(rates_on):>13.4f}  {np.mean(rates_off):>14.4f}")


if __name__ == "__main__":
    main()
