"""Rock-paper-scissors: full extra-gradient reaches the uniform equilibrium.

Run with ``python3 tutorials/rps_equilibrium.py``.
"""
import numpy as np

from dseg import Schedule, SolverConfig, nash_error, rock_paper_scissors, run


def main():
    game = rock_paper_scissors()
    print("payoff of player 0 against player 1:\n", game.payoff[:3, 3:])

    # the center is already the equilibrium, so start from a random point
    cfg = SolverConfig(method="eg", sampler="full", schedule=Schedule.constant(0.5),
                       k_max=40_000, checkpoints=8, init="random", seed=1)
    trace = run(game, None, cfg)
    for k, err in zip(trace.k, trace.err):
        print(f"k={k:6d}  Nash error of the average {err:.3e}")
    print("averaged strategy:", np.round(trace.final_theta, 4))

    # player-sampled version: one player per step, same gradient budget
    dseg = SolverConfig(method="dseg", sampler="uniform:1", schedule=Schedule.constant(0.2),
                        k_max=40_000, checkpoints=4, init="random", seed=1)
    trace = run(game, None, dseg)
    print(f"DSEG (b=1) final error {trace.final_err:.3e}")
    print("error at the exact equilibrium:", nash_error(game, None, np.full(6, 1 / 3)).total)


if __name__ == "__main__":
    main()
