"""Traffic-signal control: intersection dynamics, exact MDP solvers and a from-scratch DQN."""

__version__ = "0.1.0"
