"""Disc-to-C registration: stationary versus nt=2 time-dependent velocity."""
from _bench import run

if __name__ == "__main__":
    run("cshape", {"stationary": {"nt": 0}, "nt2": {"nt": 2}}, __doc__)
