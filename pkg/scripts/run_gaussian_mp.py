"""Mass-preserving Gaussian ring registration: stationary versus nt=1."""
from _bench import run

if __name__ == "__main__":
    run("gaussian_mp", {"stationary": {"nt": 0}, "nt1": {"nt": 1}}, __doc__)
