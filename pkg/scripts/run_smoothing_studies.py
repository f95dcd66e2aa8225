"""Convergence studies for both regularization schemes.

OU scheme on a Gaussian target (errors against the raw solution decay
like 1/n) and density truncation on a quartic well (harsh rows with
n <= 3 may be flagged; the tail of the sequence decays).  Tables are
written as CSV under out/studies/.
"""
from pathlib import Path

from mongelab import (
    GaussianSpace,
    SolveConfig,
    convergence_study,
    gaussian_target,
    quartic_well_target,
)


def main():
    out = Path("out/studies")
    out.mkdir(parents=True, exist_ok=True)

    space = GaussianSpace.tensor_hermite(1, 40)
    table = convergence_study(space, gaussian_target([0.3], 1.3), "ou",
                              [1, 2, 4, 8, 16, 32, 64], SolveConfig(degree=4))
    (out / "ou_gaussian.csv").write_text(table.to_csv(), encoding="utf-8")
    print("OU scheme, gaussian(m=0.3, sigma=1.3), reference = raw solve")
    print(table.to_csv())

    space_q = GaussianSpace.tensor_hermite(1, 30)
    table = convergence_study(space_q, quartic_well_target(0.05, 0.0), "truncation",
                              [2, 3, 4, 6, 8, 12], SolveConfig(degree=6, max_iters=3000))
    (out / "truncation_quartic.csv").write_text(table.to_csv(), encoding="utf-8")
    print("truncation scheme, quartic-well(a=0.05, b=0.0), reference = raw solve")
    print(table.to_csv())


if __name__ == "__main__":
    main()
