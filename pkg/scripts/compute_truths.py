"""True estimand values for the simulation DGP, by quadrature and in closed form."""

from fractions import Fraction

from tevim.simulation import true_values

# moments of U(-1,1): E X^2 = 1/3, E X^4 = 1/5, E X^6 = 1/7
ATE = Fraction(7, 5) / 3 + Fraction(25, 27)
THETA1 = Fraction(1, 7) + Fraction(49, 25) / 5 - (Fraction(7, 5) / 3) ** 2
THETA2 = Fraction(25, 9) ** 2 * (Fraction(1, 5) - Fraction(1, 9))


def main():
    vte = THETA1 + THETA2
    exact = {"ate": ATE, "vte": vte, "theta1": THETA1, "theta2": THETA2, "psi1": THETA1 / vte, "psi2": THETA2 / vte}
    for points in (1000, 2000):
        tv = true_values(points)
        print(f"quadrature, {points} points per axis")
        for key, value in exact.items():
            q = getattr(tv, key)
            print(f"  {key:>6} = {q:.10f}   exact {float(value):.10f} ({value})   diff {q - float(value):+.1e}")
        print(f"  lambda = {tv.lambda_bound:.10f}")


if __name__ == "__main__":
    main()
