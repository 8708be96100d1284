"""Sign structure of N* across emissivities and the critical bracket."""
from twolayer_ebm.asymptotics import bracket_epsilon_a0, n_root, n_star_min, n_star_sign_changes


def main():
    print("root of N: %.7f" % n_root())
    for eps in (0.5, 1.0, 1.5, 1.99, 1.9902, 1.995):
        print("eps_a=%-7g min N*=%+.3e sign changes=%d"
              % (eps, n_star_min(eps), n_star_sign_changes(eps)))
    print("eps_a0 bracket:", bracket_epsilon_a0())


if __name__ == "__main__":
    main()
