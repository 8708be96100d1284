"""Finite-time escape certificate for a supercritical emissivity."""
import json

from twolayer_ebm.asymptotics import blow_up_certificate, mu_star
from twolayer_ebm.model import ModelParams


def main():
    p = ModelParams(epsilon_a=2.5)
    print("mu* = %.6f" % mu_star(p))
    cert = blow_up_certificate(p, (250.0, 300.0))
    print(json.dumps(cert.to_dict(), indent=2))

    # the comparison slope is derived for lam = 0; with lam > 0 the
    # certificate is still computed but need not hold
    c1 = blow_up_certificate(p.replace(lam=1.0), (250.0, 300.0))
    print("lam=1: comparison holds:", c1.comparison_holds, "valid:", c1.valid)


if __name__ == "__main__":
    main()
