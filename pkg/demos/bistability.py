"""Equilibria of the default scenario, a greenhouse jump and a hysteresis loop."""
import numpy as np

from twolayer_ebm.equilibria import find_equilibria
from twolayer_ebm.model import ModelParams
from twolayer_ebm.sensitivity import greenhouse_jump, hysteresis_loop


def main():
    p = ModelParams()
    print("equilibria at eps_a = %.2f" % p.epsilon_a)
    for e in find_equilibria(p):
        print("  %-12s T_a=%8.3f K  T_s=%8.3f K  %s"
              % (e.eq_class.value, e.t_a, e.t_s, e.stability.verdict.value))

    # jump needs lam > 0 for a nonzero atmospheric response
    j = greenhouse_jump(p.replace(lam=1.0), 0.62, 0.70)
    print("jump 0.62 -> 0.70: T_s %.3f -> %.3f K (rate identity error %.1e)"
          % (j.old.t_s, j.new.t_s, j.rate_identity_error))

    path = np.concatenate([np.linspace(0.2, 1.0, 41), np.linspace(1.0, 0.2, 41)[1:]])
    h = hysteresis_loop(p, path)
    for ev in h.jumps:
        print("  jump between eps_a=%.3f and %.3f" % ev.between)
    print("hysteresis width:", h.width)


if __name__ == "__main__":
    main()
