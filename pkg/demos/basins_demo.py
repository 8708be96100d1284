"""Basin map of the default scenario compared against the traced separatrix."""
from twolayer_ebm.basins import axis_threshold, band_matches, basin_map, trace_separatrix
from twolayer_ebm.model import ModelParams


def main():
    p = ModelParams()
    for axis in ("horizontal", "vertical"):
        th = axis_threshold(p, axis)
        print("%s threshold: %.6f K (%d bisections)" % (axis, th.value, th.iterations))

    sep = trace_separatrix(p)
    print("separatrix: %d points, closest approach to saddle %.1e K"
          % (len(sep.points), sep.closest_approach))

    bm = basin_map(p, n=128, threads=4)
    print("attractors:", bm.attractors, "unconverged:", bm.n_unconverged)
    print("boundary cells:", int(bm.boundary.sum()),
          "components:", bm.boundary_components())
    print("fraction of boundary within 1.5 cells of separatrix: %.3f" % band_matches(bm, sep))


if __name__ == "__main__":
    main()
