"""
Checking the identifying conditions
===================================

Each diagnostic is run once on the default scenario and once on a scenario
built to break it.
"""

import numpy as np

from ivintegral import Distribution, GFamily, build_kernel, draw_sample_set, scenario_s1
from ivintegral.diagnostics import completeness_spectrum, condition5_grid, density_sup_estimate
from ivintegral.solver import assemble_system, make_grid


def spectrum(scenario, seed):
    ss = draw_sample_set(scenario, 100_000, seed)
    grid = make_grid(ss)
    kernel = build_kernel(ss, grid.x_grid)
    return completeness_spectrum(assemble_system(kernel, grid), kernel.stderr * grid.weights)


def show(label, report):
    print(f"{label:38s} {'pass' if report.passed else 'FAIL'}  {report.details}")


s1 = scenario_s1()
show("bounded density, continuous V", density_sup_estimate(s1, 100_000, 1))
show("bounded density, point-mass V",
     density_sup_estimate(scenario_s1(v_dists=(Distribution.point_mass(0.0),)), 10_000, 1))

xs = np.linspace(-2, 2, 5)
show("slope independent of X given Z", condition5_grid(s1, xs, 100_000, 2))
show("slope correlated with V (0.9)", condition5_grid(scenario_s1(u1_v_coupling=0.9), xs, 100_000, 2))

show("completeness, shift instrument", spectrum(s1, 3))
show("completeness, instrument unused", spectrum(scenario_s1(g_family=GFamily("z-free")), 3))
show("completeness, one non-baseline level", spectrum(scenario_s1(z_levels=(0.0, 1.0)), 3))
