"""Walk through the ball and hyperboloid primitives on a few points.

Run with ``python3 demos/geometry_tour.py``.
"""

import numpy as np

from hysurv import geometry as geo
from hysurv.losses import entailment_penalty, exterior_angle, half_aperture

c = 1.0
v = np.array([0.3, 0.4])
x = geo.exp_map0(v, c)
print("tangent", v, "-> ball", x, "-> back", geo.log_map0(x, c))

# distances grow without bound as points approach the boundary
for r in (0.5, 0.9, 0.99, 0.999):
    print(f"d(0, {r}) = {float(geo.geodesic_distance(np.zeros(2), np.array([r, 0.0]), c)):.4f}")

# nearly flat: exp_map0 is almost the identity
print("c=1e-9:", geo.exp_map0(v, 1e-9))

a, b = np.array([0.1, 0.2]), np.array([-0.3, 0.05])
print("a (+) b =", geo.mobius_add(a, b, c), " b (+) a =", geo.mobius_add(b, a, c))

# a general point sits inside the cone of a nearer-origin point on the same ray
general = geo.lift_to_lorentz(np.array([0.3, 0.1]), c)
for name, q in (("same ray", np.array([0.6, 0.2])), ("off axis", np.array([0.2, 0.5]))):
    specific = geo.lift_to_lorentz(q, c)
    ext = float(exterior_angle(general, specific, c))
    aper = float(half_aperture(general, c, 0.1))
    pen = float(entailment_penalty(general, specific, c, 0.1))
    print(f"{name}: ext={ext:.3f} aperture={aper:.3f} penalty={pen:.3f}")
