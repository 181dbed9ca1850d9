"""
Likelihood coding of source directions
======================================

"""

import numpy as np

from sslkit.coding import decode, encode, top_n

# one source: a Gaussian bump of width 8 degrees centred on the source
o = encode([37])
print('peak %.3f at %d deg, value 8 deg away %.3f'
      % (o.max(), o.argmax() - 180, o[37 + 8 + 180]))

# several sources add bumps; the vector is not a distribution
o = encode([-40, 40, 170])
print('sum of values %.1f, decoded %s' % (o.sum(), decode(o)))

# the bump wraps around -180 / 180
print('decode(encode([179, -171])) ->', decode(encode([179, -171])))

# bumps combine by their maximum, so two sources only merge once they sit
# inside the 8 degree peak neighbourhood
for gap in (4, 7, 8, 12):
    print('gap %2d deg -> %s' % (gap, decode(encode([0, gap]))))

# the threshold trades detections against false alarms
noisy = np.clip(encode([-90, 30]) * np.array([0.9]) +
                0.3 * np.random.default_rng(1).random(360) ** 8, 0, 1)
for xi in (0.2, 0.5, 0.8, 0.95):
    print('xi %.2f -> %s' % (xi, decode(noisy, xi=xi)))

# with a known source count, take the highest peaks instead
print('top 2:', top_n(noisy, 2))
