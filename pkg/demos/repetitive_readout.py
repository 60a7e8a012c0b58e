"""How much does reading the memory many times help?

Each readout repeat maps the nuclear memory onto the electron and collects a
few hundredths of a photon. Repeats add information until the laser has
repolarized the nucleus (time constant 1.2 ms). After that, extra repeats only
cost time. Even with a perfect memory the gain eventually stalls, because each
record can at best say which of the two states the memory was in.

    python3 demos/repetitive_readout.py
"""

import math

from memspec.readout import ReadoutParams, fisher_information

print("   n   stderr/record (1.2 ms memory)   stderr/record (no repolarization)")
for n in (1, 10, 100, 300, 1000, 3000):
    real = fisher_information(0.5, ReadoutParams(n_repeats=n), n_mc=4000, rng=n)
    ideal = fisher_information(0.5, ReadoutParams(n_repeats=n, repolarization_constant=math.inf))
    print(f"{n:5d}   {1 / math.sqrt(real):10.3f}                      {1 / math.sqrt(ideal):10.3f}")
