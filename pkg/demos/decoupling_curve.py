"""Electron flips broaden the 13C line; fast pi trains average them away.

The 13C spin precesses at a frequency set by the electron state. Random
electron flips (T1 = 1.4 ms) make that frequency jump, giving a line about
1/(pi T1) wide. Inverting the electron with a pi train helps only once the
train is fast compared with the 136 kHz hyperfine splitting; then the nucleus
sees the average frequency and the line narrows to the record limit.

This runs the reduced curve (M = 1000 trajectories, about two minutes on one
core):

    python3 demos/decoupling_curve.py
"""

from memspec.config import preset
from memspec.runner import run_nmr_curve

curve, _, _ = run_nmr_curve(preset("suppfig6_curve"), workers=1)
print("decoupling   FWHH")
for f, pf in curve.points:
    print(f"{f / 1e3:8.0f} kHz  {pf.fwhh:6.1f} +- {pf.fwhh_err:4.1f} Hz")
