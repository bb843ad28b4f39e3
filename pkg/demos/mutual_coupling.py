"""Mutual coupling vs element spacing on a 64-element linear RIS.

For each spacing the dipole Z-parameters are converted to S-parameters and
the spectral efficiency of a 16-antenna receiver is optimized with and
without knowledge of S. The SE is always evaluated on the coupled channel.
"""

from dataclasses import replace

from riscalib.experiments import bundled_scenarios, load_scenario
from riscalib.experiments.runner import coupling_matrix
from riscalib.geometry import ArrayLayout
from riscalib.linklevel import spectral_efficiency

scn = load_scenario(bundled_scenarios()["fig5"])
cfg = scn.coupling
spec = replace(scn.signal, bandwidth_hz=cfg["se_bandwidth_hz"], n_subcarriers=1, tx_power_dbm=cfg["se_tx_power_dbm"])
lam = spec.wavelength

print(f"{'spacing':>9} {'SE known S':>11} {'SE S ignored':>13}")
for frac in (2, 8, 32, 128):
    S = coupling_matrix(scn, 1 / frac)
    ris = scn.ris.with_(layout=ArrayLayout(1, 64, lam / frac), coupling=S)
    known = spectral_efficiency(scn.ue, scn.anchor, ris, spec, S_hat=S)
    blind = spectral_efficiency(scn.ue, scn.anchor, ris, spec, S_hat=None)
    print(f"  lam/{frac:<4d} {known.se:11.2f} {blind.se:13.2f}")
