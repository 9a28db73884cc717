"""C and the number-difference variance as the zones shrink.

Compares the Monte Carlo sweep with the box-integrated prediction for the
same source, and shows that sub-shot-noise suppression and the violation
move in opposite directions.
"""

from cshalo import HaloGeometry, SourceParams, generate_dataset
from cshalo.cstest import sweep_M
from cshalo.oracle import predict_sweep

params = SourceParams()
sweep = sweep_M(generate_dataset(HaloGeometry(), params))
pred = predict_sweep(params)

print(f"{'M':>4} {'C_opp':>8} {'err':>7} {'model':>8} {'C_nbr':>8} {'err':>7} {'V':>7}")
for r, model in zip(sweep.rows, pred.C_opp):
    print(f"{r.M:4d} {r.opposite.mean:8.4f} {r.opposite.stderr:7.4f} {model:8.4f} "
          f"{r.neighbor.mean:8.4f} {r.neighbor.stderr:7.4f} {r.V_opp:7.4f}")
