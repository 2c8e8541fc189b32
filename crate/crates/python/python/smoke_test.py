import json
import math

import vqnhe_py as v

h = v.build_model("tfim", 4, "periodic")
e0, psi = v.exact_ground(h)
assert abs(e0 + 5.226251859505506) < 1e-9, e0
assert abs(sum(abs(a) ** 2 for a in psi) - 1.0) < 1e-12

out, phase = v.apply_pauli("X0 Y1 Z2", "011")
assert out == "101" and phase == 1j, (out, phase)

circ = v.ansatz("tfim_qaoa", 4, depth=1)
n_params = json.loads(circ)["n_params"]
amps = v.run_circuit(circ, [0.0] * n_params)
assert all(abs(a - 0.25) < 1e-12 for a in amps)

plan = json.loads(v.plan("X0 Y1", 2))
assert [g["kind"] for g in plan["gates"]] == ["CY", "H"], plan

try:
    v.ansatz("nope", 4)
except ValueError as err:
    assert "nope" in str(err)
else:
    raise AssertionError("expected ValueError")

print(f"vqnhe_py {v.__version__}: smoke test passed (E0 = {e0:.10f})")
