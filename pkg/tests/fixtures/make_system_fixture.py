"""Regenerate system_nominal.json: A and b at one fixed state, scalar by scalar.

Written against the process descriptions with plain floats and ``math`` only,
so it shares no code with the vectorised model.  Run from the repository
root:  python3 tests/fixtures/make_system_fixture.py
"""
import json
import math
from pathlib import Path

HERE = Path(__file__).parent
REGISTRY = HERE.parents[1] / "src" / "diffgreenhouse" / "parameters.json"

p = {e["name"]: e["nominal"] for e in json.loads(REGISTRY.read_text())["parameters"]}

# state, controls, weather
T_air, VP, CO2, T_can, T_24 = 19.0, 1500.0, 650.0, 20.5, 18.0
C_buf, C_leaf, C_fruit, N_fruit, HW, HC = 2500.0, 1400.0, 6000.0, 3.0, 0.1, 1.5
u_pipe, u_vent, u_fog, u_co2, u_harv = 45.0, 0.2, 0.3, 0.5, 1.0
T_out, VP_out, CO2_out, I_glob = 8.0, 900.0, 410.0, 300.0


def svp(t):
    return 610.94 * math.exp(17.625 * t / (t + 243.04))


def softplus(z):
    return math.log1p(math.exp(z)) if z < 30 else z + math.log1p(math.exp(-z))


a = p["sla"] * C_leaf
lai = a - 0.05 * softplus((a - p["lai_max"]) / 0.05)
intercept = 1.0 - math.exp(-p["k_ext"] * lai)
q = p["f_leak"] + p["f_vent_max"] * u_vent
heating = p["k_pipe"] if u_pipe > T_air else 0.0
s_can = svp(T_can)
ds_can = s_can * 17.625 * 243.04 / (T_can + 243.04) ** 2
offset = s_can - ds_can * T_can
cond = p["k_cond"] * 50.0 * softplus((VP - svp(T_out)) / 50.0)
photo = p["eps_photo"] * I_glob * intercept * CO2 / (CO2 + p["k_co2"])
growth = max(1.0 + p["g_slope"] * (T_24 - 20.0), 0.0)
resp = p["q10"] ** ((T_24 - 25.0) / 10.0)
conv = p["k_can"] * lai
trans = p["k_trans"] * lai
loss = p["k_cov"] + 1200.0 * q
harvest = p["k_harvest"] * u_harv

A = [[0.0] * 11 for _ in range(11)]
b = [0.0] * 11
A[0][0] = -(heating + loss + conv) / p["cap_air"]
A[0][3] = conv / p["cap_air"]
b[0] = (heating * u_pipe + p["eta_glob"] * I_glob + loss * T_out) / p["cap_air"]
A[1][1] = -(trans + q) / p["h_air"]
A[1][3] = trans * ds_can / p["h_air"]
b[1] = (trans * offset + p["cap_fog"] * u_fog - cond + q * VP_out) / p["h_air"]
A[2][2] = -q / p["h_air"]
b[2] = (p["cap_co2inj"] * u_co2 - photo + q * CO2_out) / p["h_air"]
A[3][0] = conv / p["cap_can"]
A[3][1] = p["lambda_lat"] * trans / p["cap_can"]
A[3][3] = -(conv + p["lambda_lat"] * trans * ds_can) / p["cap_can"]
b[3] = (p["eta_can"] * I_glob * intercept - p["lambda_lat"] * trans * offset) / p["cap_can"]
A[4][3] = 1.0 / 86400.0
A[4][4] = -1.0 / 86400.0
A[5][5] = -(growth * (p["rg_leaf"] + p["rg_fruit"]) + p["r_maint"] * resp)
b[5] = p["c_photo"] * photo
A[6][5] = growth * p["rg_leaf"]
A[6][6] = -p["r_maint_leaf"] * resp
A[7][5] = growth * p["rg_fruit"]
A[7][7] = -(p["r_maint_fruit"] * resp + harvest)
A[8][8] = -(p["r_set"] * growth / p["n_max"] + harvest)
b[8] = p["r_set"] * growth
A[9][7] = harvest / p["c_fw"]
A[10][8] = harvest

doc = {
    "state": [T_air, VP, CO2, T_can, T_24, C_buf, C_leaf, C_fruit, N_fruit, HW, HC],
    "controls": [u_pipe, u_vent, u_fog, u_co2, u_harv],
    "weather": [T_out, VP_out, CO2_out, I_glob],
    "A": A,
    "b": b,
}
(HERE / "system_nominal.json").write_text(json.dumps(doc, indent=1) + "\n")
