from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import polynomial as P

from heies import cases
from heies.algebraic import (
    SingularSystemError,
    assemble_continuity,
    assemble_coupling,
    assemble_implicit_pipe_identities,
    assemble_power_flow,
    build_and_factorize,
)
from heies.dtseries import evaluate
from heies.network import Bus, ElectricNetwork, HeatNetwork, HeatNode, Pipe
from heies.residuals import algebraic_residuals
from heies.sas import AdaptiveConfig, layout_for, run_window, steady_state_init
from heies.system import CoupledSystem, var


def pipe(pid, a, b, length=100.0):
    return Pipe(pid, a, b, length, 0.03, 960.0, 4182.0, 0.2, 1.0)


@pytest.fixture(scope="module")
def four_node():
    system = cases.four_node_system()
    cfg = AdaptiveConfig()
    state = steady_state_init(system, cfg)
    lay = layout_for(system, cfg)
    return system, state, lay


def block_coefficient(block, series, k):
    """k-th coefficient of every block row by explicit Cauchy products."""
    out = np.zeros(len(block))
    for r, c, u, v in zip(block.row, block.coef, block.u, block.v):
        if u is None:
            out[r] += c if k == 0 else 0.0
        elif v is None:
            out[r] += c * series[u][k]
        else:
            out[r] += c * sum(series[u][i] * series[v][k - i] for i in range(k + 1))
    return out


def test_registry_is_square(four_node):
    system, _, lay = four_node
    index = system.index
    assert len(index.y) == len(index.rows) == 22
    assert len(set(index.unknowns)) == len(index.unknowns)
    assert not set(index.y) & set(index.w)
    assert lay.table.matrix(lay.slot_values(four_node[1].values)).shape == (22, 22)


def test_four_node_continuity_rows(four_node):
    block = assemble_continuity(four_node[0])
    assert block.labels == ["continuity[1]", "continuity[2]", "continuity[3]", "continuity[4]"]


def test_single_pipe_continuity():
    system = cases.single_pipe_system()
    block = assemble_continuity(system)
    m = {var("m", system.heat.pipes[0].id): [3.0, -0.5]}
    src, load = (n.id for n in system.heat.nodes)
    # the injected flow at the source and the drawn flow at the load both equal m
    series = dict(m, **{var("min", src): [3.0, -0.5], var("min", load): [3.0, -0.5]})
    for k in range(2):
        assert np.allclose(block_coefficient(block, series, k), 0.0)


@st.composite
def trees(draw):
    n = draw(st.integers(2, 7))
    edges = [(draw(st.integers(0, i - 1)), i) for i in range(1, n)]
    kinds = ["Slack"] + [draw(st.sampled_from(["Load", "Source"])) for _ in range(1, n)]
    flows = draw(st.lists(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
                          min_size=2 * n, max_size=2 * n))
    return kinds, edges, flows


def _node(i, kind):
    if kind == "Slack":
        return HeatNode(str(i), kind, supply_temperature=80.0)
    if kind == "Source":
        return HeatNode(str(i), kind, supply_temperature=80.0, power=1e5)
    return HeatNode(str(i), kind, return_temperature=50.0, power=1e5)


@settings(max_examples=40)
@given(trees())
def test_tree_injections_sum_to_zero(tree):
    kinds, edges, flows = tree
    nodes = [_node(i, k) for i, k in enumerate(kinds)]
    pipes = [pipe(f"p{j}", str(a), str(b)) for j, (a, b) in enumerate(edges)]
    system = CoupledSystem(HeatNetwork(nodes, pipes))
    heat = system.heat
    block = assemble_continuity(system)
    m = np.array(flows[: len(heat.pipes)])
    # expanded junctions balance through their implicit pipe
    for i, n in enumerate(heat.nodes):
        if n.kind.name == "INTERMEDIATE":
            j = next(j for j, p in enumerate(heat.pipes) if p.implicit and heat.V[i, j])
            others = [c for c in range(len(heat.pipes)) if c != j]
            m[j] = -(heat.V[i, others] @ m[others]) / heat.V[i, j]
    series = {var("m", p.id): m[j] for j, p in enumerate(heat.pipes)}
    for n in heat.nodes:
        series[var("min", n.id)] = np.zeros(3)
    sign = {"SLACK": 1.0, "SOURCE": 1.0, "LOAD": -1.0}
    for k in range(3):
        # each injecting row has a unit min coefficient, so the row value without it fixes min(k)
        rest = block_coefficient(block, series, k)
        total = 0.0
        for i, n in enumerate(heat.nodes):
            if n.kind.name == "INTERMEDIATE":
                assert rest[i] == pytest.approx(0.0, abs=1e-9)
                continue
            min_k = -rest[i] / sign[n.kind.name]
            total += sign[n.kind.name] * min_k
        assert total == pytest.approx(0.0, abs=1e-9)


def test_tree_has_no_loop_rows():
    system = cases.single_pipe_system()
    assert not any(r.startswith("loop") for r in system.index.rows)


def test_loop_row_at_first_order(four_node):
    system, state, lay = four_node
    S0 = lay.slot_values(state.values)
    A = lay.table.matrix(S0).toarray()
    row = system.index.rows.index("loop[0]")
    K = np.array([p.resistance for p in system.heat.pipes])
    m0 = np.array([state.values[var("m", p.id)] for p in system.heat.pipes])
    expected = np.array([1, -1, 1, -1]) * K * 2 * m0
    assert np.allclose(A[row, :4], expected, rtol=1e-14)
    assert not A[row, 4:].any()


def test_loop_second_order_rhs_matches_convolution(four_node):
    system, state, lay = four_node
    table = lay.table
    rng = np.random.default_rng(3)
    S = np.zeros((3, len(lay.slots)))
    S[0] = lay.slot_values(state.values)
    S[1] = rng.normal(size=len(lay.slots))
    row = system.index.rows.index("loop[0]")
    K = np.array([p.resistance for p in system.heat.pipes])
    L = system.heat.L[0]
    m1 = S[1, :4]
    # with Y(2) = 0 the only surviving product is m(1) m(1)
    assert table.residual(S, 2)[row] == pytest.approx(L @ (K * m1 * m1), rel=1e-12)
    full = [P.polymul(S[:2, j], S[:2, j])[2] for j in range(4)]
    assert table.residual(S, 2)[row] == pytest.approx(L @ (K * np.array(full)), rel=1e-12)


def test_single_inflow_mixing_copies_outlet():
    system = cases.single_pipe_system(heat_transfer=0.3)
    cfg = AdaptiveConfig(K=5)
    state = steady_state_init(system, cfg)
    w = run_window(system, state, 60.0, cfg)
    load = system.heat.nodes[1].id
    pid = system.heat.pipes[0].id
    assert np.allclose(w.coefficients_of(var("ts", load)), w.coefficients_of(var("tout_s", pid)),
                       rtol=1e-12, atol=1e-15)


def test_junction_temperature_is_mean_of_equal_inflows(four_node):
    system, state, lay = four_node
    table = lay.table
    slot = lay.slot
    rng = np.random.default_rng(7)
    S = np.zeros((4, len(lay.slots)))
    S[0] = lay.slot_values(state.values)
    S[:, slot["m[p1]"]] = S[:, slot["m[p2]"]] = [5.0, 0.3, -0.1, 0.02]
    for name in ("tout_s[p1]", "tout_s[p2]"):
        S[:, slot[name]] = rng.normal(80, 1, size=4)
    row = system.index.rows.index("supply_mix[3]")
    for k in range(4):
        S[k, slot["ts[3]"]] = 0.5 * (S[k, slot["tout_s[p1]"]] + S[k, slot["tout_s[p2]"]])
        assert table.residual(S, k)[row] == pytest.approx(0.0, abs=1e-12)


def test_power_row_with_zero_base_flow(four_node):
    system, state, lay = four_node
    slot = lay.slot
    S = np.zeros((2, len(lay.slots)))
    S[0] = lay.slot_values(state.values)
    S[0, slot["min[3]"]] = 0.0
    S[1, slot["min[3]"]] = 0.7
    S[1, slot["phi[3]"]] = 1234.0
    S[1, slot["ts[3]"]] = 2.0
    cp = system.heat.heat_capacity
    row = system.index.rows.index("power[3]")
    ts0, tr0 = S[0, slot["ts[3]"]], S[0, slot["tr[3]"]]
    assert lay.table.residual(S, 1)[row] == pytest.approx(1234.0 - cp * 0.7 * (ts0 - tr0), rel=1e-12)


def test_three_bus_power_flow_rows(four_node):
    block = assemble_power_flow(four_node[0])
    assert len(block) == 7
    assert sum(lab.startswith("magnitude") for lab in block.labels) == 1


def test_flat_start_pv_row(four_node):
    system, state, lay = four_node
    values = dict(state.values, **{"e[b1]": 1.0, "f[b1]": 0.0})
    A = lay.table.matrix(lay.slot_values(values)).toarray()
    row = system.index.rows.index("magnitude[b1]")
    y = system.index.y
    assert A[row, y.index("e[b1]")] == 2.0 and A[row, y.index("f[b1]")] == 0.0
    assert np.count_nonzero(A[row]) == 1


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_power_flow_matches_complex_expansion(seed):
    rng = np.random.default_rng(seed)
    g, b = rng.uniform(0.5, 5), rng.uniform(-20, -2)
    G = np.array([[g, -g], [-g, g]])
    B = np.array([[b, -b], [-b, b]])
    net = ElectricNetwork((Bus("a", "Slack"), Bus("c", "PQ", p=-0.1)), G, B)
    block = assemble_power_flow(SimpleNamespace(electric=net))
    K = 3
    series = {}
    for bus in ("a", "c"):
        for fam in ("e", "f", "p", "q"):
            series[var(fam, bus)] = np.pad(rng.normal(size=2), (0, K - 1))
    V = [series[f"e[{i}]"] + 1j * series[f"f[{i}]"] for i in ("a", "c")]
    Y = G + 1j * B
    for k in range(K + 1):
        got = block_coefficient(block, series, k)
        for i, bus in enumerate(("a", "c")):
            current = sum(Y[i, j] * V[j] for j in range(2))
            s = P.polymul(V[i], np.conj(current))
            s = np.pad(s, (0, K + 1))[k]
            assert got[i] == pytest.approx(s.real - series[f"p[{bus}]"][k], abs=1e-12)
            assert got[2 + i] == pytest.approx(s.imag - series[f"q[{bus}]"][k], abs=1e-12)


def test_coupling_rows(four_node):
    system = four_node[0]
    block = assemble_coupling(system)
    steam, gas = system.couplings
    phi1 = np.array([2e6, 3e4, -50.0])
    p1 = -phi1 / steam.Z
    p1[0] += steam.eta_e * steam.F_in
    p3 = np.array([0.05, 1e-3, 2e-5])
    series = {"phi[1]": phi1, "p[b1]": p1, "p[b3]": p3, "phi[2]": gas.c_m1 * p3}
    for k in range(3):
        assert np.allclose(block_coefficient(block, series, k), 0.0, atol=1e-12)


def _compound_system():
    nodes = [
        HeatNode("s", "Slack", supply_temperature=85.0),
        HeatNode("c", "Load", return_temperature=50.0, power=2e5),
        HeatNode("e", "Load", return_temperature=50.0, power=1e5),
    ]
    return CoupledSystem(HeatNetwork(nodes, [pipe("a", "s", "c"), pipe("b", "c", "e")]))


def test_compound_node_adds_two_rows_and_unknowns():
    system = _compound_system()
    block = assemble_implicit_pipe_identities(system)
    assert len(block) == 2
    assert sum(n.startswith("tout_") for n in system.index.y) == 2
    assert len(system.index.rows) == len(system.index.y)
    assert len(assemble_implicit_pipe_identities(cases.four_node_system())) == 0


def test_identities_hold_after_solve():
    system = _compound_system()
    cfg = AdaptiveConfig(K=4)
    state = steady_state_init(system, cfg)
    w = run_window(system, state, 30.0, cfg)
    imp = [p for p in system.heat.pipes if p.implicit][0]
    assert np.allclose(w.coefficients_of(var("tout_s", imp.id)), w.coefficients_of(var("ts", imp.from_node)),
                       rtol=1e-12, atol=1e-14)
    assert np.allclose(w.coefficients_of(var("tout_r", imp.id)), w.coefficients_of(var("tr", imp.to_node)),
                       rtol=1e-12, atol=1e-14)


def test_factorization_solves_back(four_node):
    _, state, lay = four_node
    A = lay.table.matrix(lay.slot_values(state.values))
    wm = build_and_factorize(A, lay.table.labels)
    rhs = np.random.default_rng(1).normal(size=22)
    y = wm.solve(rhs)
    # componentwise: rows mix SI heat terms with per-unit power terms
    backward = np.abs(A @ y - rhs) / (abs(A) @ np.abs(y) + np.abs(rhs))
    assert backward.max() <= 1e-12
    sparse = build_and_factorize(A, lay.table.labels, sparse_threshold=1)
    assert sparse.sparse and np.allclose(sparse.solve(rhs), y, rtol=1e-10)


def test_zero_flow_loop_is_singular(four_node):
    _, state, lay = four_node
    values = dict(state.values, **{var("m", f"p{i}"): 0.0 for i in range(1, 5)})
    with pytest.raises(SingularSystemError) as info:
        build_and_factorize(lay.table.matrix(lay.slot_values(values)), lay.table.labels)
    assert info.value.label == "loop[0]"


def test_redundant_rows_are_flagged():
    A = np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]])
    from scipy import sparse
    with pytest.raises(SingularSystemError) as info:
        build_and_factorize(sparse.csr_matrix(A), ("a", "b", "c"))
    assert info.value.label in ("a", "b")


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_order_k_rows_are_affine_with_fixed_matrix(seed, k):
    system = cases.four_node_system()
    lay = layout_for(system, AdaptiveConfig())
    table = lay.table
    rng = np.random.default_rng(seed)
    S = rng.normal(1.0, 0.5, size=(4, len(lay.slots)))
    A = table.matrix(S[0]).toarray()
    y = rng.normal(size=table.n_unknowns)
    base = S.copy()
    base[k, : table.n_unknowns] = 0.0
    with_y = base.copy()
    with_y[k, : table.n_unknowns] = y
    lhs = table.residual(with_y, k) - table.residual(base, k)
    assert np.allclose(lhs, A @ y, rtol=1e-10, atol=1e-10 * np.abs(A).sum(axis=1).max())
    # higher-order grid and driver coefficients only enter the right-hand side
    S2 = S.copy()
    S2[1:, table.n_unknowns:] += rng.normal(size=(3, len(lay.slots) - table.n_unknowns))
    assert np.array_equal(table.matrix(S2[0]).toarray(), A)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_series_residual_matches_pointwise_residual(seed, tau):
    # quadratic series padded to order 4 keep every product exact
    system = cases.four_node_system()
    lay = layout_for(system, AdaptiveConfig())
    table = lay.table
    rng = np.random.default_rng(seed)
    S = np.zeros((5, len(lay.slots)))
    S[0] = rng.uniform(1, 3, size=len(lay.slots))
    S[1:3] = rng.normal(0, 0.2, size=(2, len(lay.slots)))
    series = sum(table.residual(S, k) * tau ** k for k in range(5))
    values = dict(zip(lay.slots, evaluate(S, tau)))
    direct = algebraic_residuals(system, values)
    assert direct.labels == table.labels
    assert np.allclose(series, direct.residual, rtol=1e-10, atol=1e-10 * direct.scale.max())


def test_solved_orders_satisfy_rows(four_node):
    system, state, lay = four_node
    cfg = AdaptiveConfig()
    w = run_window(system, state, 120.0, cfg)
    table = lay.table
    scale = table.term_scale(np.abs(w.S).max(axis=0))
    for k in range(w.S.shape[0]):
        assert np.all(np.abs(table.residual(w.S, k)) <= 1e-10 * scale)
