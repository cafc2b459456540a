import itertools
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

import oracles
from nmrqip.io import TransitionRecord
from nmrqip.levels import (
    AmbiguityWarning,
    ReconstructionError,
    coupling_energy,
    diagram_labels,
    export_dot,
    match_levels,
    parse_dot,
    reconstruct_levels,
    verify_diagram,
)
from nmrqip.spins import SpinModel
from nmrqip.zcosy import PROGRESSIVE, REGRESSIVE, ConnectivityMatrix, extract_connectivity, full_hetzcosy


def pipeline(model, **kw):
    conn = extract_connectivity(full_hetzcosy(model), model.transitions.ids)
    kw.setdefault("coupling_sign", model.system.net_coupling_sign())
    return reconstruct_levels(model.transitions, conn, n_spins=model.system.n_spins, **kw), conn


def assert_matches_truth(diagram, model, tol=1e-6):
    mp = match_levels(diagram, model.transitions)
    assert len(mp) == model.dim
    e = model.eigen.energies
    for a, b in itertools.combinations(mp, 2):
        assert diagram.energies[a] - diagram.energies[b] == pytest.approx(e[mp[a]] - e[mp[b]], abs=tol)


def test_single_transition():
    d = reconstruct_levels([TransitionRecord(1, 42.0, "H")], ConnectivityMatrix((1,), {}))
    assert sorted(d.energies.values()) == [0.0, 42.0]
    assert d.edges == {1: (0, 1)}


def test_strongly_coupled_three_spin_round_trip():
    m = SpinModel(oracles.random_system(np.random.default_rng(3), 3, hetero=False, d_scale=800.0))
    d, _ = pipeline(m, exhaustive=True)
    assert d.n_solutions == 1
    assert_matches_truth(d, m)
    assert verify_diagram(d, m.transitions).ok


def test_placeholder_domains(placeholder):
    d, _ = pipeline(placeholder)
    assert d.n_levels == 32 and len(d.components) == 1
    labels = diagram_labels(d, placeholder.transitions, placeholder.labels)
    groups = d.partition("H")
    assert sorted(len(g) for g in groups) == [16, 16]
    for g in groups:
        assert len({labels[k][0] for k in g}) == 1
    for t, (u, l) in d.edges.items():
        same = labels[u][0] == labels[l][0]
        assert same == (d.species[t] == "H")


def test_mirror_ambiguity_and_resolution():
    m = SpinModel(oracles.random_system(np.random.default_rng(11), 3, hetero=True))
    conn = extract_connectivity(full_hetzcosy(m), m.transitions.ids)
    with pytest.warns(AmbiguityWarning):
        both = reconstruct_levels(m.transitions, conn, exhaustive=True)
    assert both.n_solutions == 2
    sign = m.system.net_coupling_sign()
    right = reconstruct_levels(m.transitions, conn, coupling_sign=sign)
    wrong = reconstruct_levels(m.transitions, conn, coupling_sign=-sign)
    assert_matches_truth(right, m)
    with pytest.raises(ValueError):
        match_levels(wrong, m.transitions)
    mirror = right.mirrored()
    assert np.sign(coupling_energy(mirror)) == -np.sign(coupling_energy(right))
    assert verify_diagram(mirror, m.transitions).ok
    assert mirror.mirrored().energies == pytest.approx(right.energies)
    with pytest.raises(ValueError):
        reconstruct_levels(m.transitions, conn, coupling_sign=2)


def test_verify_flags_and_unassigned():
    m = SpinModel(oracles.random_system(np.random.default_rng(5), 2))
    d, conn = pipeline(m)
    rep = verify_diagram(d, m.transitions)
    assert rep.ok and rep.max_residual <= 1e-9
    recs = [TransitionRecord(t.id, t.freq, t.species) for t in m.transitions]
    recs[0] = TransitionRecord(recs[0].id, recs[0].freq + 2e-6, recs[0].species)
    flagged = verify_diagram(d, recs, tol=1e-6)
    assert [t for t, _ in flagged.flagged] == [recs[0].id] and not flagged.ok
    lone = TransitionRecord(99, 123.0, "F")
    d2 = reconstruct_levels(recs[1:] + [lone], ConnectivityMatrix(tuple(conn.ids) + (99,), conn.entries),
                            tol=1e-3, strict=False)
    assert d2.unassigned == [99]
    assert verify_diagram(d2, recs[1:] + [lone]).unassigned == [99]


def test_inconsistent_connectivity_raises():
    recs = [TransitionRecord(1, 10.0, "H"), TransitionRecord(2, 20.0, "H"), TransitionRecord(3, 35.0, "H")]
    # 1 then 2 then 3 as a ladder forces 3 = 1 + 2 = 30, not 35
    conn = ConnectivityMatrix((1, 2, 3), {(1, 2): PROGRESSIVE, (2, 3): PROGRESSIVE, (1, 3): PROGRESSIVE})
    with pytest.raises(ReconstructionError) as exc:
        reconstruct_levels(recs, conn)
    assert exc.value.consistent_subset


def test_disconnected_components():
    recs = [TransitionRecord(i, f, "H") for i, f in ((1, 10.0), (2, 20.0), (3, 5.0), (4, 7.0))]
    conn = ConnectivityMatrix((1, 2, 3, 4), {(1, 2): PROGRESSIVE, (3, 4): REGRESSIVE})
    d = reconstruct_levels(recs, conn)
    assert len(d.components) == 2 and d.n_levels == 6
    for comp in d.components:
        assert 0.0 in [d.energies[k] for k in comp]
    assert verify_diagram(d, recs).ok


def test_gauge_and_determinism():
    m = SpinModel(oracles.random_system(np.random.default_rng(8), 3))
    d1, _ = pipeline(m)
    d2, _ = pipeline(m)
    assert d1.to_record() == d2.to_record()
    shifted = d1.shifted(123.5)
    assert verify_diagram(shifted, m.transitions).max_residual == pytest.approx(
        verify_diagram(d1, m.transitions).max_residual, abs=1e-9)


def test_dot_export_round_trip(placeholder):
    d = reconstruct_levels([TransitionRecord(1, 42.0, "H")], ConnectivityMatrix((1,), {}))
    nodes, edges = parse_dot(export_dot(d))
    assert len(nodes) == 2 and edges == {1: (0, 1)}
    full, _ = pipeline(placeholder)
    text = export_dot(full, diagram_labels(full, placeholder.transitions, placeholder.labels))
    nodes, edges = parse_dot(text)
    assert nodes == pytest.approx({k: float(f"{e:.9g}") for k, e in full.energies.items()})
    assert edges == full.edges
    assert text.count("subgraph cluster_") == 2


@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**31), st.integers(2, 4))
def test_round_trip_property(seed, n):
    m = SpinModel(oracles.random_system(np.random.default_rng(seed), n))
    if not oracles.transition_graph_connected(m) or m.system.net_coupling_sign() == 0:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("error", AmbiguityWarning)
        d, _ = pipeline(m, exhaustive=True)
    assert d.n_solutions == 1
    assert_matches_truth(d, m)
    assert np.sign(coupling_energy(d)) == m.system.net_coupling_sign()
