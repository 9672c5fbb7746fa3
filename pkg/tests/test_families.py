import pytest

from clusterlab.families import UnknownFamilyError, canonical_family, families


def test_canonical_names_map_to_themselves():
    """Goal: every canonical name resolves to itself."""
    for kind in ("intensity", "potential", "size", "component", "radial", "placement", "test_function", "outer"):
        table = families(kind)
        for canonical in set(table.values()):
            assert canonical_family(kind, canonical) == canonical


@pytest.mark.parametrize(
    ("kind", "name", "expected"),
    [
        ("component", "thomas", "gaussian"),
        ("component", "Matern", "uniform_ball"),
        ("component", "wrapped-gaussian", "tangent_gaussian"),
        ("placement", "shift", "translation"),
        ("placement", "Cartan-Hadamard", "geodesic_transport"),
        ("size", "dirac", "fixed"),
        ("potential", "hardcore", "hard_core"),
        ("outer", "laplace", "exp_neg"),
    ],
)
def test_aliases_case_and_hyphens(kind, name, expected):
    """Goal: aliases, mixed case and hyphens all normalize to the canonical name."""
    assert canonical_family(kind, name) == expected


def test_same_alias_in_different_kinds():
    """Goal: 'radial' is its own component family but a placement alias."""
    assert canonical_family("component", "radial") == "radial"
    assert canonical_family("placement", "radial") == "radial_angular"


def test_unknown_family_lists_accepted_names():
    """Goal: an unknown name raises with the kind, the name and the accepted list."""
    with pytest.raises(UnknownFamilyError) as exc:
        canonical_family("component", "cauchy")
    assert exc.value.kind == "component"
    assert exc.value.name == "cauchy"
    assert "gaussian" in str(exc.value)
    assert isinstance(exc.value, KeyError)


def test_unknown_kind():
    """Goal: asking for a kind that does not exist is an error too."""
    with pytest.raises(UnknownFamilyError):
        families("colour")
