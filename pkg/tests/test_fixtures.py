import os

import pytest

from secwit.fixtures import SPECS, WITNESS_KINDS, fixture_names, load_fixture, write_fixture
from secwit.props import parse_property
from secwit.secir import parse_program
from secwit.witness import format_witness, parse_witness


def test_names():
    assert fixture_names() == tuple(SPECS)
    assert len(WITNESS_KINDS) == 7 and "dead_store_elimination" not in WITNESS_KINDS


@pytest.mark.parametrize("name", fixture_names())
def test_files_reload_to_the_same_objects(name, tmp_path):
    fx = load_fixture(name)
    paths = write_fixture(name, str(tmp_path))
    d = tmp_path / name
    assert parse_program((d / "source.sec").read_text()) == fx.source
    assert parse_program((d / "target.sec").read_text()) == fx.target
    prop = parse_property((d / "property.prop").read_text(), str(d))
    assert prop.prefix == fx.prop.prefix and prop.buffer_bound == fx.prop.buffer_bound
    assert prop.attack == fx.prop.attack
    assert [a.name for a in prop.automata] == [os.path.splitext(f)[0] for f in fx.prop.files]
    if fx.witness is None:
        assert not (d / "witness.wit").exists()
    else:
        assert format_witness(parse_witness((d / "witness.wit").read_text())) == format_witness(fx.witness)
    assert all(os.path.exists(p) for p in paths)


def test_unknown_fixture():
    with pytest.raises(KeyError, match="unknown fixture 'nope'"):
        load_fixture("nope")
