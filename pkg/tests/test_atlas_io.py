import json

import pytest

from parakin.atlas_io import CorruptAtlas, VersionError, export_atlas, import_atlas, read_atlas, write_atlas


@pytest.fixture(scope="module")
def text(atlas):
    return export_atlas(atlas)


def test_round_trip_equal(atlas, text):
    back = import_atlas(text)
    assert back == atlas
    assert export_atlas(back) == text


def test_counts_survive(text):
    back = import_atlas(text)
    assert len(back.aspects) == 8
    assert len(back.regions) == 2


def test_header_and_determinism(atlas, text):
    assert text.startswith("atlas-v1\n")
    assert export_atlas(atlas) == text
    doc = json.loads(text.split("\n", 1)[1])
    assert "time" not in json.dumps(doc["metadata"])


def test_file_round_trip(atlas, tmp_path):
    path = tmp_path / "atlas.txt"
    write_atlas(atlas, path)
    assert read_atlas(path) == atlas


def test_truncated_file(text):
    with pytest.raises(CorruptAtlas):
        import_atlas(text[: len(text) // 2])


def test_missing_header(text):
    with pytest.raises(CorruptAtlas):
        import_atlas(text.split("\n", 1)[1])


def test_other_version(text):
    with pytest.raises(VersionError):
        import_atlas(text.replace("atlas-v1", "atlas-v2", 1))


def test_missing_key(text):
    doc = json.loads(text.split("\n", 1)[1])
    del doc["aspects"]
    with pytest.raises(CorruptAtlas):
        import_atlas("atlas-v1\n" + json.dumps(doc))


def test_bad_leaf_row(text):
    doc = json.loads(text.split("\n", 1)[1])
    doc["trees"][0]["leaves"][0] = doc["trees"][0]["leaves"][0][:3]
    with pytest.raises(CorruptAtlas):
        import_atlas("atlas-v1\n" + json.dumps(doc))
