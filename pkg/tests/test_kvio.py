import pytest

from cshalo.kvio import config_hash, dumps_kv, parse_kv, read_kv, write_kv


def test_roundtrip(tmp_path):
    data = {"a": 1, "b": 0.1, "c": (1.0, 2.5), "d": "text"}
    p = write_kv(tmp_path / "x.txt", data, comment="header")
    back = read_kv(p)
    assert back == {"a": "1", "b": "0.1", "c": "1.0,2.5", "d": "text"}
    assert p.read_text().startswith("# header\n")


def test_parse_comments_and_errors():
    assert parse_kv("# c\n\nx = 1  # trailing\n") == {"x": "1"}
    with pytest.raises(ValueError, match="expected key=value"):
        parse_kv("novalue\n")
    with pytest.raises(ValueError, match="empty key"):
        parse_kv("=3\n")


def test_invalid_key():
    with pytest.raises(ValueError):
        dumps_kv({"a=b": 1})


def test_hash_is_order_independent():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16
