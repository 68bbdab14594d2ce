import json
import math

import numpy as np
import pytest

from rifl.utils import StrEnum, canonical_dumps, flatten_dict, format_number


def test_dict_flatten():
    result = flatten_dict({"a": "foo", "b": {"c": "bar", "d": {"e": "baz"}}})
    expected = {"a": "foo", "b__c": "bar", "b__d__e": "baz"}
    assert result == expected


def test_flatten_replication_record():
    record = {"replication": 3, "methods": {"rifl": {"covered": True, "length": 0.2}}}
    assert flatten_dict(record) == {
        "replication": 3,
        "methods__rifl__covered": True,
        "methods__rifl__length": 0.2,
    }


def test_format_number_round_trips():
    for value in (0.1, 1 / 3, 1e-300, -2.5e17, 123456789.123456789):
        assert float(format_number(value)) == value
    assert format_number(0.5) == "0.5"


def test_canonical_dumps():
    text = canonical_dumps({"b": [1, 2.5, None], "a": {"z": True, "y": "é\n"}})
    assert text == '{"a":{"y":"é\\n","z":true},"b":[1,2.5,null]}'
    assert canonical_dumps(np.array([[1.0, 2.0]])) == "[[1,2]]"
    assert canonical_dumps(np.float64(0.1)) == format_number(0.1)


def test_canonical_dumps_matches_json_for_strings():
    value = {"q": 'say "hi"\\', "ctl": "\x01\t", "k": ["ü", 0.1, -0.0]}
    text = canonical_dumps(value)
    assert json.loads(text) == {"ctl": "\x01\t", "k": ["ü", 0.1, 0.0], "q": 'say "hi"\\'}
    assert '"\\u0001\\t"' in text
    assert "0.10000000000000001" in text
    assert list(json.loads(text)) == ["ctl", "k", "q"]
    with pytest.raises(ValueError, match="reserved"):
        canonical_dumps({"x": "\ue000"})


@pytest.mark.parametrize("bad", [math.nan, math.inf, {1: "x"}, object()])
def test_canonical_dumps_rejects(bad):
    with pytest.raises((TypeError, ValueError)):
        canonical_dumps(bad)


def test_str_enum():
    class Color(StrEnum):
        RED = "red"

    assert str(Color.RED) == "red"
    assert Color("red") is Color.RED
    assert f"{Color.RED}" == "red"
