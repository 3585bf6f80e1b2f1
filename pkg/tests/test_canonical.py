import json

from hypothesis import given
from hypothesis import strategies as st

from careledger.canonical import b64u_decode, b64u_encode, canonical_bytes, digest_of

json_scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(min_value=-(2**53), max_value=2**53),
    st.text(max_size=40),
)
json_objects = st.recursive(
    json_scalars,
    lambda children: st.one_of(
        st.lists(children, max_size=4),
        st.dictionaries(st.text(max_size=10), children, max_size=4),
    ),
    max_leaves=20,
)


def test_canonical_is_key_sorted_and_compact():
    assert canonical_bytes({"b": 1, "a": [1, 2]}) == b'{"a":[1,2],"b":1}'


def test_canonical_independent_of_insertion_order():
    one = {"x": 1, "y": {"b": 2, "a": 3}}
    two = {"y": {"a": 3, "b": 2}, "x": 1}
    assert canonical_bytes(one) == canonical_bytes(two)


def test_canonical_preserves_non_ascii():
    assert "é".encode("utf-8") in canonical_bytes({"name": "café"})


@given(json_objects)
def test_canonical_round_trips_through_json(obj):
    assert json.loads(canonical_bytes(obj).decode("utf-8")) == obj


@given(json_objects)
def test_digest_is_deterministic(obj):
    assert digest_of(obj) == digest_of(obj)
    assert len(digest_of(obj)) == 64


@given(st.binary(max_size=200))
def test_b64u_round_trip(data):
    encoded = b64u_encode(data)
    assert "=" not in encoded
    assert b64u_decode(encoded) == data
