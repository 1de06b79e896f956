import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robobox.ingest import DepthExceeded, flatten, lookup_path, stream_prefix


def oracle_flatten(payload, prefix):
    """Independent iterative flattener: explicit work stack, sorted at the end.

    Shares only the contract with the implementation under test: leaves
    become prefix/<path>, list elements use index segments, nulls drop.
    """
    leaves = {}
    stack = [(prefix, payload)]
    while stack:
        path, node = stack.pop()
        if isinstance(node, dict):
            for key, child in node.items():
                stack.append((path + "/" + str(key), child))
        elif isinstance(node, (list, tuple)):
            for i in range(len(node)):
                stack.append((path + "/" + str(i), node[i]))
        elif node is None:
            continue
        else:
            leaves[path] = node
    return {k: leaves[k] for k in sorted(leaves)}


def test_pose_message_unrolls_to_seven_leaves():
    pose = {
        "position": {"x": 1.0, "y": 2.0, "z": 0.0},
        "orientation": {"x": 0.0, "y": 0.0, "z": 0.0, "w": 1.0},
    }
    flat = flatten(pose, "ros_pose")
    assert flat == {
        "ros_pose/orientation/w": 1.0,
        "ros_pose/orientation/x": 0.0,
        "ros_pose/orientation/y": 0.0,
        "ros_pose/orientation/z": 0.0,
        "ros_pose/position/x": 1.0,
        "ros_pose/position/y": 2.0,
        "ros_pose/position/z": 0.0,
    }
    assert len(flat) == 7
    assert list(flat) == sorted(flat)


def test_single_leaf():
    assert flatten({"a": 5}, "p") == {"p/a": 5}


def test_list_elements_use_index_segments():
    assert flatten({"a": [1, 2]}, "p") == {"p/a/0": 1, "p/a/1": 2}


def test_null_leaves_dropped_and_counted():
    dropped = []
    flat = flatten({"a": None, "b": 1}, "p", on_drop=dropped.append)
    assert flat == {"p/b": 1}
    assert dropped == ["p/a"]


def test_depth_limit():
    node = 1
    for _ in range(40):
        node = {"n": node}
    with pytest.raises(DepthExceeded):
        flatten(node, "p")


def random_tree(rng, depth):
    if depth == 0 or rng.random() < 0.3:
        return rng.choice(
            [
                rng.uniform(-100, 100),
                rng.randint(-1000, 1000),
                rng.random() < 0.5,
                "s" + str(rng.randint(0, 99)),
                None,
            ]
        )
    if rng.random() < 0.3:
        return [random_tree(rng, depth - 1) for _ in range(rng.randint(0, 4))]
    return {
        f"k{i}": random_tree(rng, depth - 1)
        for i in range(rng.randint(1, 4))
    }


def test_flatten_equals_oracle_on_1000_random_trees():
    rng = random.Random(42)
    started = time.monotonic()
    for _ in range(1000):
        tree = random_tree(rng, rng.randint(1, 6))
        assert flatten(tree, "root", on_drop=lambda p: None) == oracle_flatten(tree, "root")
    assert time.monotonic() - started < 5.0


json_leaves = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(min_value=-(10**6), max_value=10**6),
    st.floats(allow_nan=False, allow_infinity=False),
    st.text(alphabet="abcxyz_059", max_size=8),
)
json_trees = st.recursive(
    json_leaves,
    lambda children: st.one_of(
        st.lists(children, max_size=4),
        st.dictionaries(st.from_regex(r"[a-z0-9_]{1,6}", fullmatch=True), children, max_size=4),
    ),
    max_leaves=25,
)


@settings(max_examples=200, deadline=None)
@given(json_trees)
def test_flatten_matches_oracle_property(tree):
    assert flatten(tree, "p", on_drop=lambda path: None) == oracle_flatten(tree, "p")


@settings(max_examples=200, deadline=None)
@given(json_trees)
def test_flatten_injective_on_paths(tree):
    # distinct leaves land on distinct names: key count equals oracle leaf count
    flat = flatten(tree, "p", on_drop=lambda path: None)
    assert len(flat) == len(oracle_flatten(tree, "p"))
    assert all(key == "p" or key.startswith("p/") for key in flat)


def test_stream_prefix_folds_topic_into_token():
    assert stream_prefix("ros", "pose") == "ros_pose"
    assert stream_prefix("ros", "/scan_front") == "ros_scan_front"
    assert stream_prefix("zyre", "GROUP-chat") == "zyre_group_chat"


def test_lookup_path():
    payload = {"header": {"stamp": 1500000000.25}, "ranges": [1.0, 2.0]}
    assert lookup_path(payload, "header/stamp") == 1500000000.25
    assert lookup_path(payload, "ranges/1") == 2.0
    assert lookup_path(payload, "header/missing") is None
    assert lookup_path(payload, "ranges/9") is None
