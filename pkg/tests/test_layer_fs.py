import io
import random
import tarfile

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layerscope.imagebuilder import Layer, layer_tar
from layerscope.layer_fs import (Action, Kind, MalformedTarError, PathEscapeError, build_history,
                                 extract_entries, normalize_path, squash)

from replay_oracle import paths as oracle_paths
from replay_oracle import random_layers, replay


def history_of(*layers, capture=None):
    return build_history(extract_entries(layer_tar(l), i, capture) for i, l in enumerate(layers))


def regular(view):
    return {p for p, e in view.items() if e.kind is not Kind.DIRECTORY}


def test_normalize_path():
    assert normalize_path("./usr/bin/../lib/x") == "/usr/lib/x"
    assert normalize_path("usr//share/") == "/usr/share"
    with pytest.raises(PathEscapeError):
        normalize_path("../etc/passwd")


def test_classification_and_digests():
    delta = extract_entries(layer_tar(Layer(files={"/x": b"hi"}, symlinks={"/y": "x"}, hardlinks={"/z": "/x"},
                                            delete=["/gone"], opaque=["/d"])), 0)
    kinds = {e.path: e.kind for e in delta.entries}
    assert kinds["/x"] is Kind.REGULAR and kinds["/y"] is Kind.SYMLINK and kinds["/z"] is Kind.HARDLINK
    assert kinds["/.wh.gone"] is Kind.WHITEOUT and kinds["/d/.wh..wh..opq"] is Kind.OPAQUE
    by_path = {e.path: e for e in delta.entries}
    assert by_path["/z"].digest == by_path["/x"].digest
    assert by_path["/.wh.gone"].whiteout_target == "/gone"
    assert by_path["/d/.wh..wh..opq"].whiteout_target == "/d"


def test_capture_keeps_selected_content_only():
    delta = extract_entries(layer_tar(Layer(files={"/keep": b"a", "/drop": b"b"})), 0,
                            lambda e, d: d if e.path == "/keep" else None)
    assert list(delta.contents.values()) == [b"a"]


def test_truncated_tar_is_malformed():
    data = layer_tar(Layer(files={"/x": b"0" * 4096}))
    with pytest.raises(MalformedTarError):
        extract_entries(data[:700], 0)


def test_escaping_member_rejected():
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w") as tar:
        tar.addfile(tarfile.TarInfo("../../evil"), io.BytesIO(b""))
    with pytest.raises(PathEscapeError):
        extract_entries(buf.getvalue(), 0)


def test_whiteout_deletes_subtree():
    h = history_of(Layer(files={"/a/b/c": "1", "/a/d": "2", "/e": "3"}), Layer(delete=["/a"]))
    assert regular(squash(h)) == {"/e"}
    assert [ev.action for ev in h.events["/a/b/c"]] == [Action.ADDED, Action.DELETED]
    assert h.events["/a/b/c"][-1].layer == 1


def test_opaque_hides_lower_contents_but_keeps_new():
    h = history_of(Layer(files={"/d/old": "1", "/d/sub/x": "2"}), Layer(files={"/d/new": "3"}, opaque=["/d"]))
    assert regular(squash(h)) == {"/d/new"}
    assert "/d" in squash(h)


def test_whiteout_then_readd_in_same_layer():
    h = history_of(Layer(files={"/f": "old"}), Layer(files={"/f": "new"}, delete=["/f"]))
    assert [ev.action for ev in h.events["/f"]] == [Action.ADDED, Action.DELETED, Action.ADDED]


def test_modification_records_previous_digest():
    h = history_of(Layer(files={"/f": "a"}), Layer(files={"/f": "b"}), Layer(files={"/f": "b"}))
    first, second, third = h.events["/f"]
    assert second.action is Action.MODIFIED and second.previous_digest == first.entry.digest
    assert not second.content_identical and third.content_identical


def test_directory_reappearing_is_not_modified():
    h = history_of(Layer(files={"/usr/x": "1"}), Layer(files={"/usr/y": "2"}))
    assert [ev.action for ev in h.events["/usr"]] == [Action.ADDED]


def test_file_replacing_directory_hides_children():
    h = history_of(Layer(files={"/a/x": "1"}), Layer(files={"/a": "now a file"}))
    view = squash(h)
    assert "/a/x" not in view and view["/a"].kind is Kind.REGULAR


def test_noop_whiteout_is_recorded():
    h = history_of(Layer(files={"/x": "1"}), Layer(delete=["/never"]))
    assert h.noop_whiteouts == [(1, "/.wh.never")]


def test_hardlink_to_lower_layer_inherits_digest():
    h = history_of(Layer(files={"/x": "1"}), Layer(hardlinks={"/y": "/x"}))
    view = squash(h)
    assert view["/y"].digest == view["/x"].digest


def test_iter_views_are_cumulative():
    h = history_of(Layer(files={"/a": "1"}), Layer(files={"/b": "2"}), Layer(delete=["/a"]))
    snapshots = [(layer, regular(dict(v))) for layer, v in h.iter_views()]
    assert snapshots == [(0, {"/a"}), (1, {"/a", "/b"}), (2, {"/b"})]


def test_squash_equals_last_view():
    h = history_of(Layer(files={"/a/1": "x", "/b": "y"}), Layer(delete=["/a"], files={"/c": "z"}))
    *_, (_, last) = h.iter_views()
    assert dict(sorted(last.items())) == squash(h)


def test_out_of_order_deltas_rejected():
    with pytest.raises(ValueError):
        build_history([extract_entries(layer_tar(Layer(files={"/x": "1"})), 1)])


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_squash_matches_filesystem_replay(tmp_path_factory, seed):
    layers = random_layers(random.Random(seed))
    tars = [layer_tar(l) for l in layers]
    root = tmp_path_factory.mktemp("replay")
    replay(tars, str(root))
    assert set(squash(build_history(extract_entries(t, i) for i, t in enumerate(tars)))) == oracle_paths(str(root))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_history_events_alternate(seed):
    """Per path: never deleted twice in a row, never added while alive."""
    layers = random_layers(random.Random(seed))
    h = build_history(extract_entries(layer_tar(l), i) for i, l in enumerate(layers))
    for path, events in h.events.items():
        alive = False
        for ev in events:
            if ev.action is Action.ADDED:
                assert not alive, path
                alive = True
            elif ev.action is Action.DELETED:
                assert alive, path
                alive = False
            else:
                assert alive, path
        assert [ev.layer for ev in events] == sorted(ev.layer for ev in events)
