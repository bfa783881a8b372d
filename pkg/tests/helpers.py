"""Small builders shared by analyzer tests."""

from layerscope.analyzers import View, wants_content
from layerscope.imagebuilder import Layer, layer_tar
from layerscope.layer_fs import build_history, extract_entries, squash


def make_history(*layers):
    return build_history(extract_entries(layer_tar(l), i, wants_content) for i, l in enumerate(layers))


def make_view(files=None, symlinks=None, modes=None, layers=()):
    """View of the final filesystem after *layers* plus one layer holding *files*."""
    top = Layer(files=dict(files or {}), symlinks=dict(symlinks or {}), modes=dict(modes or {}))
    history = make_history(*layers, top)
    return View(squash(history), history.contents, history.layer_count - 1)
