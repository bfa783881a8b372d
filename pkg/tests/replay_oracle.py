"""Reference layer replay on a real directory tree, used as an oracle for squash()."""

import io
import os
import shutil
import tarfile


def _remove(path):
    if os.path.islink(path) or os.path.isfile(path):
        os.remove(path)
    elif os.path.isdir(path):
        shutil.rmtree(path)


def replay(layer_tars, root):
    for data in layer_tars:
        with tarfile.open(fileobj=io.BytesIO(data)) as tar:
            members = tar.getmembers()
            for m in members:
                head, base = os.path.split(m.name)
                if base == ".wh..wh..opq":
                    target = os.path.join(root, head)
                    if os.path.isdir(target):
                        for child in os.listdir(target):
                            _remove(os.path.join(target, child))
                elif base.startswith(".wh."):
                    _remove(os.path.join(root, head, base[4:]))
            for m in members:
                base = os.path.basename(m.name.rstrip("/"))
                if base.startswith(".wh."):
                    continue
                dest = os.path.join(root, m.name.rstrip("/"))
                if m.isdir():
                    if not os.path.isdir(dest):
                        _remove(dest)
                        os.makedirs(dest)
                    continue
                _remove(dest)
                os.makedirs(os.path.dirname(dest), exist_ok=True)
                if m.issym():
                    os.symlink(m.linkname, dest)
                else:
                    with open(dest, "wb") as fh:
                        fh.write(tar.extractfile(m).read())


def paths(root):
    out = set()
    for dirpath, dirnames, filenames in os.walk(root):
        for name in dirnames + filenames:
            out.add("/" + os.path.relpath(os.path.join(dirpath, name), root))
    return out


DIRS = ("/a", "/b", "/a/c", "/a/c/d")
FILES = tuple(f"{d}/f{i}" for d in ("",) + DIRS for i in range(6))


def random_layers(rng, max_layers=5, max_files=30):
    """Random layer sequence over a fixed universe where names keep their kind across layers."""
    from layerscope.imagebuilder import Layer

    layers = []
    for _ in range(rng.randint(1, max_layers)):
        layer = Layer()
        for path in rng.sample(FILES, rng.randint(0, min(max_files, 8))):
            layer.files[path] = rng.randbytes(rng.randint(0, 16))
        if rng.random() < 0.3:
            layer.dirs.append(rng.choice(DIRS))
        if rng.random() < 0.2:
            layer.symlinks[rng.choice(FILES)] = "/a/f0"
        for path in rng.sample(FILES + DIRS, rng.randint(0, 3)):
            if path not in layer.files and path not in layer.symlinks:
                layer.delete.append(path)
        if rng.random() < 0.25:
            layer.opaque.append(rng.choice(DIRS))
        layers.append(layer)
    return layers
