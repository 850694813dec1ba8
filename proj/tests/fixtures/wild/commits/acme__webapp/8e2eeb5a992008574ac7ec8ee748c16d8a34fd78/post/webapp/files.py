import os

from werkzeug.utils import safe_join


def open_upload(root, name):
    path = safe_join(root, name)
    if path is None:
        raise PermissionError(name)
    return open(path, "rb")
