import threading

_lock = threading.Lock()
_data = {}


def refresh(key, loader):
    value = loader(key)
    _data[key] = value
    return value
