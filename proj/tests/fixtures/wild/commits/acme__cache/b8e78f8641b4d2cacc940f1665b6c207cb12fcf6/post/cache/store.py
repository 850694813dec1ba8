import threading

_lock = threading.Lock()
_data = {}


def refresh(key, loader):
    with _lock:
        value = loader(key)
        _data[key] = value
    return value
