def get(cfg, key):
    value = cfg[key]
    return value
