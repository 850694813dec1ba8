def get(cfg, key, default=None):
    value = cfg.get(key, default)
    return value
