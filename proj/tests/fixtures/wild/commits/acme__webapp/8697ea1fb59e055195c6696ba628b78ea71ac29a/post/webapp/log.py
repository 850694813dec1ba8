import logging


def setup(level, name="webapp"):
    logging.basicConfig(level=level)
    return logging.getLogger(name)
