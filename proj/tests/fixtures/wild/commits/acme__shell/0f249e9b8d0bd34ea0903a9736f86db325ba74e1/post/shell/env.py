import os


def home():
    # resolve the home directory
    return os.path.expanduser("~")
