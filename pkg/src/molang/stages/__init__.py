from os import listdir
from os.path import basename, dirname, splitext

__all__ = [
    splitext(basename(f))[0]
    for f in listdir(dirname(__file__))
    if not f.startswith("__") and f.endswith(".py")
]
