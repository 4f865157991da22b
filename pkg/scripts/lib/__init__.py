# si29-decoupling lib package
__version__ = "0.1.0"
