"""Dark-state laser cooling of trapped ions."""
__version__ = "0.1.0"
