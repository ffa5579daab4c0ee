class LayoutPriorError(Exception):
    """Base class for every error raised by this package."""


class EmptyCorpus(LayoutPriorError, ValueError):
    """An aggregate was requested over zero items."""
