"""Default English stopword list used when building vocabularies.

Kept deliberately small (function words only); pass a custom file to the
vocabulary builder for anything domain specific.
"""

DEFAULT_STOPWORDS = frozenset(
    """
    a an and are as at be been but by for from had has have he her his i if
    in into is it its of on or she so that the their them then there these
    they this to was we were what when which while who will with you your
    """.split()
)


def load_stopwords(path=None) -> frozenset:
    """One word per line; blank lines ignored. None returns the default set."""
    if path is None:
        return DEFAULT_STOPWORDS
    with open(path, "r", encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip())
