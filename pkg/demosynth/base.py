"""Reportable records and record lists.

Anything demosynth writes to a report (coverage, manifests, evaluation and
ablation results) derives from :class:`DemoSynthObject`, so it can be dumped
with ``summary()`` and printed uniformly.
"""
import logging


class DemoSynthObject():
    """A record that reports a fixed set of attributes. Constructor keyword
    arguments are kept in :attr:`kwargs` for subclasses to read from."""

    #: attributes reported by meta_summary(), set per subclass
    META_ATTRIBUTES = []

    #: reported by every record ahead of META_ATTRIBUTES
    _BASE_ATTRIBUTES = ['object_type']

    def __init__(self, **kwargs):
        self.log = logging.getLogger("{}.{}".format(
            self.__class__.__module__, self.__class__.__name__
        ))
        self.kwargs = kwargs

    @property
    def object_type(self):
        "Returns the name of this object's class"
        return self.__class__.__name__

    @classmethod
    def meta_keys(cls):
        """Returns every reported attribute name, 'object_type' first. Works
        on the class, so CSV headers can be built before any record exists.
        """
        return cls._BASE_ATTRIBUTES + cls.META_ATTRIBUTES

    def meta_summary(self):
        "Returns {attribute: value} for each of meta_keys()"
        return {key: getattr(self, key) for key in self.meta_keys()}

    def summary(self):
        """Returns the JSON-ready form of this record. Subclasses with more
        to report extend the dictionary returned here."""
        return {'meta': self.meta_summary()}

    def __str__(self):
        meta = self.meta_summary()
        lines = [f"{self.object_type}("]
        lines.extend(f"  {key}: {meta[key]}" for key in self.META_ATTRIBUTES)
        lines.append(")")
        return "\n".join(lines)


class DemoSynthObjectList(DemoSynthObject):
    """An ordered collection of records. Supports len(), iteration and
    indexing, and summarizes as the list of its items' summaries."""

    def __init__(self, items=(), **kwargs):
        super(DemoSynthObjectList, self).__init__(**kwargs)
        self._items = list(items)

    @property
    def items(self):
        "Returns the underlying list"
        return self._items

    def summary(self):
        return [item.summary() for item in self.items]

    def extend(self, other):
        "Appends the items of another list of the same type"
        if not isinstance(other, self.__class__):
            raise TypeError(
                f"cannot extend {self.object_type} with {type(other).__name__}")
        self._items.extend(other.items)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, index):
        return self._items[index]

    def __str__(self):
        return f"{self.object_type}(len: {len(self)}, args: {self.kwargs})"
