"""Exception types shared across the package.

Each class carries the process exit code the CLI maps it to: validation
problems exit 2, size-guard trips exit 3, out-of-range parameters exit 4.
"""


class BmLabError(Exception):
    exit_code = 1


class ValidationError(BmLabError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class TooLarge(BmLabError):
    """An exact computation was requested beyond its size guard."""

    exit_code = 3


class ParameterRange(BmLabError):
    """A parameter is outside the range the construction supports."""

    exit_code = 4


class EmptyNeighborhood(ValidationError):
    def __init__(self, vertex):
        self.vertex = vertex
        super().__init__(f"vertex {vertex!r} has no edges")


class SupportMismatch(ValidationError):
    def __init__(self, query, detail=""):
        self.query = query
        msg = f"matching support for query {query!r} does not equal its neighborhood"
        super().__init__(msg + (f": {detail}" if detail else ""))


class MassNotOne(ValidationError):
    def __init__(self, context, total):
        self.context = context
        self.total = total
        super().__init__(f"probability masses for {context} sum to {total!r}, expected 1")


class NonMonotoneWeights(ValidationError):
    def __init__(self, position):
        self.position = position
        super().__init__(f"slot weights increase at position {position}")


class NoPositiveAdvertiser(ValidationError):
    def __init__(self, query):
        self.query = query
        super().__init__(f"no advertiser values query {query!r} positively")


class ZeroDensity(ValidationError):
    def __init__(self, value):
        self.value = value
        super().__init__(f"density is zero at {value!r}; virtual value undefined")


class NoRoot(ValidationError):
    def __init__(self, detail=""):
        super().__init__("virtual value has no sign change on the search interval"
                         + (f" ({detail})" if detail else ""))


class Uncoverable(ValidationError):
    def __init__(self, query):
        self.query = query
        super().__init__(f"query {query!r} is not covered by any candidate keyword")


class NotSingleSlot(ValidationError):
    def __init__(self):
        super().__init__("operation requires a single ad slot (all weights beyond the first must be 0)")


class UnboundedSupport(ValidationError):
    def __init__(self, context):
        super().__init__(f"distribution for {context} has unbounded support")


class DomainError(ValidationError):
    def __init__(self, detail):
        super().__init__(detail)


class EmptyStrings(ValidationError):
    def __init__(self):
        super().__init__("similarity of two empty strings is undefined")
