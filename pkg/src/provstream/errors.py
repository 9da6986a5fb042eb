"""Exception types shared across the package."""


class ProvStreamError(Exception):
    """Base class for all provstream errors."""


class UnknownObject(ProvStreamError):
    def __init__(self, object_id):
        super().__init__(f"object {object_id} is not live")
        self.object_id = object_id


class InvalidRelation(ProvStreamError):
    pass


class MalformedEvent(ProvStreamError):
    pass


class ParseError(ProvStreamError):
    pass


class OrderingViolation(ProvStreamError):
    def __init__(self, message, edge_id=None):
        super().__init__(message)
        self.edge_id = edge_id


class StaleElement(ProvStreamError):
    pass


class DuplicateName(ProvStreamError):
    pass


class LabelBitsExhausted(ProvStreamError):
    pass


class ForeignBit(ProvStreamError):
    pass


class KeyMissing(ProvStreamError):
    pass


class VerifyFailed(ProvStreamError):
    def __init__(self, node_id):
        super().__init__(f"hash chain verification failed at {node_id}")
        self.node_id = node_id


class UnresolvedSelector(ProvStreamError):
    pass
