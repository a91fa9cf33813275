"""Exception types shared across the package."""


class OmcError(Exception):
    """Base class for all package errors."""


class InvalidInputError(OmcError, ValueError):
    """Operation received values it cannot process (non-finite, empty, shape mismatch)."""


class InvalidConfigError(OmcError, ValueError):
    """Configuration value or combination is out of contract."""


class CorruptBufferError(OmcError, ValueError):
    """Packed payload bytes are inconsistent with the declared element count/format."""


class CorruptCheckpointError(OmcError, ValueError):
    """Checkpoint stream failed validation. Carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class MissingVariableError(OmcError, KeyError):
    """Requested variable name is not present in the store."""


class SkippedClient(OmcError):
    """Client cannot participate this round (e.g. empty data shard)."""


class DivergedClientError(OmcError, RuntimeError):
    """Client training produced a non-finite loss."""

    def __init__(self, round_index: int, client_index: int):
        super().__init__(
            f"client {client_index} diverged in round {round_index} (non-finite loss)"
        )
        self.round_index = round_index
        self.client_index = client_index


class RoundFailedError(OmcError, RuntimeError):
    """No client in the round produced a usable update."""
