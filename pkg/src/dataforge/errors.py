"""Exception types shared across the engine."""


class DataForgeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidConfiguration(DataForgeError):
    """A layout, policy, or config value is out of its legal range."""


class OutOfRange(DataForgeError):
    """A token id or code falls outside its codebook / vocabulary range."""


class InvalidInput(DataForgeError):
    """An operand violates the operation's precondition."""


class MalformedStream(DataForgeError):
    """A token stream cannot be parsed back into modality blocks.

    `position` is the index of the first offending token in the stream.
    """

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class InsufficientData(DataForgeError):
    """Not enough training frames for the requested codebook size."""


class SampleTooLong(DataForgeError):
    """A sample exceeds the packing window; the caller must pre-chunk it.

    `index` identifies the sample within the input stream.
    """

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class InvalidSpec(DataForgeError):
    """A supervision or mixing spec is internally inconsistent."""


class InvalidState(DataForgeError):
    """A deserialized scheduler state fails its consistency checks."""


class InvalidEntry(DataForgeError):
    """A manifest entry is missing metadata required by its filters."""


class NoFramesFit(DataForgeError):
    """The context budget cannot accommodate even one wrapped image."""


class ExhaustedSource(DataForgeError):
    """A sample queue with a nonzero mixing ratio ran dry.

    `source_type` names the exhausted queue.
    """

    def __init__(self, message: str, source_type: str):
        super().__init__(message)
        self.source_type = source_type


class ChecksumFailure(DataForgeError):
    """A shard record failed its CRC check.

    `offset` is the byte offset of the corrupt record in the file.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset
