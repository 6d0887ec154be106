"""Exception types raised across the package."""


class StyleForgeError(Exception):
    """Base class for all runtime errors raised by styleforge."""


class MissingTensor(StyleForgeError):
    def __init__(self, name):
        super().__init__(f"missing tensor {name!r}")
        self.name = name


class ShapeMismatch(StyleForgeError):
    pass


class ImageTooSmall(StyleForgeError):
    pass


class ChannelMismatch(StyleForgeError):
    pass


class InvalidSpec(StyleForgeError):
    pass


class FASpecMismatch(StyleForgeError):
    pass


class UntrainedModel(StyleForgeError):
    pass


class EmptyDataset(StyleForgeError):
    pass


class NonFiniteLoss(StyleForgeError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step
        self.value = value


class EmptyInput(StyleForgeError):
    pass


class DimensionMismatch(StyleForgeError):
    pass


class CheckpointMismatch(StyleForgeError):
    pass
