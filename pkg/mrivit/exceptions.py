"""mrivit custom exceptions."""


class DimensionException(ValueError):
    pass


class ContractException(ValueError):
    pass


class NonFiniteException(ValueError):
    pass


class ImageFormatException(ValueError):
    pass


class MissingImageException(ValueError):
    pass


class ImageSizeException(ValueError):
    pass


class LayoutException(ValueError):
    pass


class SplitException(ValueError):
    pass


class CheckpointFormatException(ValueError):
    pass


class ConfigMismatchException(ValueError):
    pass


class MissingFieldException(ValueError):
    pass


class UnexpectedFieldException(ValueError):
    pass


class ImproperlyConfigured(ValueError):
    pass


class TrainingDivergedException(ValueError):
    pass
