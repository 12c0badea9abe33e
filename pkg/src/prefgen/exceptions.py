"""Exception hierarchy shared by all pipeline stages."""


class PrefgenError(Exception):
    """Base class for every error raised by prefgen."""


class EmptyDatasetError(PrefgenError, ValueError):
    pass


class DataIntegrityError(PrefgenError, ValueError):
    pass


class DimensionMismatchError(PrefgenError, ValueError):
    pass


class SingleClassError(PrefgenError, ValueError):
    pass


class DegenerateVicinityError(PrefgenError, ValueError):
    """Every target label had an empty hard vicinity; kappa is too small."""


class LabelRangeError(PrefgenError, ValueError):
    pass


class ConfigError(PrefgenError, ValueError):
    pass


class DependencyError(PrefgenError, RuntimeError):
    def __init__(self, stage, missing):
        self.stage = stage
        self.missing = missing
        super().__init__(f"stage {stage!r} requires {missing!r} to run first")
