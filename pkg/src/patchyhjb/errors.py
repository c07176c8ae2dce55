class PatchyError(Exception):
    """Base class for solver failures."""


class OutOfRegion(PatchyError):
    """A point lies outside the region where the problem data are valid."""


class RestPointError(PatchyError):
    """The origin is not a zero-cost rest point of the problem."""


class RiccatiError(PatchyError):
    """No stabilising solution of the algebraic Riccati equation."""


class AlbrekhtError(PatchyError):
    """The power-series cascade could not be solved at some degree."""

    def __init__(self, message: str, degree: int):
        super().__init__(f"{message} (degree {degree})")
        self.degree = degree


class LyapunovViolation(PatchyError):
    """The local data admit no strictly positive gradient scale or descent direction."""


class StageError(PatchyError):
    """A patch construction stage failed; carries the stage name and patch id."""

    def __init__(self, stage: str, patch_id, cause: BaseException | str):
        super().__init__(f"stage '{stage}' failed at patch {patch_id}: {cause}")
        self.stage = stage
        self.patch_id = patch_id
        self.cause = cause


class GeometryError(PatchyError):
    """Level-curve tracing or patch placement failed."""


class ConfigError(PatchyError):
    """Invalid solver configuration."""
